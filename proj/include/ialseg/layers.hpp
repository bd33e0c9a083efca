#pragma once

// Stateful layers built on the kernels in ops.hpp. Each layer caches what its
// backward pass needs during forward and accumulates parameter gradients into
// the ParamStore slots it was bound to.

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ialseg/ops.hpp"
#include "ialseg/tensor.hpp"

namespace ialseg {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // subject to L2 regularization
};

/// Named parameters with same-shaped gradient slots. Iteration order is the
/// lexicographic order of names. References returned by add() stay valid for
/// the lifetime of the store.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Shape shape, bool decay) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw Error("duplicate parameter name '" + name + "'");
    it->second.name = name;
    it->second.value = Tensor<T>(shape);
    it->second.grad = Tensor<T>(std::move(shape));
    it->second.decay = decay;
    return it->second;
  }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(T(0));
  }

  std::size_t count() const { return params_.size(); }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<T>> params_;
};

/// Uniform Glorot initialization, bound sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, ConvGeom geom,
         std::mt19937_64& rng, bool decay = true)
      : geom_(geom) {
    w_ = &store.add(name + ".w", Shape{geom.kh, geom.kw, cin, cout}, decay);
    b_ = &store.add(name + ".b", Shape{cout}, false);
    glorot_uniform(w_->value, geom.kh * geom.kw * cin, geom.kh * geom.kw * cout, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    return conv2d_forward(x, w_->value, b_->value, geom_);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    auto g = conv2d_backward(x_, w_->value, dy, geom_);
    w_->grad += g.dw;
    b_->grad += g.db;
    return std::move(g.dx);
  }

  Parameter<T>& weight() { return *w_; }
  Parameter<T>& bias() { return *b_; }
  std::size_t out_channels() const { return w_->value.dim(3); }

 private:
  ConvGeom geom_;
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  Tensor<T> x_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) { return y_ = relu_forward(x); }
  Tensor<T> backward(const Tensor<T>& dy) const { return relu_backward(y_, dy); }

 private:
  Tensor<T> y_;
};

template <typename T>
class BilinearResize {
 public:
  Tensor<T> forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    in_shape_ = x.shape();
    return bilinear_resize_forward(x, out_h, out_w);
  }
  Tensor<T> backward(const Tensor<T>& dy) const { return bilinear_resize_backward(in_shape_, dy); }

 private:
  Shape in_shape_;
};

/// ENet down-sampler: stride-2 3x3 convolution concatenated with 2x2 max pooling.
/// Output has (out_channels) channels, of which in_channels come from the pool.
template <typename T>
class Downsampler {
 public:
  Downsampler() = default;
  Downsampler(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::mt19937_64& rng)
      : cin_(cin) {
    if (cout <= cin) throw Error("downsampler '" + name + "': output channels must exceed input channels");
    conv_ = Conv2d<T>(store, name + ".conv", cin, cout - cin, ConvGeom{3, 3, 2, 1, 1}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.h() % 2 || x.w() % 2) throw Error("downsampler: input size must be even, got " + shape_str(x.shape()));
    in_shape_ = x.shape();
    auto pooled = maxpool2x2_forward(x);
    argmax_ = std::move(pooled.argmax);
    return concat_channels(conv_.forward(x), pooled.y);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    auto [dconv, dpool] = split_channels(dy, dy.c() - cin_);
    Tensor<T> dx = conv_.backward(dconv);
    dx += maxpool2x2_backward(in_shape_, argmax_, dpool);
    return dx;
  }

  Conv2d<T>& conv() { return conv_; }

 private:
  std::size_t cin_ = 0;
  Conv2d<T> conv_;
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// ERFNet residual block of factorized convolutions:
/// 3x1, ReLU, 1x3, ReLU, dilated 3x1, ReLU, dilated 1x3, then identity skip and ReLU.
template <typename T>
class NonBottleneck1D {
 public:
  NonBottleneck1D() = default;
  NonBottleneck1D(ParamStore<T>& store, const std::string& name, std::size_t channels, std::size_t dilation,
                  std::mt19937_64& rng) {
    conv_[0] = Conv2d<T>(store, name + ".conv3x1_1", channels, channels, ConvGeom{3, 1, 1, 1, 1}, rng);
    conv_[1] = Conv2d<T>(store, name + ".conv1x3_1", channels, channels, ConvGeom{1, 3, 1, 1, 1}, rng);
    conv_[2] = Conv2d<T>(store, name + ".conv3x1_2", channels, channels, ConvGeom{3, 1, 1, dilation, 1}, rng);
    conv_[3] = Conv2d<T>(store, name + ".conv1x3_2", channels, channels, ConvGeom{1, 3, 1, 1, dilation}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> t = x;
    for (std::size_t i = 0; i < 3; ++i) t = relu_[i].forward(conv_[i].forward(t));
    t = conv_[3].forward(t);
    t += x;
    return out_.forward(t);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dsum = out_.backward(dy);
    Tensor<T> d = conv_[3].backward(dsum);
    for (std::size_t i = 3; i-- > 0;) d = conv_[i].backward(relu_[i].backward(d));
    d += dsum;
    return d;
  }

  Conv2d<T>& conv(std::size_t i) { return conv_.at(i); }

 private:
  std::array<Conv2d<T>, 4> conv_;
  std::array<ReLU<T>, 3> relu_;
  ReLU<T> out_;
};

/// Pyramid pooling: per bin size, adaptive average pooling, 1x1 projection to
/// C/|bins| channels, bilinear upsampling; all branches concatenated after the input.
template <typename T>
class PyramidPooling {
 public:
  PyramidPooling() = default;
  PyramidPooling(ParamStore<T>& store, const std::string& name, std::size_t channels, std::vector<std::size_t> bins,
                 std::mt19937_64& rng)
      : bins_(std::move(bins)) {
    if (bins_.empty()) throw Error("pyramid pooling needs at least one bin size");
    branch_channels_ = channels / bins_.size();
    if (branch_channels_ == 0) throw Error("pyramid pooling: fewer channels than bins");
    for (std::size_t i = 0; i < bins_.size(); ++i)
      convs_.emplace_back(store, name + ".bin" + std::to_string(bins_[i]), channels, branch_channels_,
                          ConvGeom{}, rng);
    resizes_.resize(bins_.size());
  }

  std::size_t out_channels(std::size_t in_channels) const { return in_channels + bins_.size() * branch_channels_; }

  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape();
    Tensor<T> y = x;
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      Tensor<T> b = convs_[i].forward(adaptive_avg_pool_forward(x, bins_[i]));
      y = concat_channels(y, resizes_[i].forward(b, x.h(), x.w()));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    auto [dx, rest] = split_channels(dy, in_shape_[3]);
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      auto [db, tail] = split_channels(rest, branch_channels_);
      Tensor<T> g = convs_[i].backward(resizes_[i].backward(db));
      dx += adaptive_avg_pool_backward(in_shape_, g);
      rest = std::move(tail);
    }
    return dx;
  }

  Conv2d<T>& conv(std::size_t i) { return convs_.at(i); }

 private:
  std::vector<std::size_t> bins_;
  std::size_t branch_channels_ = 0;
  std::vector<Conv2d<T>> convs_;
  std::vector<BilinearResize<T>> resizes_;
  Shape in_shape_;
};

/// Attention fusion of a spatial and a context feature map of equal spatial size:
/// concatenate, derive a per-channel sigmoid gate from the global average of the
/// concatenation through a 1x1 convolution, rescale, then project with a 1x1 convolution.
template <typename T>
class AttentionFusion {
 public:
  AttentionFusion() = default;
  AttentionFusion(ParamStore<T>& store, const std::string& name, std::size_t spatial_channels,
                  std::size_t context_channels, std::size_t out_channels, std::mt19937_64& rng)
      : spatial_channels_(spatial_channels) {
    const std::size_t c = spatial_channels + context_channels;
    gate_ = Conv2d<T>(store, name + ".gate", c, c, ConvGeom{}, rng, false);
    proj_ = Conv2d<T>(store, name + ".proj", c, out_channels, ConvGeom{}, rng);
  }

  Tensor<T> forward(const Tensor<T>& spatial, const Tensor<T>& context) {
    cat_ = concat_channels(spatial, context);
    gate_out_ = sigmoid_forward(gate_.forward(global_avg_pool_forward(cat_)));
    return proj_.forward(channel_scale_forward(cat_, gate_out_));
  }

  /// Returns gradients for (spatial, context).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
    Tensor<T> dscaled = proj_.backward(dy);
    auto [dcat, dgate] = channel_scale_backward(cat_, gate_out_, dscaled);
    Tensor<T> dpool = gate_.backward(sigmoid_backward(gate_out_, dgate));
    dcat += global_avg_pool_backward(cat_.shape(), dpool);
    return split_channels(dcat, spatial_channels_);
  }

  Conv2d<T>& gate() { return gate_; }
  Conv2d<T>& projection() { return proj_; }

 private:
  std::size_t spatial_channels_ = 0;
  Conv2d<T> gate_, proj_;
  Tensor<T> cat_, gate_out_;
};

}  // namespace ialseg

#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ialseg/layers.hpp"

namespace ialseg {

enum class NetVariant { Erf, BiErf };

inline NetVariant parse_net_variant(const std::string& s) {
  if (s == "erf") return NetVariant::Erf;
  if (s == "bierf") return NetVariant::BiErf;
  throw Error("unknown network variant '" + s + "' (expected erf or bierf)");
}

inline const char* net_variant_name(NetVariant v) { return v == NetVariant::BiErf ? "bierf" : "erf"; }

struct NetworkConfig {
  NetVariant variant = NetVariant::Erf;
  std::size_t height = 64, width = 128;               // context-path input
  std::size_t large_height = 128, large_width = 256;  // bilateral full-resolution input
  std::size_t num_classes = 9;
  std::vector<std::size_t> channels{16, 64};  // one down-sampler per entry
  std::vector<std::size_t> dilations{1, 2, 4};
  std::vector<std::size_t> bins{1, 2, 4};
  std::size_t reweight_kernel = 3;
  std::vector<std::size_t> spatial_channels{16, 32, 64};  // one stride-2 stage per entry
  std::size_t fusion_channels = 64;

  std::size_t encoder_stride() const { return std::size_t{1} << channels.size(); }
  std::size_t spatial_stride() const { return std::size_t{1} << spatial_channels.size(); }
  std::size_t input_height() const { return variant == NetVariant::BiErf ? large_height : height; }
  std::size_t input_width() const { return variant == NetVariant::BiErf ? large_width : width; }

  void validate() const {
    if (num_classes < 1) throw Error("network config: num_classes must be positive");
    if (channels.empty()) throw Error("network config: at least one encoder stage required");
    if (height % encoder_stride() || width % encoder_stride())
      throw Error("network config: context size must be divisible by " + std::to_string(encoder_stride()));
    for (std::size_t b : bins)
      if (b == 0 || b > height / encoder_stride() || b > width / encoder_stride())
        throw Error("network config: pyramid bin " + std::to_string(b) + " exceeds the encoder feature map");
    if (variant == NetVariant::BiErf) {
      if (spatial_channels.empty()) throw Error("network config: spatial path needs at least one stage");
      if (large_height % height || large_width % width || large_height / height != large_width / width)
        throw Error("network config: large input must be a uniform integer multiple of the context input");
      if (large_height % spatial_stride() || large_width % spatial_stride())
        throw Error("network config: large input must be divisible by " + std::to_string(spatial_stride()));
    }
  }
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"variant", net_variant_name(c.variant)},
          {"height", c.height},
          {"width", c.width},
          {"large_height", c.large_height},
          {"large_width", c.large_width},
          {"num_classes", c.num_classes},
          {"channels", c.channels},
          {"dilations", c.dilations},
          {"bins", c.bins},
          {"reweight_kernel", c.reweight_kernel},
          {"spatial_channels", c.spatial_channels},
          {"fusion_channels", c.fusion_channels}};
}

/// Missing keys keep their defaults.
inline NetworkConfig network_config_from_json(const nlohmann::json& j, NetworkConfig c = {}) {
  try {
    if (j.contains("variant")) c.variant = parse_net_variant(j["variant"].get<std::string>());
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("height", c.height);
    get("width", c.width);
    get("large_height", c.large_height);
    get("large_width", c.large_width);
    get("num_classes", c.num_classes);
    get("channels", c.channels);
    get("dilations", c.dilations);
    get("bins", c.bins);
    get("reweight_kernel", c.reweight_kernel);
    get("spatial_channels", c.spatial_channels);
    get("fusion_channels", c.fusion_channels);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed network config: ") + e.what());
  }
  return c;
}

/// Common interface of the segmentation networks: forward to logits at input
/// resolution, backward from logit gradients into the parameter store.
template <typename T>
class SegmentationNet {
 public:
  SegmentationNet(const SegmentationNet&) = delete;
  SegmentationNet& operator=(const SegmentationNet&) = delete;
  virtual ~SegmentationNet() = default;

  virtual Tensor<T> forward(const Tensor<T>& image) = 0;
  /// Accumulates parameter gradients; returns the gradient w.r.t. the input image.
  virtual Tensor<T> backward(const Tensor<T>& dlogits) = 0;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const NetworkConfig& config() const { return config_; }

 protected:
  explicit SegmentationNet(NetworkConfig config) : config_(std::move(config)) { config_.validate(); }

  NetworkConfig config_;
  ParamStore<T> params_;
};

/// Encoder, pyramid pooling and re-weighting convolution shared by both variants.
template <typename T>
class ContextTrunk {
 public:
  ContextTrunk() = default;
  ContextTrunk(ParamStore<T>& store, const NetworkConfig& c, std::mt19937_64& rng) {
    std::size_t cin = 3;
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
      down_.emplace_back(store, "enc.down" + std::to_string(i), cin, c.channels[i], rng);
      cin = c.channels[i];
    }
    down_relu_.resize(down_.size());
    for (std::size_t i = 0; i < c.dilations.size(); ++i)
      blocks_.emplace_back(store, "enc.nb1d" + std::to_string(i), cin, c.dilations[i], rng);
    ppm_ = PyramidPooling<T>(store, "ppm", cin, c.bins, rng);
    const std::size_t k = c.reweight_kernel;
    reweight_ = Conv2d<T>(store, "reweight", ppm_.out_channels(cin), cin, ConvGeom{k, k, 1, 1, 1}, rng);
    out_channels_ = cin;
  }

  std::size_t out_channels() const { return out_channels_; }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> t = x;
    for (std::size_t i = 0; i < down_.size(); ++i) t = down_relu_[i].forward(down_[i].forward(t));
    for (auto& b : blocks_) t = b.forward(t);
    return reweight_relu_.forward(reweight_.forward(ppm_.forward(t)));
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = ppm_.backward(reweight_.backward(reweight_relu_.backward(dy)));
    for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d);
    for (std::size_t i = down_.size(); i-- > 0;) d = down_[i].backward(down_relu_[i].backward(d));
    return d;
  }

 private:
  std::vector<Downsampler<T>> down_;
  std::vector<ReLU<T>> down_relu_;
  std::vector<NonBottleneck1D<T>> blocks_;
  PyramidPooling<T> ppm_;
  Conv2d<T> reweight_;
  ReLU<T> reweight_relu_;
  std::size_t out_channels_ = 0;
};

/// Encoder-decoder network: trunk, 1x1 classifier, bilinear upsampling to input size.
template <typename T>
class ErfPspNet final : public SegmentationNet<T> {
 public:
  ErfPspNet(NetworkConfig c, std::uint64_t seed) : SegmentationNet<T>(std::move(c)) {
    std::mt19937_64 rng(seed);
    trunk_ = ContextTrunk<T>(this->params_, this->config_, rng);
    classifier_ = Conv2d<T>(this->params_, "cls", trunk_.out_channels(), this->config_.num_classes, ConvGeom{}, rng);
  }

  Tensor<T> forward(const Tensor<T>& image) override {
    check_input(image);
    return up_.forward(classifier_.forward(trunk_.forward(image)), image.h(), image.w());
  }

  Tensor<T> backward(const Tensor<T>& dlogits) override {
    return trunk_.backward(classifier_.backward(up_.backward(dlogits)));
  }

 private:
  void check_input(const Tensor<T>& image) const {
    const std::size_t s = this->config_.encoder_stride();
    if (image.rank() != 4 || image.c() != 3 || image.h() % s || image.w() % s)
      throw Error("erf_pspnet: expected N x H x W x 3 input with H, W divisible by " + std::to_string(s) + ", got " +
                  shape_str(image.shape()));
  }

  ContextTrunk<T> trunk_;
  Conv2d<T> classifier_;
  BilinearResize<T> up_;
};

/// Bilateral variant: a downscaled copy of the input feeds the context trunk,
/// the full-resolution input feeds a shallow strided spatial path, and the two
/// meet in an attention fusion at the spatial path's resolution.
template <typename T>
class BiErfPspNet final : public SegmentationNet<T> {
 public:
  BiErfPspNet(NetworkConfig c, std::uint64_t seed) : SegmentationNet<T>(std::move(c)) {
    std::mt19937_64 rng(seed);
    const auto& cfg = this->config_;
    trunk_ = ContextTrunk<T>(this->params_, cfg, rng);
    std::size_t cin = 3;
    for (std::size_t i = 0; i < cfg.spatial_channels.size(); ++i) {
      spatial_.emplace_back(this->params_, "spatial.s" + std::to_string(i), cin, cfg.spatial_channels[i],
                            ConvGeom{3, 3, 2, 1, 1}, rng);
      cin = cfg.spatial_channels[i];
    }
    spatial_relu_.resize(spatial_.size());
    fusion_ = AttentionFusion<T>(this->params_, "fusion", cin, trunk_.out_channels(), cfg.fusion_channels, rng);
    classifier_ = Conv2d<T>(this->params_, "cls", cfg.fusion_channels, cfg.num_classes, ConvGeom{}, rng);
  }

  Tensor<T> forward(const Tensor<T>& image) override {
    const auto& cfg = this->config_;
    const std::size_t factor = cfg.large_height / cfg.height, s = cfg.spatial_stride();
    if (image.rank() != 4 || image.c() != 3 || image.h() % (factor * cfg.encoder_stride()) ||
        image.w() % (factor * cfg.encoder_stride()) || image.h() % s || image.w() % s)
      throw Error("bierf_pspnet: input " + shape_str(image.shape()) + " incompatible with the configured scales");
    Tensor<T> ctx = trunk_.forward(down_.forward(image, image.h() / factor, image.w() / factor));
    Tensor<T> sp = image;
    for (std::size_t i = 0; i < spatial_.size(); ++i) sp = spatial_relu_[i].forward(spatial_[i].forward(sp));
    Tensor<T> ctx_r = ctx_resize_.forward(ctx, sp.h(), sp.w());
    return up_.forward(classifier_.forward(fusion_.forward(sp, ctx_r)), image.h(), image.w());
  }

  Tensor<T> backward(const Tensor<T>& dlogits) override {
    auto [dsp, dctx] = fusion_.backward(classifier_.backward(up_.backward(dlogits)));
    Tensor<T> dimg = down_.backward(trunk_.backward(ctx_resize_.backward(dctx)));
    for (std::size_t i = spatial_.size(); i-- > 0;) dsp = spatial_[i].backward(spatial_relu_[i].backward(dsp));
    dimg += dsp;
    return dimg;
  }

  ContextTrunk<T>& trunk() { return trunk_; }
  AttentionFusion<T>& fusion() { return fusion_; }
  Conv2d<T>& classifier() { return classifier_; }
  Conv2d<T>& spatial_stage(std::size_t i) { return spatial_.at(i); }
  std::size_t spatial_stages() const { return spatial_.size(); }

 private:
  BilinearResize<T> down_;
  ContextTrunk<T> trunk_;
  std::vector<Conv2d<T>> spatial_;
  std::vector<ReLU<T>> spatial_relu_;
  BilinearResize<T> ctx_resize_;
  AttentionFusion<T> fusion_;
  Conv2d<T> classifier_;
  BilinearResize<T> up_;
};

template <typename T>
std::unique_ptr<SegmentationNet<T>> make_network(const NetworkConfig& c, std::uint64_t seed) {
  if (c.variant == NetVariant::BiErf) return std::make_unique<BiErfPspNet<T>>(c, seed);
  return std::make_unique<ErfPspNet<T>>(c, seed);
}

}  // namespace ialseg

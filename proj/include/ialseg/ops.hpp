#pragma once

// Forward and backward kernels for the segmentation layer vocabulary. All
// spatial tensors are NHWC. Every kernel is serial and processes batch
// elements independently, so a batch forward is bitwise equal to per-image
// forwards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "ialseg/tensor.hpp"

namespace ialseg {

namespace detail {
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw Error(std::string(what) + ": expected NHWC tensor, got shape " + shape_str(s));
}
}  // namespace detail

/// Kernel geometry of a 2-D convolution. Padding is implicit: zero padding of
/// dilation*(k-1)/2 per axis, which preserves spatial size at stride 1.
struct ConvGeom {
  std::size_t kh = 1, kw = 1;
  std::size_t stride = 1;
  std::size_t dil_h = 1, dil_w = 1;

  std::size_t pad_h() const { return dil_h * (kh - 1) / 2; }
  std::size_t pad_w() const { return dil_w * (kw - 1) / 2; }
  std::size_t out_h(std::size_t h) const { return out_extent(h, kh, dil_h, pad_h()); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kw, dil_w, pad_w()); }

 private:
  std::size_t out_extent(std::size_t in, std::size_t k, std::size_t d, std::size_t p) const {
    const std::size_t span = d * (k - 1) + 1;
    if (in + 2 * p < span) throw Error("convolution window larger than padded input");
    return (in + 2 * p - span) / stride + 1;
  }
};

template <typename T>
struct ConvGrads {
  Tensor<T> dx, dw, db;
};

namespace detail {

// Unfolds one image (h x w x c) into rows of kh*kw*c patch values, one row per output pixel.
template <typename T>
void im2col(const T* img, std::size_t h, std::size_t w, std::size_t c, const ConvGeom& g, std::size_t ho,
            std::size_t wo, T* cols) {
  const std::size_t k = g.kh * g.kw * c;
  const auto ph = static_cast<std::ptrdiff_t>(g.pad_h()), pw = static_cast<std::ptrdiff_t>(g.pad_w());
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      T* row = cols + (oy * wo + ox) * k;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil_h) - ph;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil_w) - pw;
          T* dst = row + (ky * g.kw + kx) * c;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(dst, dst + c, T(0));
          } else {
            const T* src = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t h, std::size_t w, std::size_t c, const ConvGeom& g, std::size_t ho,
            std::size_t wo, T* img) {
  const std::size_t k = g.kh * g.kw * c;
  const auto ph = static_cast<std::ptrdiff_t>(g.pad_h()), pw = static_cast<std::ptrdiff_t>(g.pad_w());
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const T* row = cols + (oy * wo + ox) * k;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil_h) - ph;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil_w) - pw;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = row + (ky * g.kw + kx) * c;
          T* dst = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeom& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1; }

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  require_rank4(x.shape(), "conv2d");
  if (w.rank() != 4 || w.dim(0) != g.kh || w.dim(1) != g.kw || w.dim(2) != x.c())
    throw Error("conv2d: weight shape " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()) +
                " and kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw));
  if (g.stride == 0 || g.dil_h == 0 || g.dil_w == 0) throw Error("conv2d: stride and dilation must be positive");
}

}  // namespace detail

/// Cross-correlation y = x * w + b. Weights are laid out (kh, kw, c_in, c_out).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeom& g) {
  detail::check_conv_shapes(x, w, g);
  const std::size_t cout = w.dim(3);
  if (b.size() != cout) throw Error("conv2d: bias length does not match output channels");
  const std::size_t ho = g.out_h(x.h()), wo = g.out_w(x.w()), k = g.kh * g.kw * x.c();
  Tensor<T> y = Tensor<T>::nhwc(x.n(), ho, wo, cout);
  detail::CMapMat<T> wm(w.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b.data(), static_cast<Eigen::Index>(cout));
  Buffer<T> cols(detail::is_pointwise(g) ? 0 : ho * wo * k);
  const std::size_t in_stride = x.h() * x.w() * x.c(), out_stride = ho * wo * cout;
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = x.data() + n * in_stride;
    if (!detail::is_pointwise(g)) {
      detail::im2col(src, x.h(), x.w(), x.c(), g, ho, wo, cols.data());
      src = cols.data();
    }
    detail::CMapMat<T> cm(src, static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(k));
    detail::MapMat<T> ym(y.data() + n * out_stride, static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(cout));
    ym.noalias() = cm * wm;
    ym.rowwise() += bv;
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeom& g) {
  detail::check_conv_shapes(x, w, g);
  const std::size_t cout = w.dim(3);
  const std::size_t ho = g.out_h(x.h()), wo = g.out_w(x.w()), k = g.kh * g.kw * x.c();
  if (dy.shape() != Shape{x.n(), ho, wo, cout}) throw Error("conv2d backward: gradient shape mismatch");
  ConvGrads<T> out{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>(Shape{cout})};
  detail::CMapMat<T> wm(w.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  detail::MapMat<T> dwm(out.dw.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dbv(out.db.data(), static_cast<Eigen::Index>(cout));
  const bool pw = detail::is_pointwise(g);
  Buffer<T> cols(pw ? 0 : ho * wo * k), dcols(pw ? 0 : ho * wo * k);
  const std::size_t in_stride = x.h() * x.w() * x.c(), out_stride = ho * wo * cout;
  const auto rows = static_cast<Eigen::Index>(ho * wo);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = x.data() + n * in_stride;
    if (!pw) {
      detail::im2col(src, x.h(), x.w(), x.c(), g, ho, wo, cols.data());
      src = cols.data();
    }
    detail::CMapMat<T> cm(src, rows, static_cast<Eigen::Index>(k));
    detail::CMapMat<T> dym(dy.data() + n * out_stride, rows, static_cast<Eigen::Index>(cout));
    dwm.noalias() += cm.transpose() * dym;
    dbv += dym.colwise().sum();
    if (pw) {
      detail::MapMat<T> dxm(out.dx.data() + n * in_stride, rows, static_cast<Eigen::Index>(k));
      dxm.noalias() = dym * wm.transpose();
    } else {
      detail::MapMat<T> dcm(dcols.data(), rows, static_cast<Eigen::Index>(k));
      dcm.noalias() = dym * wm.transpose();
      detail::col2im(dcols.data(), x.h(), x.w(), x.c(), g, ho, wo, out.dx.data() + n * in_stride);
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return y;
}

/// Gradient of ReLU given its forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y[i] > T(0))) dx[i] = T(0);
  return dx;
}

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 max pooling with stride 2; ties resolve to the first element in scan order.
template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "maxpool2x2");
  const std::size_t ho = x.h() / 2, wo = x.w() / 2, c = x.c();
  if (ho == 0 || wo == 0) throw Error("maxpool2x2: input smaller than the window");
  PoolResult<T> r{Tensor<T>::nhwc(x.n(), ho, wo, c), std::vector<std::uint32_t>(x.n() * ho * wo * c)};
  std::size_t o = 0;
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          std::size_t best = ((n * x.h() + 2 * oy) * x.w() + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((n * x.h() + 2 * oy + dy) * x.w() + 2 * ox + dx) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          r.y[o] = x[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Shape& x_shape, const std::vector<std::uint32_t>& argmax, const Tensor<T>& dy) {
  Tensor<T> dx(x_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank4(a.shape(), "concat");
  detail::require_rank4(b.shape(), "concat");
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw Error("concat: spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ca = a.c(), cb = b.c(), pixels = a.n() * a.h() * a.w();
  Tensor<T> y = Tensor<T>::nhwc(a.n(), a.h(), a.w(), ca + cb);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * ca, ca, y.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, y.data() + p * (ca + cb) + ca);
  }
  return y;
}

/// Inverse of concat_channels: channels [0, c_first) and [c_first, C).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, std::size_t c_first) {
  detail::require_rank4(y.shape(), "split");
  const std::size_t c = y.c(), cb = c - c_first, pixels = y.n() * y.h() * y.w();
  auto a = Tensor<T>::nhwc(y.n(), y.h(), y.w(), c_first);
  auto b = Tensor<T>::nhwc(y.n(), y.h(), y.w(), cb);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(y.data() + p * c, c_first, a.data() + p * c_first);
    std::copy_n(y.data() + p * c + c_first, cb, b.data() + p * cb);
  }
  return {std::move(a), std::move(b)};
}

namespace detail {
// Adaptive pooling cell boundaries: [floor(i*n/bins), ceil((i+1)*n/bins)).
inline std::pair<std::size_t, std::size_t> bin_range(std::size_t i, std::size_t n, std::size_t bins) {
  return {(i * n) / bins, ((i + 1) * n + bins - 1) / bins};
}
}  // namespace detail

template <typename T>
Tensor<T> adaptive_avg_pool_forward(const Tensor<T>& x, std::size_t bins) {
  detail::require_rank4(x.shape(), "adaptive_avg_pool");
  if (bins == 0 || bins > x.h() || bins > x.w()) throw Error("adaptive_avg_pool: invalid bin count");
  Tensor<T> y = Tensor<T>::nhwc(x.n(), bins, bins, x.c());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t by = 0; by < bins; ++by) {
      const auto [y0, y1] = detail::bin_range(by, x.h(), bins);
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const auto [x0, x1] = detail::bin_range(bx, x.w(), bins);
        const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t ch = 0; ch < x.c(); ++ch) {
          T s = 0;
          for (std::size_t iy = y0; iy < y1; ++iy)
            for (std::size_t ix = x0; ix < x1; ++ix) s += x.at(n, iy, ix, ch);
          y.at(n, by, bx, ch) = s * inv;
        }
      }
    }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool_backward(const Shape& x_shape, const Tensor<T>& dy) {
  Tensor<T> dx(x_shape);
  const std::size_t bins = dy.h(), h = dx.h(), w = dx.w();
  for (std::size_t n = 0; n < dx.n(); ++n)
    for (std::size_t by = 0; by < bins; ++by) {
      const auto [y0, y1] = detail::bin_range(by, h, bins);
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const auto [x0, x1] = detail::bin_range(bx, w, bins);
        const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t ch = 0; ch < dx.c(); ++ch) {
          const T g = dy.at(n, by, bx, ch) * inv;
          for (std::size_t iy = y0; iy < y1; ++iy)
            for (std::size_t ix = x0; ix < x1; ++ix) dx.at(n, iy, ix, ch) += g;
        }
      }
    }
  return dx;
}

namespace detail {
// Source taps for one output coordinate under half-pixel centers (align_corners = false).
struct Taps {
  std::size_t i0, i1;
  double l1;
};

inline std::vector<Taps> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace detail

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> bilinear_resize_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank4(x.shape(), "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw Error("bilinear_resize: empty output size");
  const auto ty = detail::bilinear_taps(x.h(), out_h), tx = detail::bilinear_taps(x.w(), out_w);
  Tensor<T> y = Tensor<T>::nhwc(x.n(), out_h, out_w, x.c());
  const std::size_t c = x.c();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T ly = static_cast<T>(ty[oy].l1), hy = T(1) - ly;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T lx = static_cast<T>(tx[ox].l1), hx = T(1) - lx;
        const T* p00 = &x.at(n, ty[oy].i0, tx[ox].i0, 0);
        const T* p01 = &x.at(n, ty[oy].i0, tx[ox].i1, 0);
        const T* p10 = &x.at(n, ty[oy].i1, tx[ox].i0, 0);
        const T* p11 = &x.at(n, ty[oy].i1, tx[ox].i1, 0);
        T* dst = &y.at(n, oy, ox, 0);
        for (std::size_t ch = 0; ch < c; ++ch)
          dst[ch] = hy * (hx * p00[ch] + lx * p01[ch]) + ly * (hx * p10[ch] + lx * p11[ch]);
      }
    }
  return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& x_shape, const Tensor<T>& dy) {
  Tensor<T> dx(x_shape);
  const auto ty = detail::bilinear_taps(dx.h(), dy.h()), tx = detail::bilinear_taps(dx.w(), dy.w());
  const std::size_t c = dx.c();
  for (std::size_t n = 0; n < dx.n(); ++n)
    for (std::size_t oy = 0; oy < dy.h(); ++oy) {
      const T ly = static_cast<T>(ty[oy].l1), hy = T(1) - ly;
      for (std::size_t ox = 0; ox < dy.w(); ++ox) {
        const T lx = static_cast<T>(tx[ox].l1), hx = T(1) - lx;
        const T* g = &dy.at(n, oy, ox, 0);
        T* p00 = &dx.at(n, ty[oy].i0, tx[ox].i0, 0);
        T* p01 = &dx.at(n, ty[oy].i0, tx[ox].i1, 0);
        T* p10 = &dx.at(n, ty[oy].i1, tx[ox].i0, 0);
        T* p11 = &dx.at(n, ty[oy].i1, tx[ox].i1, 0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          p00[ch] += hy * hx * g[ch];
          p01[ch] += hy * lx * g[ch];
          p10[ch] += ly * hx * g[ch];
          p11[ch] += ly * lx * g[ch];
        }
      }
    }
  return dx;
}

/// Mean over height and width; output shape (n, 1, 1, c).
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
  return adaptive_avg_pool_forward(x, 1);
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& x_shape, const Tensor<T>& dy) {
  return adaptive_avg_pool_backward(x_shape, dy);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (T(1) - y[i]);
  return dx;
}

/// y[n,i,j,c] = x[n,i,j,c] * gate[n,0,0,c].
template <typename T>
Tensor<T> channel_scale_forward(const Tensor<T>& x, const Tensor<T>& gate) {
  if (gate.shape() != Shape{x.n(), 1, 1, x.c()}) throw Error("channel_scale: gate shape mismatch");
  Tensor<T> y = x;
  const std::size_t plane = x.h() * x.w(), c = x.c();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) y[(n * plane + p) * c + ch] *= gate[n * c + ch];
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_scale_backward(const Tensor<T>& x, const Tensor<T>& gate,
                                                       const Tensor<T>& dy) {
  Tensor<T> dx = channel_scale_forward(dy, gate);
  Tensor<T> dgate(gate.shape());
  const std::size_t plane = x.h() * x.w(), c = x.c();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (n * plane + p) * c + ch;
        dgate[n * c + ch] += dy[i] * x[i];
      }
  return {std::move(dx), std::move(dgate)};
}

/// Softmax over the last dimension, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() == 0) throw Error("softmax: scalar input");
  const std::size_t c = logits.shape().back();
  if (c == 0) throw Error("softmax: zero channels");
  Tensor<T> p = logits;
  for (std::size_t base = 0; base < p.size(); base += c) {
    T* row = p.data() + base;
    const T m = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t k = 0; k < c; ++k) s += (row[k] = std::exp(row[k] - m));
    const T inv = T(1) / s;
    for (std::size_t k = 0; k < c; ++k) row[k] *= inv;
  }
  return p;
}

/// dL/dz from dL/dp for p = softmax(z): p * (dp - <p, dp>).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  Tensor<T>::require_same_shape(p, dp, "softmax_backward");
  const std::size_t c = p.shape().back();
  Tensor<T> dz(p.shape());
  for (std::size_t base = 0; base < p.size(); base += c) {
    T dot = 0;
    for (std::size_t k = 0; k < c; ++k) dot += p[base + k] * dp[base + k];
    for (std::size_t k = 0; k < c; ++k) dz[base + k] = p[base + k] * (dp[base + k] - dot);
  }
  return dz;
}

}  // namespace ialseg

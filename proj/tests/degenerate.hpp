#pragma once

// BiERF with the spatial path neutralized: every spatial-stage parameter is
// zero (so the path emits zeros) and the fusion gate is saturated at 1. The
// network output should then equal the context path alone, projected through
// the context rows of the fusion projection and upsampled.

#include "ialseg/network.hpp"
#include "ialseg/ops.hpp"

namespace ialseg::testing {

template <typename T>
void neutralize_spatial_path(BiErfPspNet<T>& net, T gate_bias = T(50)) {
  for (std::size_t i = 0; i < net.spatial_stages(); ++i) {
    net.spatial_stage(i).weight().value.fill(T(0));
    net.spatial_stage(i).bias().value.fill(T(0));
  }
  net.fusion().gate().weight().value.fill(T(0));
  net.fusion().gate().bias().value.fill(gate_bias);
}

/// Recomputes the context-only prediction from the network's own sub-modules.
template <typename T>
Tensor<T> context_only_prediction(BiErfPspNet<T>& net, const Tensor<T>& image) {
  const auto& cfg = net.config();
  const std::size_t factor = cfg.large_height / cfg.height;
  const std::size_t sh = image.h() >> cfg.spatial_channels.size(), sw = image.w() >> cfg.spatial_channels.size();
  Tensor<T> ctx = net.trunk().forward(bilinear_resize_forward(image, image.h() / factor, image.w() / factor));
  ctx = bilinear_resize_forward(ctx, sh, sw);

  // slice the projection weights down to the context input rows
  const auto& pw = net.fusion().projection().weight().value;
  const std::size_t cin = pw.dim(2), cout = pw.dim(3), cs = cfg.spatial_channels.back(), cc = cin - cs;
  Tensor<T> w_ctx(Shape{1, 1, cc, cout});
  for (std::size_t ci = 0; ci < cc; ++ci)
    for (std::size_t co = 0; co < cout; ++co) w_ctx[ci * cout + co] = pw[(cs + ci) * cout + co];
  Tensor<T> fused = conv2d_forward(ctx, w_ctx, net.fusion().projection().bias().value, ConvGeom{});
  Tensor<T> logits =
      conv2d_forward(fused, net.classifier().weight().value, net.classifier().bias().value, ConvGeom{});
  return bilinear_resize_forward(logits, image.h(), image.w());
}

}  // namespace ialseg::testing

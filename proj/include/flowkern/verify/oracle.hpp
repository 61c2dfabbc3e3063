// SPDX-License-Identifier: Apache-2.0
//
// Independent reference paths used only for verification. Nothing here calls
// the kernels it checks; layer math is redone in double precision.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowkern/matrix.hpp"
#include "flowkern/model_layer.hpp"

namespace flowkern::verify {

/// Whole-sequence float64 forward of one layer from dequantized weights with
/// naive attention; row i is token position i.
MatrixF dense_layer_forward(const model::LayerConfig& cfg,
                            const model::LayerWeights& w, const MatrixF& x);

/// Stack of dense_layer_forward.
MatrixF dense_model_forward(const std::vector<model::LayerConfig>& layers,
                            const std::vector<model::LayerWeights>& weights,
                            const MatrixF& x);

/// y = W x in float64 from the dequantized tensor.
std::vector<double> dense_matvec(const q4nx::Tensor& w,
                                 std::span<const float> x);

struct TickStage {
  std::int64_t transfer_ticks = 0;
  std::int64_t compute_ticks = 0;
};

/// Steps a clock one tick at a time and starts every DMA and compute action
/// whose buffers and inputs are ready (two buffers per stream, two-deep
/// hand-off between neighbouring stages). Returns the tick at which the last
/// compute finishes.
std::int64_t brute_force_pipeline(const std::vector<TickStage>& stages,
                                  std::size_t chunks);

MatrixF random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                      float lo = -1.0f, float hi = 1.0f);

}  // namespace flowkern::verify

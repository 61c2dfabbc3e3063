// SPDX-License-Identifier: Apache-2.0
//
// FusedDQP: matrix-vector projection that dequantizes Q4NX weights on the fly.
// Weights are consumed block by block, left to right; inside a block the
// 32×256 tile is streamed as 16×8 sub-blocks in row-major sub-block order and
// each sub-block's dequantized values are multiplied straight into the float32
// accumulators y_acc += dequant(w) * a.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flowkern/bf16.hpp"
#include "flowkern/q4nx.hpp"

namespace flowkern {

inline constexpr std::size_t kSubBlockRows = 16;
inline constexpr std::size_t kSubBlockCols = 8;
static_assert(q4nx::kBlockRows % kSubBlockRows == 0);
static_assert(q4nx::kBlockCols % kSubBlockCols == 0);

/// Half-open range of 32-row block rows owned by one worker.
struct RowStripe {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct FusedDqpPlan {
  std::size_t worker_count = 1;
  std::vector<RowStripe> stripes;  // one per worker, contiguous, in order
  bool parallel = false;           // run stripes on separate threads
};

/// Balanced contiguous stripes; the first (block_rows % workers) workers get
/// one extra block row.
FusedDqpPlan make_fused_dqp_plan(std::size_t worker_count,
                                 std::size_t block_rows);

/// y = W a. `a` holds either W.logical_cols or W.cols entries (padding must be
/// zero). Returns W.logical_rows outputs.
std::vector<float> fused_dqp_mvm(const q4nx::Tensor& w,
                                 std::span<const Bf16> a,
                                 const FusedDqpPlan& plan,
                                 OutputRounding rounding =
                                     OutputRounding::kBf16);

/// Same with a float32 activation vector (used when activations are not
/// narrowed to bf16).
std::vector<float> fused_dqp_mvm(const q4nx::Tensor& w,
                                 std::span<const float> a,
                                 const FusedDqpPlan& plan,
                                 OutputRounding rounding =
                                     OutputRounding::kBf16);

enum class TransferKind { kActivationSegment, kWeightBlock };

inline constexpr std::size_t kBroadcast = static_cast<std::size_t>(-1);

struct TransferEvent {
  TransferKind kind = TransferKind::kWeightBlock;
  std::size_t worker = 0;  // kBroadcast for activation segments
  std::size_t block_row = 0;
  std::size_t block_col = 0;
  std::size_t bytes = 0;
};

/// DRAM fetch order: for each block column, the 256-element activation segment
/// is broadcast once, then every worker fetches its own blocks of that column.
std::vector<TransferEvent> broadcast_schedule(const FusedDqpPlan& plan,
                                              std::size_t rows,
                                              std::size_t cols);

}  // namespace flowkern

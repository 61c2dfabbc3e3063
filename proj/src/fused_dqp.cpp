// SPDX-License-Identifier: Apache-2.0
#include "flowkern/fused_dqp.hpp"

#include <array>
#include <thread>

namespace flowkern {

FusedDqpPlan make_fused_dqp_plan(std::size_t worker_count,
                                 std::size_t block_rows) {
  if (worker_count == 0) throw InvalidArgument("fused_dqp: zero workers");
  FusedDqpPlan plan;
  plan.worker_count = worker_count;
  const std::size_t base = block_rows / worker_count;
  const std::size_t extra = block_rows % worker_count;
  std::size_t next = 0;
  for (std::size_t w = 0; w < worker_count; ++w) {
    const std::size_t n = base + (w < extra ? 1 : 0);
    plan.stripes.push_back({next, next + n});
    next += n;
  }
  return plan;
}

namespace {

void validate_plan(const FusedDqpPlan& plan, std::size_t block_rows) {
  if (plan.stripes.size() != plan.worker_count) {
    throw ShapeError("fused_dqp: one stripe per worker required");
  }
  std::size_t next = 0;
  for (const RowStripe& s : plan.stripes) {
    if (s.begin != next || s.end < s.begin) {
      throw ShapeError("fused_dqp: stripes must be contiguous and ordered");
    }
    next = s.end;
  }
  if (next != block_rows) {
    throw ShapeError("fused_dqp: stripes do not cover the block rows");
  }
}

// One worker: blocks left to right, 16×8 sub-blocks row-major inside each.
void run_stripe(const q4nx::Tensor& w, std::span<const float> a,
                RowStripe stripe, std::span<float> y) {
  std::array<float, kSubBlockRows * kSubBlockCols> tile{};
  for (std::size_t br = stripe.begin; br < stripe.end; ++br) {
    float* y_block = y.data() + br * q4nx::kBlockRows;
    for (std::size_t bc = 0; bc < w.block_cols(); ++bc) {
      const q4nx::Block& block = w.block(br, bc);
      const float* a_seg = a.data() + bc * q4nx::kBlockCols;
      for (std::size_t sr = 0; sr < q4nx::kBlockRows; sr += kSubBlockRows) {
        for (std::size_t sc = 0; sc < q4nx::kBlockCols; sc += kSubBlockCols) {
          // Dequantize the sub-block into registers, then accumulate.
          for (std::size_t r = 0; r < kSubBlockRows; ++r) {
            const std::size_t g = q4nx::group_index(sr + r, sc);
            const Bf16 scale = block.scale(g);
            const Bf16 min = block.min(g);
            for (std::size_t c = 0; c < kSubBlockCols; ++c) {
              tile[r * kSubBlockCols + c] = q4nx::dequantize_value(
                  scale, min, block.code(sr + r, sc + c));
            }
          }
          for (std::size_t r = 0; r < kSubBlockRows; ++r) {
            float acc = y_block[sr + r];
            for (std::size_t c = 0; c < kSubBlockCols; ++c) {
              acc += tile[r * kSubBlockCols + c] * a_seg[sc + c];
            }
            y_block[sr + r] = acc;
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<float> fused_dqp_mvm(const q4nx::Tensor& w,
                                 std::span<const Bf16> a,
                                 const FusedDqpPlan& plan,
                                 OutputRounding rounding) {
  std::vector<float> af(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) af[i] = a[i].to_float();
  return fused_dqp_mvm(w, std::span<const float>(af), plan, rounding);
}

std::vector<float> fused_dqp_mvm(const q4nx::Tensor& w,
                                 std::span<const float> a,
                                 const FusedDqpPlan& plan,
                                 OutputRounding rounding) {
  if (a.size() != w.logical_cols && a.size() != w.cols) {
    throw ShapeError("fused_dqp: activation length does not match W columns");
  }
  validate_plan(plan, w.block_rows());

  std::vector<float> a_padded(w.cols, 0.0f);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a_padded[i] = a[i];
    if (i >= w.logical_cols && a_padded[i] != 0.0f) {
      throw ShapeError("fused_dqp: padded activation entries must be zero");
    }
  }

  std::vector<float> y(w.rows, 0.0f);
  if (plan.parallel && plan.worker_count > 1) {
    std::vector<std::jthread> workers;
    for (const RowStripe& s : plan.stripes) {
      workers.emplace_back([&, s] { run_stripe(w, a_padded, s, y); });
    }
  } else {
    for (const RowStripe& s : plan.stripes) run_stripe(w, a_padded, s, y);
  }

  y.resize(w.logical_rows);
  for (float& v : y) v = apply_rounding(v, rounding);
  return y;
}

std::vector<TransferEvent> broadcast_schedule(const FusedDqpPlan& plan,
                                              std::size_t rows,
                                              std::size_t cols) {
  const std::size_t block_rows = q4nx::padded_rows(rows) / q4nx::kBlockRows;
  const std::size_t block_cols = q4nx::padded_cols(cols) / q4nx::kBlockCols;
  validate_plan(plan, block_rows);

  std::vector<TransferEvent> events;
  for (std::size_t bc = 0; bc < block_cols; ++bc) {
    events.push_back({TransferKind::kActivationSegment, kBroadcast, 0, bc,
                      q4nx::kBlockCols * sizeof(Bf16)});
    for (std::size_t wk = 0; wk < plan.stripes.size(); ++wk) {
      for (std::size_t br = plan.stripes[wk].begin; br < plan.stripes[wk].end;
           ++br) {
        events.push_back(
            {TransferKind::kWeightBlock, wk, br, bc, q4nx::kBlockBytes});
      }
    }
  }
  return events;
}

}  // namespace flowkern

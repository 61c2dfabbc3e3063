// SPDX-License-Identifier: Apache-2.0
#include "flowkern/chunked_attn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace flowkern {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

// Four independent partial sums; order is fixed so results are reproducible.
float dot(const float* a, const float* b, std::size_t n) {
  float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void reject_nan(const ViewF& m, const char* what) {
  for (float x : m.data()) {
    if (std::isnan(x)) {
      throw InvalidArgument(std::string("process_chunk: NaN in ") + what);
    }
  }
}

}  // namespace

ChunkAccumulator init_accumulator(std::size_t rows, std::size_t head_dim) {
  if (rows == 0 || head_dim == 0) {
    throw InvalidArgument("init_accumulator: rows and head_dim must be >= 1");
  }
  ChunkAccumulator acc;
  acc.m.assign(rows, kNegInf);
  acc.l.assign(rows, 0.0f);
  acc.y = MatrixF(rows, head_dim);
  return acc;
}

void process_chunk(const ViewF& q, const ViewF& k, const ViewF& v,
                   ChunkAccumulator& acc, const ChunkMask& mask, float scale) {
  if (q.rows() != acc.rows() || q.cols() != acc.head_dim() ||
      k.cols() != q.cols() || v.cols() != acc.head_dim() ||
      k.rows() != v.rows()) {
    throw ShapeError("process_chunk: dim mismatch");
  }
  reject_nan(q, "Q");
  reject_nan(k, "K");
  reject_nan(v, "V");

  const std::size_t kv_len = k.rows();
  const std::size_t d = q.cols();
  std::vector<float> s(kv_len);

  for (std::size_t r = 0; r < q.rows(); ++r) {
    const float* qr = q.row(r).data();
    float row_max = kNegInf;
    for (std::size_t j = 0; j < kv_len; ++j) {
      if (!mask.allows(r, j)) {
        s[j] = kNegInf;
        continue;
      }
      s[j] = dot(qr, k.row(j).data(), d) * scale;
      row_max = std::max(row_max, s[j]);
    }

    const float m_left = acc.m[r];
    const float m_new = std::max(m_left, row_max);
    // Nothing admissible so far: C = 1, F = 0, state unchanged.
    if (m_new == kNegInf) continue;

    const float c = m_left == kNegInf ? 0.0f : std::exp(m_left - m_new);
    float* y = acc.y.row(r).data();
    if (c != 1.0f) {
      for (std::size_t i = 0; i < d; ++i) y[i] *= c;
    }
    float f_sum = 0.0f;
    for (std::size_t j = 0; j < kv_len; ++j) {
      if (s[j] == kNegInf) continue;
      const float f = std::exp(s[j] - m_new);
      f_sum += f;
      const float* vj = v.row(j).data();
      for (std::size_t i = 0; i < d; ++i) y[i] += f * vj[i];
    }
    acc.l[r] = c * acc.l[r] + f_sum;
    acc.m[r] = m_new;
  }
}

MatrixF finalize(const ChunkAccumulator& acc, OutputRounding rounding) {
  MatrixF out(acc.rows(), acc.head_dim());
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    if (!(acc.l[r] > 0.0f)) {
      throw EmptyWindowError("finalize: row " + std::to_string(r) +
                             " has no admissible key");
    }
    const auto y = acc.y.row(r);
    auto o = out.row(r);
    for (std::size_t i = 0; i < y.size(); ++i) {
      o[i] = apply_rounding(y[i] / acc.l[r], rounding);
    }
  }
  return out;
}

const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kCausalFull: return "causal";
    case AttentionVariant::kSlidingWindow: return "swa";
    case AttentionVariant::kNonCausal: return "noncausal";
    case AttentionVariant::kDecode: return "decode";
  }
  return "?";
}

AttentionMask ChunkPlan::rule() const {
  switch (variant) {
    case AttentionVariant::kCausalFull:
      return AttentionMask::causal(query_offset());
    case AttentionVariant::kSlidingWindow:
      return AttentionMask::sliding_window(window, query_offset());
    case AttentionVariant::kNonCausal:
      return AttentionMask::non_causal();
    case AttentionVariant::kDecode:
      return window > 0 ? AttentionMask::sliding_window(window, query_offset())
                        : AttentionMask::causal(query_offset());
  }
  return AttentionMask::causal();
}

namespace {

// Appends the KV chunks that hold at least one admissible key for queries at
// absolute positions [q_first, q_last].
void build_sweep(const ChunkPlan& plan, std::size_t q_first,
                 std::size_t q_last, QuerySweep& sweep) {
  const AttentionMask rule = plan.rule();
  std::size_t key_lo = 0;
  std::size_t key_hi = plan.context_len - 1;
  if (rule.kind != MaskKind::kNonCausal) key_hi = q_last;
  if (rule.kind == MaskKind::kSlidingWindow && q_first + 1 > rule.window) {
    key_lo = q_first + 1 - rule.window;
  }
  for (std::size_t c = key_lo / plan.chunk_len; c * plan.chunk_len <= key_hi;
       ++c) {
    const std::size_t k_first = c * plan.chunk_len;
    const std::size_t k_last =
        std::min(k_first + plan.chunk_len, plan.context_len) - 1;
    ChunkRegion region = ChunkRegion::kFull;
    if (rule.kind != MaskKind::kNonCausal && k_last > q_first) {
      region = ChunkRegion::kDiagonal;
    } else if (rule.kind == MaskKind::kSlidingWindow &&
               k_first + rule.window <= q_last) {
      region = ChunkRegion::kPartialWindow;
    }
    sweep.steps.push_back({c, region});
  }
}

void validate_plan_inputs(std::size_t context_len, std::size_t query_len,
                          std::size_t chunk_len) {
  if (chunk_len == 0) throw InvalidArgument("chunk length must be >= 1");
  if (query_len == 0 || query_len > context_len) {
    throw InvalidArgument("plan requires 1 <= L_p <= L");
  }
}

}  // namespace

ChunkPlan make_prefill_plan(AttentionVariant variant, std::size_t context_len,
                            std::size_t query_len, std::size_t chunk_len,
                            std::size_t window) {
  if (variant == AttentionVariant::kDecode) {
    throw InvalidArgument("make_prefill_plan: use make_decode_plan");
  }
  validate_plan_inputs(context_len, query_len, chunk_len);
  if (variant == AttentionVariant::kSlidingWindow && window == 0) {
    throw InvalidArgument("sliding window requires L_w >= 1");
  }
  ChunkPlan plan;
  plan.variant = variant;
  plan.window = variant == AttentionVariant::kSlidingWindow ? window : 0;
  plan.chunk_len = chunk_len;
  plan.context_len = context_len;
  plan.query_len = query_len;
  for (std::size_t qb = 0; qb < query_len; qb += chunk_len) {
    QuerySweep sweep;
    sweep.query_begin = qb;
    sweep.query_count = std::min(chunk_len, query_len - qb);
    const std::size_t first = plan.query_offset() + qb;
    build_sweep(plan, first, first + sweep.query_count - 1, sweep);
    plan.sweeps.push_back(std::move(sweep));
  }
  return plan;
}

ChunkPlan make_decode_plan(std::size_t context_len, std::size_t chunk_len,
                           std::size_t window) {
  if (context_len == 0) throw EmptyWindowError("decode: empty KV cache");
  validate_plan_inputs(context_len, 1, chunk_len);
  ChunkPlan plan;
  plan.variant = AttentionVariant::kDecode;
  plan.window = window;
  plan.chunk_len = chunk_len;
  plan.context_len = context_len;
  plan.query_len = 1;
  QuerySweep sweep;
  sweep.query_count = 1;
  build_sweep(plan, context_len - 1, context_len - 1, sweep);
  plan.sweeps.push_back(std::move(sweep));
  return plan;
}

namespace {

void check_kv(const std::vector<MatrixF>& k_groups,
              const std::vector<MatrixF>& v_groups, const GqaLayout& layout,
              const ChunkPlan& plan) {
  if (k_groups.size() != layout.groups || v_groups.size() != layout.groups) {
    throw ShapeError("attention: KV group count does not match layout");
  }
  for (std::size_t g = 0; g < layout.groups; ++g) {
    if (k_groups[g].rows() != plan.context_len ||
        v_groups[g].rows() != plan.context_len) {
      throw ShapeError("attention: KV length does not match plan");
    }
    if (k_groups[g].cols() != layout.head_dim ||
        v_groups[g].cols() != layout.head_dim) {
      throw ShapeError("attention: KV head dim does not match layout");
    }
  }
}

}  // namespace

std::vector<MatrixF> flowqkv_prefill(const std::vector<MatrixF>& q_heads,
                                     const std::vector<MatrixF>& k_groups,
                                     const std::vector<MatrixF>& v_groups,
                                     const GqaLayout& layout,
                                     const ChunkPlan& plan, float scale,
                                     OutputRounding rounding) {
  layout.validate();
  if (plan.variant == AttentionVariant::kDecode) {
    throw InvalidArgument("flowqkv_prefill: decode plan given to prefill");
  }
  if (q_heads.size() != layout.heads) {
    throw ShapeError("flowqkv_prefill: head count does not match layout");
  }
  check_kv(k_groups, v_groups, layout, plan);

  const AttentionMask rule = plan.rule();
  std::vector<MatrixF> out;
  out.reserve(layout.heads);
  for (std::size_t h = 0; h < layout.heads; ++h) {
    const MatrixF& q = q_heads[h];
    if (q.rows() != plan.query_len || q.cols() != layout.head_dim) {
      throw ShapeError("flowqkv_prefill: Q shape does not match plan");
    }
    const std::size_t g = layout.group_of(h);
    MatrixF o(plan.query_len, layout.head_dim);
    for (const QuerySweep& sweep : plan.sweeps) {
      ChunkAccumulator acc = init_accumulator(sweep.query_count, q.cols());
      const ViewF q_chunk = q.row_range(sweep.query_begin, sweep.query_count);
      for (const SweepStep& step : sweep.steps) {
        const std::size_t k0 = step.kv_chunk * plan.chunk_len;
        const std::size_t len = std::min(plan.chunk_len, plan.context_len - k0);
        ChunkMask mask{step.region, plan.query_offset() + sweep.query_begin, 1,
                       k0, rule};
        process_chunk(q_chunk, k_groups[g].row_range(k0, len),
                      v_groups[g].row_range(k0, len), acc, mask, scale);
      }
      const MatrixF part = finalize(acc, rounding);
      std::copy(part.data().begin(), part.data().end(),
                o.row(sweep.query_begin).begin());
    }
    out.push_back(std::move(o));
  }
  return out;
}

MatrixF flowkv_decode(const MatrixF& q_heads,
                      const std::vector<MatrixF>& k_groups,
                      const std::vector<MatrixF>& v_groups,
                      const GqaLayout& layout, const ChunkPlan& plan,
                      float scale, OutputRounding rounding) {
  layout.validate();
  if (plan.variant != AttentionVariant::kDecode) {
    throw InvalidArgument("flowkv_decode: requires a decode plan");
  }
  if (plan.context_len == 0) throw EmptyWindowError("decode: empty KV cache");
  if (q_heads.rows() != layout.heads || q_heads.cols() != layout.head_dim) {
    throw ShapeError("flowkv_decode: q must be H x d");
  }
  check_kv(k_groups, v_groups, layout, plan);

  const AttentionMask rule = plan.rule();
  const std::size_t per_group = layout.heads_per_group();
  MatrixF out(layout.heads, layout.head_dim);
  for (std::size_t g = 0; g < layout.groups; ++g) {
    const ViewF q = q_heads.row_range(g * per_group, per_group);
    ChunkAccumulator acc = init_accumulator(per_group, layout.head_dim);
    for (const SweepStep& step : plan.sweeps.front().steps) {
      const std::size_t k0 = step.kv_chunk * plan.chunk_len;
      const std::size_t len = std::min(plan.chunk_len, plan.context_len - k0);
      ChunkMask mask{step.region, plan.context_len - 1, 0, k0, rule};
      process_chunk(q, k_groups[g].row_range(k0, len),
                    v_groups[g].row_range(k0, len), acc, mask, scale);
    }
    const MatrixF part = finalize(acc, rounding);
    std::copy(part.data().begin(), part.data().end(),
              out.row(g * per_group).begin());
  }
  return out;
}

double u_mem_rd(double bytes_per_element, double context_len, double chunk_len,
                double ct_count, double heads, double seconds) {
  if (seconds == 0.0) throw InvalidArgument("u_mem_rd: T_d must be nonzero");
  if (bytes_per_element <= 0 || context_len <= 0 || chunk_len <= 0 ||
      ct_count <= 0 || heads <= 0 || seconds < 0) {
    throw InvalidArgument("u_mem_rd: arguments must be positive");
  }
  return 2.0 * bytes_per_element * (1.0 + context_len / chunk_len) *
         context_len * ct_count * heads / seconds;
}

}  // namespace flowkern

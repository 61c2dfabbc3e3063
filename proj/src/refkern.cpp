// SPDX-License-Identifier: Apache-2.0
#include "flowkern/refkern.hpp"

#include <algorithm>
#include <limits>

namespace flowkern {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

float dot(std::span<const float> a, std::span<const float> b) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

MatrixF matmul_ref(const MatrixF& a, const MatrixF& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul_ref: inner dim mismatch");
  MatrixF c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      float s = 0.0f;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
  return c;
}

std::vector<float> matvec_ref(const MatrixF& a, std::span<const float> x) {
  if (a.cols() != x.size()) throw ShapeError("matvec_ref: dim mismatch");
  std::vector<float> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

std::vector<float> softmax_ref(std::span<const float> row) {
  float hi = kNegInf;
  for (float x : row) hi = std::max(hi, x);
  if (hi == kNegInf) {
    throw EmptyWindowError("softmax: every position is masked");
  }
  std::vector<float> out(row.size());
  float sum = 0.0f;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = row[i] == kNegInf ? 0.0f : std::exp(row[i] - hi);
    sum += out[i];
  }
  for (float& x : out) x /= sum;
  return out;
}

MatrixF attention_ref(const MatrixF& q, const MatrixF& k, const MatrixF& v,
                      const AttentionMask& mask, float scale) {
  mask.validate();
  if (q.cols() != k.cols() || k.rows() != v.rows() || k.cols() != v.cols()) {
    throw ShapeError("attention_ref: dim mismatch");
  }
  MatrixF out(q.rows(), v.cols());
  std::vector<float> scores(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t pos = mask.query_offset + i;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      scores[j] =
          mask.allows(pos, j) ? dot(q.row(i), k.row(j)) * scale : kNegInf;
    }
    const std::vector<float> p = softmax_ref(scores);
    auto o = out.row(i);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      if (p[j] == 0.0f) continue;
      const auto vj = v.row(j);
      for (std::size_t c = 0; c < o.size(); ++c) o[c] += p[j] * vj[c];
    }
  }
  return out;
}

std::vector<float> decode_attention_ref(std::span<const float> q,
                                        const MatrixF& k_cache,
                                        const MatrixF& v_cache,
                                        const AttentionMask& mask,
                                        float scale) {
  mask.validate();
  const std::size_t t = k_cache.rows();
  if (t == 0) throw EmptyWindowError("decode attention: empty KV cache");
  if (q.size() != k_cache.cols() || v_cache.rows() != t ||
      v_cache.cols() != k_cache.cols()) {
    throw ShapeError("decode_attention_ref: dim mismatch");
  }
  const std::size_t pos = t - 1;
  std::size_t first = 0;
  if (mask.kind == MaskKind::kSlidingWindow && t > mask.window) {
    first = t - mask.window;
  }

  // o_t = sum_j exp(s_j - s_max) v_j / sum_l exp(s_l - s_max)
  float s_max = kNegInf;
  for (std::size_t j = first; j <= pos; ++j) {
    s_max = std::max(s_max, dot(q, k_cache.row(j)) * scale);
  }
  std::vector<float> o(v_cache.cols(), 0.0f);
  float denom = 0.0f;
  for (std::size_t j = first; j <= pos; ++j) {
    const float w = std::exp(dot(q, k_cache.row(j)) * scale - s_max);
    denom += w;
    const auto vj = v_cache.row(j);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += w * vj[c];
  }
  for (float& x : o) x /= denom;
  return o;
}

std::vector<MatrixF> gqa_attention_ref(const std::vector<MatrixF>& q_heads,
                                       const std::vector<MatrixF>& k_groups,
                                       const std::vector<MatrixF>& v_groups,
                                       const GqaLayout& layout,
                                       const AttentionMask& mask,
                                       float scale) {
  layout.validate();
  if (q_heads.size() != layout.heads || k_groups.size() != layout.groups ||
      v_groups.size() != layout.groups) {
    throw ShapeError("gqa_attention_ref: head/group count mismatch");
  }
  std::vector<MatrixF> out;
  out.reserve(layout.heads);
  for (std::size_t h = 0; h < layout.heads; ++h) {
    const std::size_t g = layout.group_of(h);
    out.push_back(
        attention_ref(q_heads[h], k_groups[g], v_groups[g], mask, scale));
  }
  return out;
}

}  // namespace flowkern

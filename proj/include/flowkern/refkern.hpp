// SPDX-License-Identifier: Apache-2.0
//
// Naive float32 reference kernels. These are the oracles every optimized
// kernel is checked against; they favour obviousness over speed.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "flowkern/matrix.hpp"

namespace flowkern {

enum class MaskKind { kCausal, kSlidingWindow, kNonCausal };

/// Which keys a query may attend to. Positions are 0-based: query row i of a
/// block sits at absolute position query_offset + i.
struct AttentionMask {
  MaskKind kind = MaskKind::kCausal;
  std::size_t window = 0;  // L_w, sliding window only
  std::size_t query_offset = 0;

  static AttentionMask causal(std::size_t query_offset = 0) {
    return {MaskKind::kCausal, 0, query_offset};
  }
  static AttentionMask sliding_window(std::size_t window,
                                      std::size_t query_offset = 0) {
    return {MaskKind::kSlidingWindow, window, query_offset};
  }
  static AttentionMask non_causal() { return {MaskKind::kNonCausal, 0, 0}; }

  void validate() const {
    if (kind == MaskKind::kSlidingWindow && window < 1) {
      throw InvalidArgument("sliding window requires L_w >= 1");
    }
  }

  /// Causal: key <= query. Sliding window: query - L_w < key <= query.
  bool allows(std::size_t query_pos, std::size_t key_pos) const {
    switch (kind) {
      case MaskKind::kNonCausal:
        return true;
      case MaskKind::kCausal:
        return key_pos <= query_pos;
      case MaskKind::kSlidingWindow:
        return key_pos <= query_pos && key_pos + window > query_pos;
    }
    return false;
  }
};

/// Grouped-query attention layout: H query heads share G KV groups.
struct GqaLayout {
  std::size_t heads = 1;
  std::size_t groups = 1;
  std::size_t head_dim = 1;

  void validate() const {
    if (heads == 0 || groups == 0 || head_dim == 0 || heads % groups != 0) {
      throw InvalidArgument("GQA layout requires H % G == 0 and nonzero dims");
    }
  }
  std::size_t heads_per_group() const { return heads / groups; }
  std::size_t group_of(std::size_t head) const {
    return head / heads_per_group();
  }
};

inline float default_scale(std::size_t head_dim) {
  return 1.0f / std::sqrt(static_cast<float>(head_dim));
}

MatrixF matmul_ref(const MatrixF& a, const MatrixF& b);
std::vector<float> matvec_ref(const MatrixF& a, std::span<const float> x);

/// Max-subtracted softmax; -inf entries map to 0. Throws EmptyWindowError when
/// every entry is -inf.
std::vector<float> softmax_ref(std::span<const float> row);

/// softmax(Q K^T * scale) V restricted by mask. Q is L_p×d, K and V are L×d.
MatrixF attention_ref(const MatrixF& q, const MatrixF& k, const MatrixF& v,
                      const AttentionMask& mask, float scale);

/// Single-query decode at position t - 1 (t = cache rows), evaluated as a
/// direct weighted sum over admissible cache rows. mask.query_offset is
/// ignored.
std::vector<float> decode_attention_ref(std::span<const float> q,
                                        const MatrixF& k_cache,
                                        const MatrixF& v_cache,
                                        const AttentionMask& mask, float scale);

/// Per-head attention where head h reads KV group layout.group_of(h).
std::vector<MatrixF> gqa_attention_ref(const std::vector<MatrixF>& q_heads,
                                       const std::vector<MatrixF>& k_groups,
                                       const std::vector<MatrixF>& v_groups,
                                       const GqaLayout& layout,
                                       const AttentionMask& mask, float scale);

}  // namespace flowkern

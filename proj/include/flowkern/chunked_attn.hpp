// SPDX-License-Identifier: Apache-2.0
//
// Chunked attention with online-softmax accumulation (FlowQKV for prefill,
// FlowKV for decode). Per KV chunk i and query block Q_c:
//
//   S     = Q_c K_i^T * scale                 (masked entries -inf)
//   m_new = max(rowmax(S), m_left)
//   F     = exp(S - m_new)                    (masked entries 0)
//   C     = exp(m_left - m_new)
//   l     = C * l_left + rowsum(F)
//   Y     = C * Y_left + F V_i
//
// and after the sweep O = Y / l.
#pragma once

#include <cstddef>
#include <vector>

#include "flowkern/matrix.hpp"
#include "flowkern/refkern.hpp"

namespace flowkern {

/// Running (m, l, Y) state for a block of query rows.
struct ChunkAccumulator {
  std::vector<float> m;  // running row maxima, -inf before any admissible key
  std::vector<float> l;  // running denominators
  MatrixF y;             // running numerators, rows × head_dim

  std::size_t rows() const { return m.size(); }
  std::size_t head_dim() const { return y.cols(); }
};

ChunkAccumulator init_accumulator(std::size_t rows, std::size_t head_dim);

enum class ChunkRegion {
  kFull,           // every (query, key) pair admissible
  kDiagonal,       // cut by the causal boundary (lower triangular part)
  kPartialWindow,  // cut by the sliding-window lower edge only
};

/// Mask for one (query block, KV chunk) pair. Query row i sits at absolute
/// position query_pos + i * query_step (step 0 when the rows are several heads
/// of one decode token); key row j at key_pos + j.
struct ChunkMask {
  ChunkRegion region = ChunkRegion::kFull;
  std::size_t query_pos = 0;
  std::size_t query_step = 1;
  std::size_t key_pos = 0;
  AttentionMask rule = AttentionMask::non_causal();

  bool allows(std::size_t qi, std::size_t kj) const {
    return region == ChunkRegion::kFull ||
           rule.allows(query_pos + qi * query_step, key_pos + kj);
  }
};

/// Folds one KV chunk into acc. A fully masked chunk leaves acc unchanged.
/// Throws ShapeError on dim mismatch, InvalidArgument on NaN input.
void process_chunk(const ViewF& q, const ViewF& k, const ViewF& v,
                   ChunkAccumulator& acc, const ChunkMask& mask, float scale);

/// O = Y / l. Throws EmptyWindowError if any row saw no admissible key.
MatrixF finalize(const ChunkAccumulator& acc,
                 OutputRounding rounding = OutputRounding::kNone);

enum class AttentionVariant { kCausalFull, kSlidingWindow, kNonCausal, kDecode };

const char* to_string(AttentionVariant v);

struct SweepStep {
  std::size_t kv_chunk = 0;
  ChunkRegion region = ChunkRegion::kFull;
};

/// One query chunk and the KV chunks it visits, left to right.
struct QuerySweep {
  std::size_t query_begin = 0;  // row offset into Q (not an absolute position)
  std::size_t query_count = 0;
  std::vector<SweepStep> steps;
};

struct ChunkPlan {
  AttentionVariant variant = AttentionVariant::kCausalFull;
  std::size_t window = 0;       // L_w; for kDecode 0 means full causal
  std::size_t chunk_len = 256;  // L_c
  std::size_t context_len = 0;  // L
  std::size_t query_len = 0;    // L_p (1 for decode)
  std::vector<QuerySweep> sweeps;

  std::size_t query_offset() const { return context_len - query_len; }
  std::size_t kv_chunk_count() const {
    return (context_len + chunk_len - 1) / chunk_len;
  }
  /// Admissibility rule in absolute positions.
  AttentionMask rule() const;
};

inline constexpr std::size_t kDefaultPrefillChunk = 256;
inline constexpr std::size_t kDefaultDecodeChunk = 32;

/// Sweep schedule for L_p queries at the end of an L-token context. Query and
/// KV chunks are both L_c long; KV chunks are aligned to absolute position 0.
ChunkPlan make_prefill_plan(AttentionVariant variant, std::size_t context_len,
                            std::size_t query_len, std::size_t chunk_len,
                            std::size_t window = 0);

/// Decode sweep for one query at position context_len - 1. window > 0 limits
/// the sweep to the last `window` tokens.
ChunkPlan make_decode_plan(std::size_t context_len, std::size_t chunk_len,
                           std::size_t window = 0);

/// FlowQKV prefill. q_heads: H matrices L_p×d; k_groups/v_groups: G matrices
/// L×d. Returns H matrices L_p×d.
std::vector<MatrixF> flowqkv_prefill(const std::vector<MatrixF>& q_heads,
                                     const std::vector<MatrixF>& k_groups,
                                     const std::vector<MatrixF>& v_groups,
                                     const GqaLayout& layout,
                                     const ChunkPlan& plan, float scale,
                                     OutputRounding rounding =
                                         OutputRounding::kBf16);

/// FlowKV decode. q_heads is H×d (one row per head); the caches hold t rows.
/// The H/G heads of a group are swept together as one query block.
MatrixF flowkv_decode(const MatrixF& q_heads,
                      const std::vector<MatrixF>& k_groups,
                      const std::vector<MatrixF>& v_groups,
                      const GqaLayout& layout, const ChunkPlan& plan,
                      float scale,
                      OutputRounding rounding = OutputRounding::kBf16);

/// Sustained read-bandwidth utilization in bytes/s:
///   2B (1 + L / L_c) L * CT_count * H / T_d
double u_mem_rd(double bytes_per_element, double context_len, double chunk_len,
                double ct_count, double heads, double seconds);

}  // namespace flowkern

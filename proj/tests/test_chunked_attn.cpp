// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "flowkern/chunked_attn.hpp"
#include "flowkern/errors.hpp"
#include "flowkern/verify/oracle.hpp"

#include <cmath>
#include <set>

using namespace flowkern;
using verify::random_matrix;

namespace {

AttentionMask mask_for(AttentionVariant v, std::size_t window,
                       std::size_t offset) {
  switch (v) {
    case AttentionVariant::kSlidingWindow:
      return AttentionMask::sliding_window(window, offset);
    case AttentionVariant::kNonCausal:
      return AttentionMask::non_causal();
    default:
      return AttentionMask::causal(offset);
  }
}

// Every admissible (query, key) pair is visited exactly once, every step has
// at least one admissible pair, and kFull steps contain no masked pair.
void check_plan_coverage(const ChunkPlan& plan, const AttentionMask& mask) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const QuerySweep& sw : plan.sweeps) {
    std::size_t last_chunk = 0;
    bool first = true;
    for (const SweepStep& st : sw.steps) {
      if (!first) REQUIRE(st.kv_chunk > last_chunk);
      first = false;
      last_chunk = st.kv_chunk;
      const std::size_t k0 = st.kv_chunk * plan.chunk_len;
      const std::size_t k1 = std::min(k0 + plan.chunk_len, plan.context_len);
      std::size_t admissible = 0, masked = 0;
      for (std::size_t qi = 0; qi < sw.query_count; ++qi) {
        const std::size_t qpos = plan.query_offset() + sw.query_begin + qi;
        for (std::size_t k = k0; k < k1; ++k) {
          if (mask.allows(qpos, k)) {
            ++admissible;
            REQUIRE(seen.insert({qpos, k}).second);
          } else {
            ++masked;
          }
        }
      }
      REQUIRE(admissible > 0);
      if (st.region == ChunkRegion::kFull) REQUIRE(masked == 0);
      if (st.region != ChunkRegion::kFull) REQUIRE(masked > 0);
    }
  }
  std::size_t expected = 0;
  for (std::size_t q = plan.query_offset(); q < plan.context_len; ++q) {
    for (std::size_t k = 0; k < plan.context_len; ++k) {
      if (mask.allows(q, k)) ++expected;
    }
  }
  REQUIRE(seen.size() == expected);
}

}  // namespace

TEST_CASE("one chunk equals the dense softmax") {
  const MatrixF q = random_matrix(4, 8, 1);
  const MatrixF k = random_matrix(6, 8, 2);
  const MatrixF v = random_matrix(6, 8, 3);
  ChunkAccumulator acc = init_accumulator(4, 8);
  process_chunk(q, k, v, acc, ChunkMask{}, 0.4f);
  const MatrixF ref = attention_ref(q, k, v, AttentionMask::non_causal(), 0.4f);
  CHECK(max_rel_error(finalize(acc), ref) < 1e-6);
}

TEST_CASE("chunks fold in any split") {
  const MatrixF q = random_matrix(3, 16, 4);
  const MatrixF k = random_matrix(20, 16, 5);
  const MatrixF v = random_matrix(20, 16, 6);
  const MatrixF ref = attention_ref(q, k, v, AttentionMask::non_causal(), 0.25f);
  for (std::size_t lc : {1, 3, 7, 20}) {
    ChunkAccumulator acc = init_accumulator(3, 16);
    for (std::size_t j = 0; j < 20; j += lc) {
      const std::size_t n = std::min(lc, 20 - j);
      ChunkMask m;
      m.key_pos = j;
      process_chunk(q, k.row_range(j, n), v.row_range(j, n), acc, m, 0.25f);
    }
    CHECK(max_rel_error(finalize(acc), ref) < 1e-6);
  }
}

TEST_CASE("a fully masked chunk leaves the state untouched") {
  const MatrixF q = random_matrix(2, 4, 7);
  const MatrixF k = random_matrix(4, 4, 8);
  const MatrixF v = random_matrix(4, 4, 9);
  ChunkAccumulator acc = init_accumulator(2, 4);
  ChunkMask m{ChunkRegion::kDiagonal, 0, 1, 10, AttentionMask::causal()};
  process_chunk(q, k, v, acc, m, 1.0f);
  CHECK(std::isinf(acc.m[0]));
  CHECK(acc.l[0] == 0.0f);
  CHECK_THROWS_AS(finalize(acc), EmptyWindowError);
  CHECK_THROWS_AS(init_accumulator(0, 4), InvalidArgument);
}

TEST_CASE("causal plan on two chunks") {
  const ChunkPlan p =
      make_prefill_plan(AttentionVariant::kCausalFull, 8, 8, 4);
  REQUIRE(p.sweeps.size() == 2);
  REQUIRE(p.sweeps[0].steps.size() == 1);
  CHECK(p.sweeps[0].steps[0].region == ChunkRegion::kDiagonal);
  REQUIRE(p.sweeps[1].steps.size() == 2);
  CHECK(p.sweeps[1].steps[0].region == ChunkRegion::kFull);
  CHECK(p.sweeps[1].steps[1].region == ChunkRegion::kDiagonal);
}

TEST_CASE("sliding window plan skips evicted chunks") {
  const ChunkPlan p =
      make_prefill_plan(AttentionVariant::kSlidingWindow, 16, 16, 4, 3);
  const QuerySweep& last = p.sweeps.back();  // queries 12..15, keys 10..15
  REQUIRE(last.steps.size() == 2);
  CHECK(last.steps[0].kv_chunk == 2);
  CHECK(last.steps[0].region == ChunkRegion::kPartialWindow);
  CHECK(last.steps[1].kv_chunk == 3);
  CHECK(last.steps[1].region == ChunkRegion::kDiagonal);
  CHECK_THROWS_AS(
      make_prefill_plan(AttentionVariant::kSlidingWindow, 16, 16, 4, 0),
      InvalidArgument);
}

TEST_CASE("non-causal plan visits every chunk in full") {
  const ChunkPlan p = make_prefill_plan(AttentionVariant::kNonCausal, 10, 10, 4);
  for (const QuerySweep& sw : p.sweeps) {
    REQUIRE(sw.steps.size() == 3);
    for (const SweepStep& st : sw.steps) CHECK(st.region == ChunkRegion::kFull);
  }
}

TEST_CASE("decode plan covers the window only") {
  const ChunkPlan full = make_decode_plan(100, 32);
  CHECK(full.sweeps.at(0).steps.size() == 4);
  const ChunkPlan swa = make_decode_plan(100, 32, 40);  // keys 60..99
  REQUIRE(swa.sweeps.at(0).steps.size() == 3);
  CHECK(swa.sweeps[0].steps[0].kv_chunk == 1);
  CHECK(swa.sweeps[0].steps[0].region == ChunkRegion::kPartialWindow);
  CHECK_THROWS_AS(make_decode_plan(0, 32), EmptyWindowError);
}

TEST_CASE("plans cover each admissible pair exactly once") {
  const AttentionVariant prefill[] = {AttentionVariant::kCausalFull,
                                      AttentionVariant::kSlidingWindow,
                                      AttentionVariant::kNonCausal};
  for (std::size_t L : {1, 5, 16, 33}) {
    for (std::size_t lp : {std::size_t{1}, L / 2 + 1, L}) {
      for (std::size_t lc : {1, 4, 7, 64}) {
        for (std::size_t w : {1, 3, 10, 100}) {
          for (AttentionVariant v : prefill) {
            const ChunkPlan p = make_prefill_plan(v, L, lp, lc, w);
            check_plan_coverage(p, mask_for(v, w, L - lp));
          }
          const ChunkPlan d = make_decode_plan(L, lc, w);
          check_plan_coverage(d, AttentionMask::sliding_window(w));
        }
        check_plan_coverage(make_decode_plan(L, lc), AttentionMask::causal());
      }
    }
  }
}

TEST_CASE("prefill continuation matches the reference with an offset") {
  const GqaLayout layout{4, 2, 8};
  std::vector<MatrixF> q, k, v;
  for (std::size_t h = 0; h < 4; ++h) q.push_back(random_matrix(5, 8, 40 + h));
  for (std::size_t g = 0; g < 2; ++g) {
    k.push_back(random_matrix(21, 8, 50 + g));
    v.push_back(random_matrix(21, 8, 60 + g));
  }
  const float scale = default_scale(8);
  for (AttentionVariant var :
       {AttentionVariant::kCausalFull, AttentionVariant::kSlidingWindow}) {
    const ChunkPlan plan = make_prefill_plan(var, 21, 5, 4, 6);
    const auto got =
        flowqkv_prefill(q, k, v, layout, plan, scale, OutputRounding::kNone);
    const auto ref =
        gqa_attention_ref(q, k, v, layout, mask_for(var, 6, 16), scale);
    for (std::size_t h = 0; h < 4; ++h) CHECK(max_rel_error(got[h], ref[h]) < 1e-5);
  }
}

TEST_CASE("decode sweeps grouped heads together") {
  const GqaLayout layout{4, 2, 16};
  const MatrixF q = random_matrix(4, 16, 70);
  const std::vector<MatrixF> k{random_matrix(45, 16, 71), random_matrix(45, 16, 72)};
  const std::vector<MatrixF> v{random_matrix(45, 16, 73), random_matrix(45, 16, 74)};
  const float scale = default_scale(16);
  for (std::size_t window : {0, 9}) {
    const ChunkPlan plan = make_decode_plan(45, 8, window);
    const MatrixF got =
        flowkv_decode(q, k, v, layout, plan, scale, OutputRounding::kNone);
    const AttentionMask mask = window == 0 ? AttentionMask::causal()
                                           : AttentionMask::sliding_window(window);
    for (std::size_t h = 0; h < 4; ++h) {
      const auto ref = decode_attention_ref(q.row(h), k[h / 2], v[h / 2], mask, scale);
      CHECK(max_rel_error(got.row(h), ref) < 1e-5);
    }
  }
}

TEST_CASE("first decode token attends to itself") {
  const GqaLayout layout{2, 1, 4};
  const MatrixF q = random_matrix(2, 4, 80);
  const std::vector<MatrixF> k{random_matrix(1, 4, 81)};
  const std::vector<MatrixF> v{random_matrix(1, 4, 82)};
  const MatrixF o = flowkv_decode(q, k, v, layout, make_decode_plan(1, 32), 0.5f,
                                  OutputRounding::kNone);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(o(0, c) == v[0](0, c));
    CHECK(o(1, c) == v[0](0, c));
  }
}

TEST_CASE("bf16 output rounding") {
  const GqaLayout layout{1, 1, 8};
  const std::vector<MatrixF> q{random_matrix(8, 8, 90)};
  const std::vector<MatrixF> k{random_matrix(8, 8, 91)};
  const std::vector<MatrixF> v{random_matrix(8, 8, 92)};
  const ChunkPlan plan = make_prefill_plan(AttentionVariant::kCausalFull, 8, 8, 4);
  const auto out = flowqkv_prefill(q, k, v, layout, plan, 0.3f);
  for (float x : out[0].data()) CHECK(round_bf16(x) == x);
  CHECK_THROWS_AS(flowqkv_prefill(q, k, v, layout, make_decode_plan(8, 4), 0.3f),
                  InvalidArgument);
}

TEST_CASE("read bandwidth formula") {
  CHECK(u_mem_rd(2, 2048, 256, 8, 8, 1e-3) == 4718592000.0);
  CHECK_THROWS_AS(u_mem_rd(2, 2048, 256, 8, 8, 0), InvalidArgument);
  // Halving the chunk length raises only the (1 + L/L_c) factor.
  CHECK(u_mem_rd(2, 2048, 128, 8, 8, 1e-3) ==
        doctest::Approx(4718592000.0 * 17.0 / 9.0));
}

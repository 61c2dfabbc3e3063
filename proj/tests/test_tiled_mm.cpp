// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "flowkern/errors.hpp"
#include "flowkern/tiled_mm.hpp"
#include "flowkern/verify/oracle.hpp"

using namespace flowkern;
using verify::random_matrix;

namespace {

MatrixF bf16_random(std::size_t r, std::size_t c, std::uint64_t seed) {
  MatrixF m = random_matrix(r, c, seed);
  round_to_bf16(m);
  return m;
}

MegatileConfig small_cfg(std::size_t m, std::size_t k, std::size_t n,
                         std::size_t cols = 8) {
  MegatileConfig c;
  c.tile = {m, k, n};
  c.cols_used = cols;
  return c;
}

}  // namespace

TEST_CASE("identity reproduces B") {
  MatrixF eye(40, 40, 0.0f);
  for (std::size_t i = 0; i < 40; ++i) eye(i, i) = 1.0f;
  const MatrixF b = bf16_random(40, 30, 1);
  CHECK(tiled_matmul(eye, b, small_cfg(16, 16, 16)) == b);
}

TEST_CASE("matches the reference product") {
  const MatrixF a = bf16_random(64, 64, 2);
  const MatrixF b = bf16_random(64, 64, 3);
  const MatrixF ref = matmul_ref(a, b);
  const MatrixF got = tiled_matmul(a, b, small_cfg(16, 16, 16), OutputRounding::kNone);
  CHECK(max_rel_error(got, ref) < 1e-3);
  const MatrixF rounded = tiled_matmul(a, b, small_cfg(16, 16, 16));
  for (float x : rounded.data()) CHECK(round_bf16(x) == x);
  CHECK(max_rel_error(rounded, ref) < 4e-3);
}

TEST_CASE("ragged shapes are padded and stripped") {
  const MatrixF a = bf16_random(33, 47, 4);
  const MatrixF b = bf16_random(47, 5, 5);
  MegatileConfig cfg = small_cfg(32, 16, 16, 1);
  cfg.e_x = 2;
  const MatrixF got = tiled_matmul(a, b, cfg, OutputRounding::kNone);
  CHECK(got.rows() == 33);
  CHECK(got.cols() == 5);
  CHECK(got == matmul_ref(a, b));
  CHECK_THROWS_AS(tiled_matmul(a, a, cfg), ShapeError);
}

TEST_CASE("padding accounting") {
  const MegatileConfig cfg = small_cfg(32, 16, 16, 1);  // 32-row megatile
  const CostReport r = evaluate_config(33, 64, 64, cfg, 2);
  CHECK(r.padding_overhead == doctest::Approx((64.0 - 33.0) / 33.0));
  CHECK(r.flops == 2.0 * 33 * 64 * 64);
  CHECK(evaluate_config(64, 64, 64, cfg, 2).padding_overhead == 0.0);
}

TEST_CASE("basic cost formula") {
  CHECK(cost_basic(512, 512, 512, 64, 64, 2) == 8388608.0);
  // One tile covering everything loads each operand once.
  CHECK(cost_basic(100, 30, 70, 100, 70, 2) == 100.0 * 30 * 2 + 30.0 * 70 * 2);
  const double a_term = 512.0 * 512 * 2 * (512.0 / 32);
  CHECK(cost_basic(512, 512, 512, 64, 32, 2) - cost_basic(512, 512, 512, 64, 64, 2) ==
        a_term / 2);
  CHECK_THROWS_AS(cost_basic(512, 512, 512, 0, 64, 2), InvalidArgument);
}

TEST_CASE("megatile cost") {
  MegatileConfig cfg = small_cfg(16, 32, 32);
  CHECK(cost_megatile(1000, 300, 700, cfg, 2) ==
        cost_basic(1000, 300, 700, 8 * 16, 4 * 32, 2));
  const double b_term = (1000.0 / 128) * 300 * 700 * 2;
  const double a1 = cost_megatile(1000, 300, 700, cfg, 2) - b_term;
  cfg.e_x = 2;
  const double a2 = cost_megatile(1000, 300, 700, cfg, 2) - b_term;
  CHECK(a2 == doctest::Approx(a1 / 2));
}

TEST_CASE("reference megatiles") {
  const auto mts = reference_megatiles();
  REQUIRE(mts.size() == 3);
  CHECK(mts[0].label() == "128x512x512@8col");
  CHECK(mts[1].label() == "256x256x512@8col");
  CHECK(mts[2].label() == "512x512x512@8col");
  const double c128 = cost_megatile(2048, 2048, 2048, mts[0], 2);
  const double c256 = cost_megatile(2048, 2048, 2048, mts[1], 2);
  const double c512 = cost_megatile(2048, 2048, 2048, mts[2], 2);
  CHECK(c512 < c256);
  CHECK(c256 < c128);
  const auto ranked = select_tile_config(2048, 2048, 2048, sim::TileArrayConfig{}, mts);
  CHECK(ranked.front().config == mts[2]);
  CHECK(ranked.back().config == mts[0]);
}

TEST_CASE("buffer fit") {
  const sim::TileArrayConfig hw;
  CHECK(l1_fit(small_cfg(64, 64, 64), hw, 2).total_bytes == 49152);
  CHECK(l1_fit(small_cfg(64, 64, 64), hw, 2).fits);
  CHECK_FALSE(l1_fit(small_cfg(128, 64, 64), hw, 2).fits);
  MegatileConfig huge = small_cfg(64, 64, 64);
  huge.e_x = huge.e_y = 8;  // 4096 x 2048 C block
  CHECK_FALSE(l2_fits(huge, hw, 2));
  for (const MegatileConfig& c : reference_megatiles()) CHECK(l2_fits(c, hw, 2));
}

TEST_CASE("selection prefers one column for short sequences") {
  const auto ranked =
      select_tile_config(16, 256, 256, sim::TileArrayConfig{}, default_candidates());
  CHECK(ranked.front().config.cols_used == 1);
  CHECK(ranked.front().cost.padding_overhead == 0.0);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].score <= ranked[i].score);
  }
}

TEST_CASE("infeasible limits") {
  sim::TileArrayConfig tiny;
  tiny.l1_bytes = 1024;
  CHECK_THROWS_AS(select_tile_config(64, 64, 64, tiny, default_candidates()),
                  InfeasibleError);
  CHECK_THROWS_AS(select_tile_config(64, 64, 64, sim::TileArrayConfig{}, {}),
                  InvalidArgument);
}

TEST_CASE("config validation") {
  MegatileConfig c = small_cfg(16, 16, 16);
  c.e_x = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_cfg(16, 16, 16);
  c.k_stage = 24;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("load/compute stages") {
  const auto mts = reference_megatiles();
  const auto st = matmul_stages(2048, 2048, 2048, mts[2], sim::TileArrayConfig{});
  REQUIRE(st.size() == 1);
  CHECK(st[0].chunk_count == 16 * 4);  // 16 megatiles x 4 K steps
  CHECK(st[0].transfer_bytes == (512.0 + 512.0) * 512 * 2);
}

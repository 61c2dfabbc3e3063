// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "flowkern/errors.hpp"
#include "flowkern/fused_dqp.hpp"
#include "flowkern/verify/oracle.hpp"

using namespace flowkern;
using verify::random_matrix;

namespace {

std::vector<Bf16> activation(std::size_t k, std::uint64_t seed) {
  const MatrixF m = random_matrix(1, k, seed);
  std::vector<Bf16> a(k);
  for (std::size_t i = 0; i < k; ++i) a[i] = bf16_round(m(0, i));
  return a;
}

}  // namespace

TEST_CASE("stripes are balanced and contiguous") {
  const FusedDqpPlan p = make_fused_dqp_plan(4, 10);
  REQUIRE(p.stripes.size() == 4);
  CHECK(p.stripes[0].size() == 3);
  CHECK(p.stripes[1].size() == 3);
  CHECK(p.stripes[2].size() == 2);
  CHECK(p.stripes[3].end == 10);
  for (std::size_t i = 1; i < 4; ++i) CHECK(p.stripes[i].begin == p.stripes[i - 1].end);
  const FusedDqpPlan wide = make_fused_dqp_plan(16, 2);
  CHECK(wide.stripes.size() == 16);
  CHECK_THROWS_AS(make_fused_dqp_plan(0, 2), InvalidArgument);
}

TEST_CASE("matches the dequantize-then-dense product") {
  for (auto [m, k] : {std::pair<std::size_t, std::size_t>{32, 256},
                      {33, 257},
                      {1, 1},
                      {100, 700}}) {
    const q4nx::Tensor w = q4nx::quantize_tensor(random_matrix(m, k, m * 7 + k));
    const auto a = activation(k, k);
    std::vector<float> af(k);
    for (std::size_t i = 0; i < k; ++i) af[i] = a[i].to_float();
    const auto ref = verify::dense_matvec(w, af);
    const auto y = fused_dqp_mvm(w, std::span<const Bf16>(a),
                                 make_fused_dqp_plan(4, w.block_rows()),
                                 OutputRounding::kNone);
    REQUIRE(y.size() == m);
    CHECK(max_rel_error(y, std::vector<float>(ref.begin(), ref.end())) < 1e-4);
  }
}

TEST_CASE("result is bitwise independent of the worker count") {
  const q4nx::Tensor w = q4nx::quantize_tensor(random_matrix(300, 900, 11));
  const auto a = activation(900, 12);
  std::vector<float> base;
  for (std::size_t workers : {1, 2, 4, 16}) {
    FusedDqpPlan plan = make_fused_dqp_plan(workers, w.block_rows());
    plan.parallel = true;
    const auto y = fused_dqp_mvm(w, std::span<const Bf16>(a), plan);
    if (base.empty()) base = y;
    CHECK(y == base);
  }
}

TEST_CASE("float and bf16 activations agree on bf16 inputs") {
  const q4nx::Tensor w = q4nx::quantize_tensor(random_matrix(64, 256, 13));
  const auto a = activation(256, 14);
  std::vector<float> af(256);
  for (std::size_t i = 0; i < 256; ++i) af[i] = a[i].to_float();
  const auto plan = make_fused_dqp_plan(2, w.block_rows());
  CHECK(fused_dqp_mvm(w, std::span<const Bf16>(a), plan) ==
        fused_dqp_mvm(w, std::span<const float>(af), plan));
}

TEST_CASE("shape and padding errors") {
  const q4nx::Tensor w = q4nx::quantize_tensor(random_matrix(40, 300, 15));
  const auto plan = make_fused_dqp_plan(1, w.block_rows());
  std::vector<float> bad(299, 1.0f);
  CHECK_THROWS_AS(fused_dqp_mvm(w, std::span<const float>(bad), plan), ShapeError);
  std::vector<float> padded(512, 0.0f);
  CHECK(fused_dqp_mvm(w, std::span<const float>(padded), plan).size() == 40);
  padded[400] = 1.0f;
  CHECK_THROWS_AS(fused_dqp_mvm(w, std::span<const float>(padded), plan), ShapeError);
  std::vector<float> zeros(300, 0.0f);
  CHECK_THROWS_AS(
      fused_dqp_mvm(w, std::span<const float>(zeros), make_fused_dqp_plan(1, 5)),
      ShapeError);
}

TEST_CASE("activation segments are broadcast once per block column") {
  const FusedDqpPlan plan = make_fused_dqp_plan(3, 4);
  const auto ev = broadcast_schedule(plan, 128, 600);  // 4 x 3 blocks
  std::size_t segments = 0, blocks = 0;
  for (const TransferEvent& e : ev) {
    if (e.kind == TransferKind::kActivationSegment) {
      CHECK(e.worker == kBroadcast);
      CHECK(e.bytes == 512);
      CHECK(e.block_col == segments);
      ++segments;
    } else {
      CHECK(e.bytes == 5120);
      CHECK(e.block_col + 1 == segments);  // segment precedes its blocks
      ++blocks;
    }
  }
  CHECK(segments == 3);
  CHECK(blocks == 12);
}

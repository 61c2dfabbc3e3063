// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "flowkern/errors.hpp"
#include "flowkern/model_layer.hpp"
#include "flowkern/verify/oracle.hpp"

#include <cmath>
#include <random>

using namespace flowkern;
using namespace flowkern::model;

namespace {

LayerConfig desk(LayerKind kind = LayerKind::kLocal) {
  LayerConfig c;
  c.kind = kind;
  c.window = 1024;
  return c;
}

MatrixF tokens(std::size_t n, std::uint64_t seed) {
  MatrixF x = verify::random_matrix(n, 64, seed, -2.0f, 2.0f);
  round_to_bf16(x);
  return x;
}

MatrixF rows(const MatrixF& x, std::size_t begin, std::size_t count) {
  MatrixF out(count, x.cols());
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(x.row(begin + i).begin(), x.row(begin + i).end(), out.row(i).begin());
  }
  return out;
}

KernelSettings f32() {
  KernelSettings s;
  s.precision = Precision::kFloat32;
  return s;
}

}  // namespace

TEST_CASE("rmsnorm") {
  const std::vector<float> zero(8, 0.0f), g0(8, 0.0f);
  for (float v : rmsnorm(zero, g0)) CHECK(v == 0.0f);
  const std::vector<float> ones(4, 1.0f), g4(4, 0.0f);
  for (float v : rmsnorm(ones, g4)) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));

  std::mt19937 rng(1);
  std::normal_distribution<float> dist;
  std::vector<float> x(64), g(64);
  for (auto& v : x) v = dist(rng);
  for (auto& v : g) v = 0.1f * dist(rng);
  double ms = 0.0;
  for (float v : x) ms += double(v) * v;
  ms /= 64;
  const auto y = rmsnorm(x, g, 1e-6f);
  for (std::size_t i = 0; i < 64; ++i) {
    const double ref = x[i] / std::sqrt(ms + 1e-6) * (1.0 + g[i]);
    CHECK(std::abs(y[i] - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
  }
  CHECK_THROWS_AS(rmsnorm(x, g4), ShapeError);
  for (float v : qk_norm(zero, g0)) CHECK(v == 0.0f);
}

TEST_CASE("rope") {
  const std::vector<float> x{0.3f, -1.2f, 0.5f, 2.0f};
  CHECK(rope(x, 0) == x);
  const std::vector<float> pair{1.0f, 0.0f};
  const auto r = rope(pair, 3, 10000.0f);
  CHECK(r[0] == doctest::Approx(std::cos(3.0)));
  CHECK(r[1] == doctest::Approx(std::sin(3.0)));
  CHECK_THROWS_AS(rope(std::vector<float>{1, 2, 3}, 1), InvalidArgument);

  // q·k after rotation depends only on the position gap.
  const std::vector<float> q{0.7f, -0.4f}, k{0.2f, 0.9f};
  auto dot = [](const std::vector<float>& a, const std::vector<float>& b) {
    return double(a[0]) * b[0] + double(a[1]) * b[1];
  };
  const double base = dot(rope(q, 5), rope(k, 2));
  for (std::size_t p : {7, 40, 301}) {
    CHECK(dot(rope(q, p), rope(k, p - 3)) == doctest::Approx(base).epsilon(1e-5));
  }
}

TEST_CASE("gelu and the MLP") {
  CHECK(gelu(0.0f) == 0.0f);
  CHECK(gelu(12.0f) == doctest::Approx(12.0f));
  CHECK(gelu(-12.0f) == doctest::Approx(0.0f));
  const LayerConfig cfg = desk();
  const LayerWeights w = random_layer_weights(cfg, 3);
  const std::vector<float> zero(64, 0.0f);
  for (float v : geglu_mlp(zero, w.w_gate, w.w_up, w.w_down)) CHECK(v == 0.0f);
  const std::vector<float> bad(63, 0.0f);
  CHECK_THROWS_AS(geglu_mlp(bad, w.w_gate, w.w_up, w.w_down), ShapeError);
}

TEST_CASE("layer pattern") {
  CHECK(layer_kind(0) == LayerKind::kLocal);
  CHECK(layer_kind(4) == LayerKind::kLocal);
  CHECK(layer_kind(5) == LayerKind::kGlobal);
  std::vector<std::size_t> globals;
  for (std::size_t i = 0; i < 34; ++i) {
    if (layer_kind(i) == LayerKind::kGlobal) globals.push_back(i);
  }
  CHECK(globals == std::vector<std::size_t>{5, 11, 17, 23, 29});
  const ModelConfig mc = ModelConfig::gemma_pattern(6, desk());
  CHECK(mc.layers[5].kind == LayerKind::kGlobal);
  CHECK(mc.layers[0].kind == LayerKind::kLocal);
}

TEST_CASE("config validation") {
  LayerConfig c = desk();
  c.kv_groups = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = desk();
  c.head_dim = 15;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c.use_rope = false;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("weights are reproducible from the seed") {
  const LayerConfig c = desk();
  CHECK(random_layer_weights(c, 9).wq == random_layer_weights(c, 9).wq);
  CHECK_FALSE(random_layer_weights(c, 9).wq == random_layer_weights(c, 10).wq);
}

TEST_CASE("prefill matches the dense layer") {
  const LayerConfig cfg = desk(LayerKind::kGlobal);
  const LayerWeights w = random_layer_weights(cfg, 4);
  const TransformerLayer layer(cfg, w);
  const MatrixF x = tokens(8, 5);
  LayerCache cache(2, 16);
  const MatrixF got = layer.prefill(x, cache, f32());
  const MatrixF ref = verify::dense_layer_forward(cfg, w, x);
  CHECK(max_rel_error(got, ref) < 1e-3);
  CHECK(cache.length() == 8);
}

TEST_CASE("an inactive window makes local equal global") {
  const LayerWeights w = random_layer_weights(desk(), 6);
  const TransformerLayer local(desk(LayerKind::kLocal), w);
  const TransformerLayer global(desk(LayerKind::kGlobal), w);
  const MatrixF x = tokens(20, 7);
  LayerCache a(2, 16), b(2, 16);
  CHECK(local.prefill(x, a, KernelSettings{}) == global.prefill(x, b, KernelSettings{}));
}

TEST_CASE("two-turn prefill equals one-shot prefill") {
  LayerConfig cfg = desk();
  cfg.window = 6;
  const TransformerLayer layer(cfg, random_layer_weights(cfg, 8));
  const MatrixF x = tokens(19, 9);
  LayerCache one(2, 16), two(2, 16);
  const MatrixF full = layer.prefill(x, one, f32());
  (void)layer.prefill(rows(x, 0, 11), two, f32());
  const MatrixF turn2 = layer.prefill(rows(x, 11, 8), two, f32());
  CHECK(max_rel_error(turn2, rows(full, 11, 8)) < 1e-3);
  CHECK(two.length() == 19);
}

TEST_CASE("decode matches the teacher-forced prefill row") {
  LayerConfig cfg = desk();
  cfg.window = 5;
  const TransformerLayer layer(cfg, random_layer_weights(cfg, 10));
  const MatrixF x = tokens(12, 11);
  LayerCache full_cache(2, 16), step_cache(2, 16);
  const MatrixF full = layer.prefill(x, full_cache, KernelSettings{});
  (void)layer.prefill(rows(x, 0, 1), step_cache, KernelSettings{});
  for (std::size_t t = 1; t < 12; ++t) {
    const auto y = layer.decode(x.row(t), step_cache, KernelSettings{});
    CHECK(max_rel_error(y, full.row(t)) < 1e-3);
  }
}

TEST_CASE("single-token prefill attends to itself only") {
  LayerConfig cfg = desk(LayerKind::kGlobal);
  const LayerWeights w = random_layer_weights(cfg, 12);
  const TransformerLayer layer(cfg, w);
  const MatrixF x = tokens(1, 13);
  LayerCache cache(2, 16);
  const MatrixF got = layer.prefill(x, cache, f32());
  CHECK(max_rel_error(got, verify::dense_layer_forward(cfg, w, x)) < 1e-3);
}

TEST_CASE("vision stack is bidirectional without decode") {
  const ModelConfig mc = ModelConfig::vision(2, desk());
  CHECK(mc.layers[0].kind == LayerKind::kBidirectional);
  CHECK(mc.layers[0].kv_groups == mc.layers[0].heads);
  Model m(mc, 14);
  (void)m.prefill(tokens(4, 15));
  const std::vector<float> x(64, 0.1f);
  CHECK_THROWS_AS(m.decode(x), InvalidArgument);
}

TEST_CASE("model wiring") {
  Model m(ModelConfig::gemma_pattern(3, desk()), 16);
  CHECK(m.context_len() == 0);
  (void)m.prefill(tokens(5, 17));
  CHECK(m.context_len() == 5);
  (void)m.decode(tokens(1, 18).row(0));
  CHECK(m.context_len() == 6);
  for (const LayerCache& c : m.caches()) CHECK(c.length() == 6);

  const TransformerLayer& l0 = m.layers()[0];
  LayerCache wrong(1, 16);
  CHECK_THROWS_AS(l0.prefill(tokens(2, 19), wrong, KernelSettings{}), ShapeError);
  CHECK_THROWS_AS(LayerCache(std::vector<MatrixF>{MatrixF(2, 4)},
                             std::vector<MatrixF>{MatrixF(3, 4)}),
                  ShapeError);
}

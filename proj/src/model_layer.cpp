// SPDX-License-Identifier: Apache-2.0
#include "flowkern/model_layer.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "flowkern/errors.hpp"
#include "flowkern/fused_dqp.hpp"
#include "flowkern/tiled_mm.hpp"

namespace flowkern::model {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kLocal: return "local";
    case LayerKind::kGlobal: return "global";
    case LayerKind::kBidirectional: return "bidirectional";
  }
  return "?";
}

LayerKind layer_kind(std::size_t index) {
  return (index + 1) % 6 == 0 ? LayerKind::kGlobal : LayerKind::kLocal;
}

void LayerConfig::validate() const {
  if (model_dim == 0 || mlp_hidden == 0) {
    throw InvalidArgument("layer config: dims must be positive");
  }
  layout().validate();
  if (use_rope && head_dim % 2 != 0) {
    throw InvalidArgument("layer config: RoPE needs an even head dim");
  }
  if (kind == LayerKind::kLocal && window == 0) {
    throw InvalidArgument("layer config: local layer needs window > 0");
  }
}

namespace {

q4nx::Tensor random_tensor(std::size_t rows, std::size_t cols,
                           std::mt19937_64& rng) {
  std::normal_distribution<float> dist(
      0.0f, 1.0f / std::sqrt(static_cast<float>(cols)));
  MatrixF w(rows, cols);
  for (float& x : w.data()) x = dist(rng);
  return q4nx::quantize_tensor(w);
}

std::vector<float> random_gamma(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-0.1f, 0.1f);
  std::vector<float> g(n);
  for (float& x : g) x = dist(rng);
  return g;
}

void narrow(std::span<float> v, Precision p) {
  if (p != Precision::kMixedBf16) return;
  for (float& x : v) x = round_bf16(x);
}

OutputRounding rounding_for(Precision p) {
  return p == Precision::kMixedBf16 ? OutputRounding::kBf16
                                    : OutputRounding::kNone;
}

}  // namespace

LayerWeights random_layer_weights(const LayerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = cfg.model_dim;
  const std::size_t hd = cfg.heads * cfg.head_dim;
  const std::size_t gd = cfg.kv_groups * cfg.head_dim;
  const std::size_t F = cfg.mlp_hidden;
  LayerWeights w;
  w.wq = random_tensor(hd, D, rng);
  w.wk = random_tensor(gd, D, rng);
  w.wv = random_tensor(gd, D, rng);
  w.wo = random_tensor(D, hd, rng);
  w.w_gate = random_tensor(F, D, rng);
  w.w_up = random_tensor(F, D, rng);
  w.w_down = random_tensor(D, F, rng);
  w.input_norm = random_gamma(D, rng);
  w.post_attn_norm = random_gamma(D, rng);
  w.pre_ffn_norm = random_gamma(D, rng);
  w.post_ffn_norm = random_gamma(D, rng);
  w.q_norm = random_gamma(cfg.head_dim, rng);
  w.k_norm = random_gamma(cfg.head_dim, rng);
  return w;
}

std::vector<float> rmsnorm(std::span<const float> x,
                           std::span<const float> gamma, float eps) {
  if (x.size() != gamma.size() || x.empty()) {
    throw ShapeError("rmsnorm: gamma length does not match input");
  }
  float sum = 0.0f;
  for (float v : x) sum += v * v;
  const float inv =
      1.0f / std::sqrt(sum / static_cast<float>(x.size()) + eps);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * inv * (1.0f + gamma[i]);
  }
  return out;
}

std::vector<float> rope(std::span<const float> x, std::size_t position,
                        float base) {
  if (x.size() % 2 != 0) throw InvalidArgument("rope: odd head dim");
  const double d = static_cast<double>(x.size());
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size() / 2; ++i) {
    const double theta = static_cast<double>(position) *
                         std::pow(static_cast<double>(base),
                                  -2.0 * static_cast<double>(i) / d);
    const float c = static_cast<float>(std::cos(theta));
    const float s = static_cast<float>(std::sin(theta));
    const float a = x[2 * i];
    const float b = x[2 * i + 1];
    out[2 * i] = a * c - b * s;
    out[2 * i + 1] = a * s + b * c;
  }
  return out;
}

float gelu(float u) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * u * (1.0f + std::tanh(kC * (u + 0.044715f * u * u * u)));
}

std::vector<float> geglu_mlp(std::span<const float> x,
                             const q4nx::Tensor& w_gate,
                             const q4nx::Tensor& w_up,
                             const q4nx::Tensor& w_down, Precision precision,
                             std::size_t workers) {
  const OutputRounding r = rounding_for(precision);
  const auto plan_in = make_fused_dqp_plan(workers, w_gate.block_rows());
  auto gate = fused_dqp_mvm(w_gate, x, plan_in, r);
  auto up = fused_dqp_mvm(w_up, x, plan_in, r);
  std::vector<float> act(gate.size());
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = gelu(gate[i]) * up[i];
  narrow(act, precision);
  return fused_dqp_mvm(w_down, act,
                       make_fused_dqp_plan(workers, w_down.block_rows()), r);
}

LayerCache::LayerCache(std::size_t groups, std::size_t head_dim)
    : keys_(groups, MatrixF(0, head_dim)),
      values_(groups, MatrixF(0, head_dim)) {}

LayerCache::LayerCache(std::vector<MatrixF> keys, std::vector<MatrixF> values)
    : keys_(std::move(keys)), values_(std::move(values)) {
  if (keys_.size() != values_.size() || keys_.empty()) {
    throw ShapeError("layer cache: key/value group counts differ");
  }
  length_ = keys_[0].rows();
  for (std::size_t g = 0; g < keys_.size(); ++g) {
    if (keys_[g].rows() != length_ || values_[g].rows() != length_ ||
        keys_[g].cols() != values_[g].cols()) {
      throw ShapeError("layer cache: ragged groups");
    }
  }
}

void LayerCache::append(const MatrixF& k_rows, const MatrixF& v_rows) {
  if (k_rows.rows() != keys_.size() || v_rows.rows() != values_.size()) {
    throw ShapeError("layer cache: append needs one row per group");
  }
  for (std::size_t g = 0; g < keys_.size(); ++g) {
    keys_[g].append_row(k_rows.row(g));
    values_[g].append_row(v_rows.row(g));
  }
  ++length_;
}

TransformerLayer::TransformerLayer(LayerConfig cfg, LayerWeights weights)
    : cfg_(cfg), w_(std::move(weights)) {
  cfg_.validate();
  const std::size_t D = cfg_.model_dim;
  const std::size_t hd = cfg_.heads * cfg_.head_dim;
  const std::size_t gd = cfg_.kv_groups * cfg_.head_dim;
  const std::size_t F = cfg_.mlp_hidden;
  auto check = [](const q4nx::Tensor& t, std::size_t r, std::size_t c) {
    if (t.logical_rows != r || t.logical_cols != c) {
      throw ShapeError("transformer layer: weight shape mismatch");
    }
  };
  check(w_.wq, hd, D);
  check(w_.wk, gd, D);
  check(w_.wv, gd, D);
  check(w_.wo, D, hd);
  check(w_.w_gate, F, D);
  check(w_.w_up, F, D);
  check(w_.w_down, D, F);
  if (w_.input_norm.size() != D || w_.post_attn_norm.size() != D ||
      w_.pre_ffn_norm.size() != D || w_.post_ffn_norm.size() != D ||
      w_.q_norm.size() != cfg_.head_dim || w_.k_norm.size() != cfg_.head_dim) {
    throw ShapeError("transformer layer: norm weight length mismatch");
  }
  auto dense = [](const q4nx::Tensor& t) {
    return transpose(to_float(q4nx::dequantize_tensor(t)));
  };
  dense_.wq = dense(w_.wq);
  dense_.wk = dense(w_.wk);
  dense_.wv = dense(w_.wv);
  dense_.wo = dense(w_.wo);
  dense_.w_gate = dense(w_.w_gate);
  dense_.w_up = dense(w_.w_up);
  dense_.w_down = dense(w_.w_down);
}

MatrixF TransformerLayer::project(const MatrixF& x, const MatrixF& w_t,
                                  const KernelSettings& s) const {
  const auto ranked =
      select_tile_config(x.rows(), x.cols(), w_t.cols(),
                         sim::TileArrayConfig{}, default_candidates());
  return tiled_matmul(x, w_t, ranked.front().config,
                      rounding_for(s.precision));
}

std::vector<float> TransformerLayer::project(std::span<const float> x,
                                             const q4nx::Tensor& w,
                                             const KernelSettings& s) const {
  return fused_dqp_mvm(w, x, make_fused_dqp_plan(s.dqp_workers, w.block_rows()),
                       rounding_for(s.precision));
}

AttentionVariant TransformerLayer::variant() const {
  switch (cfg_.kind) {
    case LayerKind::kLocal: return AttentionVariant::kSlidingWindow;
    case LayerKind::kGlobal: return AttentionVariant::kCausalFull;
    case LayerKind::kBidirectional: return AttentionVariant::kNonCausal;
  }
  return AttentionVariant::kCausalFull;
}

namespace {

// Applies QK-norm and RoPE to one head slice and narrows it.
std::vector<float> prepare_head(std::span<const float> x,
                                std::span<const float> gamma,
                                std::size_t position, const LayerConfig& cfg,
                                bool normalize, Precision p) {
  std::vector<float> h(x.begin(), x.end());
  if (normalize && cfg.use_qk_norm) h = qk_norm(h, gamma, cfg.norm_eps);
  if (normalize && cfg.use_rope) h = rope(h, position, cfg.rope_base);
  narrow(h, p);
  return h;
}

}  // namespace

MatrixF TransformerLayer::prefill(const MatrixF& x, LayerCache& cache,
                                  const KernelSettings& s) const {
  const std::size_t D = cfg_.model_dim;
  const std::size_t H = cfg_.heads;
  const std::size_t G = cfg_.kv_groups;
  const std::size_t d = cfg_.head_dim;
  const std::size_t Lp = x.rows();
  const Precision p = s.precision;
  if (x.cols() != D || Lp == 0) throw ShapeError("prefill: X must be L_p×D");
  if (cache.groups() != G) throw ShapeError("prefill: cache group mismatch");

  MatrixF xn(Lp, D);
  for (std::size_t i = 0; i < Lp; ++i) {
    auto r = rmsnorm(x.row(i), w_.input_norm, cfg_.norm_eps);
    narrow(r, p);
    std::copy(r.begin(), r.end(), xn.row(i).begin());
  }
  const MatrixF q = project(xn, dense_.wq, s);
  const MatrixF k = project(xn, dense_.wk, s);
  const MatrixF v = project(xn, dense_.wv, s);

  const std::size_t L0 = cache.length();
  std::vector<MatrixF> q_heads(H, MatrixF(Lp, d));
  for (std::size_t i = 0; i < Lp; ++i) {
    const std::size_t pos = L0 + i;
    for (std::size_t h = 0; h < H; ++h) {
      auto qh = prepare_head(q.row(i).subspan(h * d, d), w_.q_norm, pos, cfg_,
                             true, p);
      std::copy(qh.begin(), qh.end(), q_heads[h].row(i).begin());
    }
    MatrixF k_rows(G, d), v_rows(G, d);
    for (std::size_t g = 0; g < G; ++g) {
      auto kh = prepare_head(k.row(i).subspan(g * d, d), w_.k_norm, pos, cfg_,
                             true, p);
      auto vh = prepare_head(v.row(i).subspan(g * d, d), {}, pos, cfg_, false,
                             p);
      std::copy(kh.begin(), kh.end(), k_rows.row(g).begin());
      std::copy(vh.begin(), vh.end(), v_rows.row(g).begin());
    }
    cache.append(k_rows, v_rows);
  }

  const ChunkPlan plan =
      make_prefill_plan(variant(), cache.length(), Lp, s.prefill_chunk,
                        cfg_.kind == LayerKind::kLocal ? cfg_.window : 0);
  const auto attn =
      flowqkv_prefill(q_heads, cache.keys(), cache.values(), cfg_.layout(),
                      plan, default_scale(d), rounding_for(p));
  MatrixF concat(Lp, H * d);
  for (std::size_t i = 0; i < Lp; ++i) {
    for (std::size_t h = 0; h < H; ++h) {
      auto src = attn[h].row(i);
      std::copy(src.begin(), src.end(), concat.row(i).begin() + h * d);
    }
  }
  const MatrixF o = project(concat, dense_.wo, s);

  MatrixF hres(Lp, D), u(Lp, D);
  for (std::size_t i = 0; i < Lp; ++i) {
    auto on = rmsnorm(o.row(i), w_.post_attn_norm, cfg_.norm_eps);
    for (std::size_t c = 0; c < D; ++c) hres(i, c) = x(i, c) + on[c];
    narrow(hres.row(i), p);
    std::vector<float> ui(hres.row(i).begin(), hres.row(i).end());
    if (cfg_.pre_ffn_norm) ui = rmsnorm(ui, w_.pre_ffn_norm, cfg_.norm_eps);
    narrow(ui, p);
    std::copy(ui.begin(), ui.end(), u.row(i).begin());
  }
  const MatrixF gate = project(u, dense_.w_gate, s);
  const MatrixF up = project(u, dense_.w_up, s);
  MatrixF act(Lp, cfg_.mlp_hidden);
  for (std::size_t j = 0; j < act.size(); ++j) {
    act.data()[j] = gelu(gate.data()[j]) * up.data()[j];
  }
  narrow(act.data(), p);
  const MatrixF down = project(act, dense_.w_down, s);

  MatrixF out(Lp, D);
  for (std::size_t i = 0; i < Lp; ++i) {
    std::vector<float> dn(down.row(i).begin(), down.row(i).end());
    if (cfg_.post_ffn_norm) dn = rmsnorm(dn, w_.post_ffn_norm, cfg_.norm_eps);
    for (std::size_t c = 0; c < D; ++c) out(i, c) = hres(i, c) + dn[c];
    narrow(out.row(i), p);
  }
  return out;
}

std::vector<float> TransformerLayer::decode(std::span<const float> x,
                                            LayerCache& cache,
                                            const KernelSettings& s) const {
  const std::size_t D = cfg_.model_dim;
  const std::size_t H = cfg_.heads;
  const std::size_t G = cfg_.kv_groups;
  const std::size_t d = cfg_.head_dim;
  const Precision p = s.precision;
  if (x.size() != D) throw ShapeError("decode: x must have D entries");
  if (cache.groups() != G) throw ShapeError("decode: cache group mismatch");
  if (cfg_.kind == LayerKind::kBidirectional) {
    throw InvalidArgument("decode: bidirectional layers have no decode phase");
  }

  auto xn = rmsnorm(x, w_.input_norm, cfg_.norm_eps);
  narrow(xn, p);
  const auto q = project(xn, w_.wq, s);
  const auto k = project(xn, w_.wk, s);
  const auto v = project(xn, w_.wv, s);

  const std::size_t pos = cache.length();
  const std::span<const float> qs(q), ks(k), vs(v);
  MatrixF q_heads(H, d);
  for (std::size_t h = 0; h < H; ++h) {
    auto qh = prepare_head(qs.subspan(h * d, d), w_.q_norm, pos, cfg_, true, p);
    std::copy(qh.begin(), qh.end(), q_heads.row(h).begin());
  }
  MatrixF k_rows(G, d), v_rows(G, d);
  for (std::size_t g = 0; g < G; ++g) {
    auto kh = prepare_head(ks.subspan(g * d, d), w_.k_norm, pos, cfg_, true, p);
    auto vh = prepare_head(vs.subspan(g * d, d), {}, pos, cfg_, false, p);
    std::copy(kh.begin(), kh.end(), k_rows.row(g).begin());
    std::copy(vh.begin(), vh.end(), v_rows.row(g).begin());
  }
  cache.append(k_rows, v_rows);

  const ChunkPlan plan =
      make_decode_plan(cache.length(), s.decode_chunk,
                       cfg_.kind == LayerKind::kLocal ? cfg_.window : 0);
  const MatrixF attn =
      flowkv_decode(q_heads, cache.keys(), cache.values(), cfg_.layout(), plan,
                    default_scale(d), rounding_for(p));
  const auto o = project(attn.data(), w_.wo, s);

  auto on = rmsnorm(o, w_.post_attn_norm, cfg_.norm_eps);
  std::vector<float> hres(D);
  for (std::size_t c = 0; c < D; ++c) hres[c] = x[c] + on[c];
  narrow(hres, p);
  std::vector<float> u = hres;
  if (cfg_.pre_ffn_norm) u = rmsnorm(u, w_.pre_ffn_norm, cfg_.norm_eps);
  narrow(u, p);

  const auto gate = project(u, w_.w_gate, s);
  const auto up = project(u, w_.w_up, s);
  std::vector<float> act(gate.size());
  for (std::size_t j = 0; j < act.size(); ++j) act[j] = gelu(gate[j]) * up[j];
  narrow(act, p);
  auto dn = project(act, w_.w_down, s);
  if (cfg_.post_ffn_norm) dn = rmsnorm(dn, w_.post_ffn_norm, cfg_.norm_eps);
  std::vector<float> out(D);
  for (std::size_t c = 0; c < D; ++c) out[c] = hres[c] + dn[c];
  narrow(out, p);
  return out;
}

ModelConfig ModelConfig::gemma_pattern(std::size_t layer_count,
                                       LayerConfig base) {
  ModelConfig m;
  for (std::size_t i = 0; i < layer_count; ++i) {
    LayerConfig c = base;
    c.kind = layer_kind(i);
    m.layers.push_back(c);
  }
  return m;
}

ModelConfig ModelConfig::vision(std::size_t layer_count, LayerConfig base) {
  ModelConfig m;
  base.kind = LayerKind::kBidirectional;
  base.kv_groups = base.heads;
  base.use_rope = false;
  base.use_qk_norm = false;
  m.layers.assign(layer_count, base);
  return m;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    const LayerConfig& lc = cfg_.layers[i];
    layers_.emplace_back(lc, random_layer_weights(lc, seed + 1000003ULL * i));
    caches_.emplace_back(lc.kv_groups, lc.head_dim);
  }
}

Model::Model(ModelConfig cfg, std::vector<LayerWeights> weights)
    : cfg_(std::move(cfg)) {
  if (weights.size() != cfg_.layers.size()) {
    throw ShapeError("model: one weight set per layer required");
  }
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    const LayerConfig& lc = cfg_.layers[i];
    layers_.emplace_back(lc, std::move(weights[i]));
    caches_.emplace_back(lc.kv_groups, lc.head_dim);
  }
}

MatrixF Model::prefill(const MatrixF& x) {
  MatrixF h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].prefill(h, caches_[i], cfg_.kernels);
  }
  return h;
}

std::vector<float> Model::decode(std::span<const float> x) {
  std::vector<float> h(x.begin(), x.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].decode(h, caches_[i], cfg_.kernels);
  }
  return h;
}

std::size_t Model::context_len() const {
  return caches_.empty() ? 0 : caches_.front().length();
}

}  // namespace flowkern::model

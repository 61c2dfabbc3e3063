// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale Gemma3-style decoder layer wired through the kernel modules:
// prefill uses dequantized weights with tiled_matmul and FlowQKV, decode uses
// FusedDQP and FlowKV. Block order:
//
//   h   = x + post_attn_norm(W_o · attn(rope(qk_norm(W_{q,k,v} · norm(x)))))
//   out = h + post_ffn_norm(W_down · (gelu(W_gate · u) ⊙ (W_up · u))),
//         u = pre_ffn_norm(h)
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowkern/chunked_attn.hpp"
#include "flowkern/matrix.hpp"
#include "flowkern/q4nx.hpp"
#include "flowkern/refkern.hpp"

namespace flowkern::model {

enum class LayerKind { kLocal, kGlobal, kBidirectional };

const char* to_string(LayerKind k);

/// Five sliding-window layers per global layer, starting with a local one:
/// layer i is global iff (i + 1) % 6 == 0.
LayerKind layer_kind(std::size_t index);

/// kMixedBf16 narrows activations at kernel boundaries and the KV cache to
/// bf16; kFloat32 keeps everything after weight dequantization in float32.
enum class Precision { kMixedBf16, kFloat32 };

struct LayerConfig {
  std::size_t model_dim = 64;   // D
  std::size_t heads = 4;        // H
  std::size_t kv_groups = 2;    // G
  std::size_t head_dim = 16;    // d
  std::size_t window = 1024;    // L_w for local layers
  std::size_t mlp_hidden = 128;
  LayerKind kind = LayerKind::kLocal;
  float rope_base = 10000.0f;
  float norm_eps = 1e-6f;
  bool use_rope = true;
  bool use_qk_norm = true;
  bool pre_ffn_norm = true;
  bool post_ffn_norm = true;

  GqaLayout layout() const { return {heads, kv_groups, head_dim}; }
  void validate() const;
};

struct LayerWeights {
  q4nx::Tensor wq;      // H·d × D
  q4nx::Tensor wk;      // G·d × D
  q4nx::Tensor wv;      // G·d × D
  q4nx::Tensor wo;      // D × H·d
  q4nx::Tensor w_gate;  // F × D
  q4nx::Tensor w_up;    // F × D
  q4nx::Tensor w_down;  // D × F
  std::vector<float> input_norm, post_attn_norm, pre_ffn_norm, post_ffn_norm;
  std::vector<float> q_norm, k_norm;  // d each
};

/// Seeded random weights (normal, std 1/sqrt(fan_in)) quantized to Q4NX.
LayerWeights random_layer_weights(const LayerConfig& cfg, std::uint64_t seed);

/// x / sqrt(mean(x^2) + eps) * (1 + gamma)
std::vector<float> rmsnorm(std::span<const float> x,
                           std::span<const float> gamma, float eps = 1e-6f);

/// Per-head RMSNorm over the head dimension, applied before RoPE.
inline std::vector<float> qk_norm(std::span<const float> x,
                                  std::span<const float> gamma,
                                  float eps = 1e-6f) {
  return rmsnorm(x, gamma, eps);
}

/// Rotates pairs (x[2i], x[2i+1]) by position * base^(-2i/d). Throws
/// InvalidArgument for odd d.
std::vector<float> rope(std::span<const float> x, std::size_t position,
                        float base = 10000.0f);

/// tanh approximation of GeLU.
float gelu(float u);

/// Decode-path GeGLU MLP: W_down · (gelu(W_gate x) ⊙ (W_up x)) via FusedDQP.
std::vector<float> geglu_mlp(std::span<const float> x,
                             const q4nx::Tensor& w_gate,
                             const q4nx::Tensor& w_up,
                             const q4nx::Tensor& w_down,
                             Precision precision = Precision::kMixedBf16,
                             std::size_t workers = 16);

/// Per-layer KV history, one L×d key and value matrix per KV group. Rows are
/// only ever appended.
class LayerCache {
 public:
  LayerCache() = default;
  LayerCache(std::size_t groups, std::size_t head_dim);
  LayerCache(std::vector<MatrixF> keys, std::vector<MatrixF> values);

  std::size_t length() const { return length_; }
  std::size_t groups() const { return keys_.size(); }
  const std::vector<MatrixF>& keys() const { return keys_; }
  const std::vector<MatrixF>& values() const { return values_; }

  /// Appends one token: row g of k_rows / v_rows goes to group g.
  void append(const MatrixF& k_rows, const MatrixF& v_rows);

 private:
  std::vector<MatrixF> keys_;
  std::vector<MatrixF> values_;
  std::size_t length_ = 0;
};

struct KernelSettings {
  Precision precision = Precision::kMixedBf16;
  std::size_t prefill_chunk = kDefaultPrefillChunk;
  std::size_t decode_chunk = kDefaultDecodeChunk;
  std::size_t dqp_workers = 16;
};

class TransformerLayer {
 public:
  TransformerLayer(LayerConfig cfg, LayerWeights weights);

  const LayerConfig& config() const { return cfg_; }
  const LayerWeights& weights() const { return w_; }

  /// X is L_p×D for positions cache.length() .. cache.length() + L_p - 1.
  MatrixF prefill(const MatrixF& x, LayerCache& cache,
                  const KernelSettings& settings) const;

  /// One token at position cache.length().
  std::vector<float> decode(std::span<const float> x, LayerCache& cache,
                            const KernelSettings& settings) const;

 private:
  struct Dense {
    MatrixF wq, wk, wv, wo, w_gate, w_up, w_down;  // transposed: in × out
  };

  MatrixF project(const MatrixF& x, const MatrixF& w_t,
                  const KernelSettings& s) const;
  std::vector<float> project(std::span<const float> x, const q4nx::Tensor& w,
                             const KernelSettings& s) const;
  AttentionVariant variant() const;

  LayerConfig cfg_;
  LayerWeights w_;
  Dense dense_;
};

struct ModelConfig {
  std::vector<LayerConfig> layers;
  KernelSettings kernels;

  /// layer_count layers of `base`, kinds assigned by layer_kind().
  static ModelConfig gemma_pattern(std::size_t layer_count, LayerConfig base);
  /// Vision-style stack: bidirectional attention, H == G, no RoPE or QK-norm.
  static ModelConfig vision(std::size_t layer_count, LayerConfig base);
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, std::vector<LayerWeights> weights);

  MatrixF prefill(const MatrixF& x);
  std::vector<float> decode(std::span<const float> x);

  std::size_t context_len() const;
  const ModelConfig& config() const { return cfg_; }
  const std::vector<TransformerLayer>& layers() const { return layers_; }
  const std::vector<LayerCache>& caches() const { return caches_; }

 private:
  ModelConfig cfg_;
  std::vector<TransformerLayer> layers_;
  std::vector<LayerCache> caches_;
};

}  // namespace flowkern::model

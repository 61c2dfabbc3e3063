// SPDX-License-Identifier: Apache-2.0
#include "flowkern/verify/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "flowkern/errors.hpp"

namespace flowkern::verify {

namespace {

using Vec = std::vector<double>;

struct DenseWeights {
  MatrixF wq, wk, wv, wo, w_gate, w_up, w_down;  // out × in
};

Vec matvec(const MatrixF& w, const Vec& x) {
  Vec y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      acc += static_cast<double>(w(r, c)) * x[c];
    }
    y[r] = acc;
  }
  return y;
}

Vec norm(const Vec& x, const std::vector<float>& gamma, double eps) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double s = 1.0 / std::sqrt(ms + eps);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * s * (1.0 + static_cast<double>(gamma[i]));
  }
  return out;
}

void rotate(double* x, std::size_t d, std::size_t pos, double base) {
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::exp(-std::log(base) * (2.0 * i) / d);
    const double ang = static_cast<double>(pos) * freq;
    const double a = x[2 * i], b = x[2 * i + 1];
    x[2 * i] = a * std::cos(ang) - b * std::sin(ang);
    x[2 * i + 1] = a * std::sin(ang) + b * std::cos(ang);
  }
}

double gelu_tanh(double u) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * u * (1.0 + std::tanh(c * (u + 0.044715 * u * u * u)));
}

bool visible(model::LayerKind kind, std::size_t window, std::size_t q,
             std::size_t k) {
  switch (kind) {
    case model::LayerKind::kBidirectional: return true;
    case model::LayerKind::kGlobal: return k <= q;
    case model::LayerKind::kLocal: return k <= q && q - k < window;
  }
  return false;
}

}  // namespace

MatrixF dense_layer_forward(const model::LayerConfig& cfg,
                            const model::LayerWeights& w, const MatrixF& x) {
  const std::size_t L = x.rows();
  const std::size_t D = cfg.model_dim;
  const std::size_t H = cfg.heads;
  const std::size_t G = cfg.kv_groups;
  const std::size_t d = cfg.head_dim;
  const std::size_t per_group = H / G;
  const double eps = cfg.norm_eps;
  if (x.cols() != D) throw ShapeError("dense layer: width mismatch");

  DenseWeights dw{to_float(q4nx::dequantize_tensor(w.wq)),
                  to_float(q4nx::dequantize_tensor(w.wk)),
                  to_float(q4nx::dequantize_tensor(w.wv)),
                  to_float(q4nx::dequantize_tensor(w.wo)),
                  to_float(q4nx::dequantize_tensor(w.w_gate)),
                  to_float(q4nx::dequantize_tensor(w.w_up)),
                  to_float(q4nx::dequantize_tensor(w.w_down))};

  std::vector<Vec> q(L), k(L), v(L);
  for (std::size_t i = 0; i < L; ++i) {
    Vec xi(x.row(i).begin(), x.row(i).end());
    const Vec xn = norm(xi, w.input_norm, eps);
    q[i] = matvec(dw.wq, xn);
    k[i] = matvec(dw.wk, xn);
    v[i] = matvec(dw.wv, xn);
    auto prep = [&](Vec& all, std::size_t count,
                    const std::vector<float>& gamma) {
      for (std::size_t h = 0; h < count; ++h) {
        double* p = all.data() + h * d;
        if (cfg.use_qk_norm) {
          Vec head(p, p + d);
          head = norm(head, gamma, eps);
          std::copy(head.begin(), head.end(), p);
        }
        if (cfg.use_rope) rotate(p, d, i, cfg.rope_base);
      }
    };
    prep(q[i], H, w.q_norm);
    prep(k[i], G, w.k_norm);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  MatrixF out(L, D);
  for (std::size_t i = 0; i < L; ++i) {
    Vec concat(H * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t g = h / per_group;
      std::vector<double> s(L, -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < L; ++j) {
        if (!visible(cfg.kind, cfg.window, i, j)) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dot += q[i][h * d + c] * k[j][g * d + c];
        }
        s[j] = dot * scale;
        mx = std::max(mx, s[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (std::isinf(s[j])) continue;
        const double e = std::exp(s[j] - mx);
        denom += e;
        for (std::size_t c = 0; c < d; ++c) {
          concat[h * d + c] += e * v[j][g * d + c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) concat[h * d + c] /= denom;
    }
    const Vec o = matvec(dw.wo, concat);
    const Vec on = norm(o, w.post_attn_norm, eps);
    Vec hres(D);
    for (std::size_t c = 0; c < D; ++c) hres[c] = x(i, c) + on[c];
    const Vec u = cfg.pre_ffn_norm ? norm(hres, w.pre_ffn_norm, eps) : hres;
    const Vec gate = matvec(dw.w_gate, u);
    const Vec up = matvec(dw.w_up, u);
    Vec act(gate.size());
    for (std::size_t j = 0; j < act.size(); ++j) {
      act[j] = gelu_tanh(gate[j]) * up[j];
    }
    Vec dn = matvec(dw.w_down, act);
    if (cfg.post_ffn_norm) dn = norm(dn, w.post_ffn_norm, eps);
    for (std::size_t c = 0; c < D; ++c) {
      out(i, c) = static_cast<float>(hres[c] + dn[c]);
    }
  }
  return out;
}

MatrixF dense_model_forward(const std::vector<model::LayerConfig>& layers,
                            const std::vector<model::LayerWeights>& weights,
                            const MatrixF& x) {
  MatrixF h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = dense_layer_forward(layers[i], weights[i], h);
  }
  return h;
}

std::vector<double> dense_matvec(const q4nx::Tensor& w,
                                 std::span<const float> x) {
  const MatrixF dense = to_float(q4nx::dequantize_tensor(w));
  if (x.size() != dense.cols()) throw ShapeError("dense_matvec: width");
  return matvec(dense, Vec(x.begin(), x.end()));
}

std::int64_t brute_force_pipeline(const std::vector<TickStage>& stages,
                                  std::size_t chunks) {
  const std::size_t S = stages.size();
  constexpr std::int64_t kNotStarted = -1;
  // End tick of each action, or kNotStarted.
  std::vector<std::vector<std::int64_t>> xfer_end(
      S, std::vector<std::int64_t>(chunks, kNotStarted));
  std::vector<std::vector<std::int64_t>> comp_end = xfer_end;
  std::vector<std::size_t> next_xfer(S, 0), next_comp(S, 0);
  std::vector<std::int64_t> dma_free(S, 0), core_free(S, 0);

  auto done = [](std::int64_t end, std::int64_t now) {
    return end != kNotStarted && end <= now;
  };

  std::int64_t last = 0;
  for (std::int64_t now = 0;; ++now) {
    bool started = true;
    while (started) {
      started = false;
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = next_xfer[s];
        if (i < chunks && dma_free[s] <= now &&
            (i < 2 || done(comp_end[s][i - 2], now))) {
          xfer_end[s][i] = now + stages[s].transfer_ticks;
          dma_free[s] = xfer_end[s][i];
          ++next_xfer[s];
          started = true;
        }
        const std::size_t j = next_comp[s];
        if (j < chunks && core_free[s] <= now && done(xfer_end[s][j], now) &&
            (s == 0 || done(comp_end[s - 1][j], now)) &&
            (s + 1 == S || j < 2 || done(comp_end[s + 1][j - 2], now))) {
          comp_end[s][j] = now + stages[s].compute_ticks;
          core_free[s] = comp_end[s][j];
          last = std::max(last, comp_end[s][j]);
          ++next_comp[s];
          started = true;
        }
      }
    }
    bool finished = true;
    for (std::size_t s = 0; s < S; ++s) {
      if (next_comp[s] < chunks) finished = false;
    }
    if (finished) return last;
  }
}

MatrixF random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                      float lo, float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  MatrixF m(rows, cols);
  for (float& x : m.data()) x = dist(rng);
  return m;
}

}  // namespace flowkern::verify

// SPDX-License-Identifier: Apache-2.0
#include "flowkern/tiled_mm.hpp"

#include <algorithm>
#include <tuple>

namespace flowkern {

namespace {

std::size_t round_up(std::size_t x, std::size_t to) {
  return (x + to - 1) / to * to;
}

}  // namespace

std::string MegatileConfig::label() const {
  return std::to_string(megatile_rows()) + "x" + std::to_string(staged_k()) + "x" +
         std::to_string(megatile_cols()) + "@" + std::to_string(cols_used) +
         "col";
}

void MegatileConfig::validate() const {
  if (tile.m == 0 || tile.k == 0 || tile.n == 0 || e_x == 0 || e_y == 0 ||
      cols_used == 0 || grid_rows == 0 || k_stage % tile.k != 0) {
    throw InvalidArgument("megatile config: zero or misaligned dimension");
  }
}

MatrixF tiled_matmul(const MatrixF& a, const MatrixF& b,
                     const MegatileConfig& cfg, OutputRounding rounding) {
  cfg.validate();
  if (a.cols() != b.rows()) throw ShapeError("tiled_matmul: inner dim mismatch");
  const std::size_t M = a.rows();
  const std::size_t K = a.cols();
  const std::size_t N = b.cols();
  const std::size_t mt_rows = cfg.megatile_rows();
  const std::size_t mt_cols = cfg.megatile_cols();
  const TileShape t = cfg.tile;

  // Padded staging copies; the padding stays zero.
  const std::size_t Mp = round_up(std::max<std::size_t>(M, 1), mt_rows);
  const std::size_t Np = round_up(std::max<std::size_t>(N, 1), mt_cols);
  const std::size_t Kp = round_up(std::max<std::size_t>(K, 1), t.k);
  MatrixF ap(Mp, Kp);
  MatrixF bp(Kp, Np);
  for (std::size_t i = 0; i < M; ++i)
    std::copy(a.row(i).begin(), a.row(i).end(), ap.row(i).begin());
  for (std::size_t p = 0; p < K; ++p)
    std::copy(b.row(p).begin(), b.row(p).end(), bp.row(p).begin());

  MatrixF cp(Mp, Np);
  std::vector<float> c_tile(t.m * t.n);
  for (std::size_t mr = 0; mr < Mp; mr += mt_rows) {
    for (std::size_t mc = 0; mc < Np; mc += mt_cols) {
      // Output tiles of this megatile; each is one CT's c accumulator.
      for (std::size_t tr = mr; tr < mr + mt_rows; tr += t.m) {
        for (std::size_t tc = mc; tc < mc + mt_cols; tc += t.n) {
          std::fill(c_tile.begin(), c_tile.end(), 0.0f);
          // K/k load-compute cycles.
          for (std::size_t kk = 0; kk < Kp; kk += t.k) {
            for (std::size_t i = 0; i < t.m; ++i) {
              float* c_row = c_tile.data() + i * t.n;
              const float* a_row = ap.row(tr + i).data() + kk;
              for (std::size_t p = 0; p < t.k; ++p) {
                const float av = a_row[p];
                const float* b_row = bp.row(kk + p).data() + tc;
                for (std::size_t j = 0; j < t.n; ++j) c_row[j] += av * b_row[j];
              }
            }
          }
          for (std::size_t i = 0; i < t.m; ++i) {
            std::copy_n(c_tile.data() + i * t.n, t.n,
                        cp.row(tr + i).begin() + static_cast<long>(tc));
          }
        }
      }
    }
  }

  MatrixF c(M, N);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) c(i, j) = apply_rounding(cp(i, j), rounding);
  }
  return c;
}

double cost_basic(double M, double K, double N, double m, double n,
                  double elem_bytes) {
  if (m <= 0 || n <= 0) throw InvalidArgument("cost: zero tile dimension");
  if (M <= 0 || K <= 0 || N <= 0 || elem_bytes <= 0) {
    throw InvalidArgument("cost: problem dims must be positive");
  }
  const double size_a = M * K * elem_bytes;
  const double size_b = K * N * elem_bytes;
  return (N / n) * size_a + (M / m) * size_b;
}

double cost_megatile(double M, double K, double N, const MegatileConfig& cfg,
                     double elem_bytes) {
  cfg.validate();
  return cost_basic(M, K, N, static_cast<double>(cfg.megatile_rows()),
                    static_cast<double>(cfg.megatile_cols()), elem_bytes);
}

CostReport evaluate_config(std::size_t M, std::size_t K, std::size_t N,
                           const MegatileConfig& cfg, std::size_t elem_bytes) {
  CostReport r;
  const double md = static_cast<double>(M);
  const double kd = static_cast<double>(K);
  const double nd = static_cast<double>(N);
  r.bytes_moved = cost_megatile(md, kd, nd, cfg, static_cast<double>(elem_bytes));
  r.flops = 2.0 * md * kd * nd;
  const double padded = 2.0 *
                        static_cast<double>(round_up(M, cfg.megatile_rows())) *
                        static_cast<double>(round_up(K, cfg.tile.k)) *
                        static_cast<double>(round_up(N, cfg.megatile_cols()));
  r.padding_overhead = padded / r.flops - 1.0;
  r.intensity = r.flops / r.bytes_moved;
  r.writeback_bytes = md * nd * static_cast<double>(elem_bytes);
  return r;
}

sim::FitReport l1_fit(const MegatileConfig& cfg, const sim::TileArrayConfig& hw,
                      std::size_t elem_bytes) {
  const TileShape& t = cfg.tile;
  return sim::check_l1_fit({{"a", t.m * t.k * elem_bytes, true},
                            {"b", t.k * t.n * elem_bytes, true},
                            {"c", t.m * t.n * elem_bytes, true}},
                           hw);
}

bool l2_fits(const MegatileConfig& cfg, const sim::TileArrayConfig& hw,
             std::size_t elem_bytes) {
  return cfg.megatile_rows() * cfg.megatile_cols() * elem_bytes <=
         hw.l2_bytes();
}

std::vector<MegatileConfig> reference_megatiles() {
  // rows = 8 e_y m, cols = 4 e_x n
  return {
      {{16, 64, 64}, 2, 1, 8, 4, 512},  // 128 x 512 x 512
      {{32, 64, 64}, 2, 1, 8, 4, 256},  // 256 x 256 x 512
      {{64, 64, 64}, 2, 1, 8, 4, 512},  // 512 x 512 x 512
  };
}

std::vector<MegatileConfig> default_candidates() {
  std::vector<MegatileConfig> out = reference_megatiles();
  for (std::size_t cols : {1, 2, 4, 8}) {
    for (std::size_t m : {16, 32, 64}) {
      for (std::size_t k : {16, 32, 64}) {
        for (std::size_t n : {16, 32, 64}) {
          out.push_back({{m, k, n}, 1, 1, cols, 4});
        }
      }
    }
  }
  return out;
}

std::vector<RankedConfig> select_tile_config(
    std::size_t M, std::size_t K, std::size_t N,
    const sim::TileArrayConfig& hw,
    const std::vector<MegatileConfig>& candidates, std::size_t elem_bytes) {
  if (candidates.empty()) throw InvalidArgument("no candidate configs");
  std::vector<RankedConfig> ranked;
  for (const MegatileConfig& c : candidates) {
    if (!l1_fit(c, hw, elem_bytes).fits || !l2_fits(c, hw, elem_bytes)) continue;
    RankedConfig r{c, evaluate_config(M, K, N, c, elem_bytes), 0.0};
    r.score = r.cost.bytes_moved * (1.0 + r.cost.padding_overhead);
    ranked.push_back(std::move(r));
  }
  if (ranked.empty()) {
    throw InfeasibleError("no tile config fits L1 = " +
                          std::to_string(hw.l1_bytes) + " bytes");
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedConfig& x, const RankedConfig& y) {
                     return std::make_tuple(x.score, x.cost.padding_overhead,
                                            x.config.label()) <
                            std::make_tuple(y.score, y.cost.padding_overhead,
                                            y.config.label());
                   });
  return ranked;
}

std::vector<sim::StageSpec> matmul_stages(std::size_t M, std::size_t K,
                                          std::size_t N,
                                          const MegatileConfig& cfg,
                                          const sim::TileArrayConfig& hw,
                                          std::size_t elem_bytes) {
  cfg.validate();
  const std::size_t rows = cfg.megatile_rows();
  const std::size_t cols = cfg.megatile_cols();
  const std::size_t megatiles = ((M + rows - 1) / rows) * ((N + cols - 1) / cols);
  const std::size_t ks = cfg.staged_k();
  const std::size_t k_steps = (K + ks - 1) / ks;
  const double bytes = static_cast<double>((rows + cols) * ks * elem_bytes);
  // Every CT in use does m·ks·n MACs per step, per supertile of the megatile.
  const double macs =
      static_cast<double>(cfg.tile.m * ks * cfg.tile.n * cfg.e_x * cfg.e_y);
  const double t = macs / (hw.macs_per_cycle * hw.clock_hz);
  return {{"mm", bytes, t, megatiles * k_steps}};
}

}  // namespace flowkern

// SPDX-License-Identifier: Apache-2.0
//
// Tiled matrix multiply on the CT grid. Each CT column receives its own m×k
// tile of A (broadcast down the column), each CT row its own k×n tile of B
// (broadcast along the row), so one pass over K yields a supertile of
// (cols_used·m) × (4·n). A megatile widens that by e_y rows and e_x columns and
// is staged in L2.
//
// Input data movement (write-back excluded):
//   basic:    (N / n) size(A) + (M / m) size(B)
//   megatile: N / (4 e_x n) size(A) + M / (cols_used e_y m) size(B)
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flowkern/dataflow_sim.hpp"
#include "flowkern/matrix.hpp"

namespace flowkern {

struct TileShape {
  std::size_t m = 32;
  std::size_t k = 32;
  std::size_t n = 32;
  friend bool operator==(const TileShape&, const TileShape&) = default;
};

struct MegatileConfig {
  TileShape tile;
  std::size_t e_x = 1;
  std::size_t e_y = 1;
  std::size_t cols_used = 8;  // CT columns in use (1..8); 8 is the full grid
  std::size_t grid_rows = 4;
  std::size_t k_stage = 0;    // K extent staged in L2 per step; 0 means tile.k

  std::size_t staged_k() const { return k_stage == 0 ? tile.k : k_stage; }
  std::size_t supertile_rows() const { return cols_used * tile.m; }
  std::size_t supertile_cols() const { return grid_rows * tile.n; }
  std::size_t megatile_rows() const { return e_y * supertile_rows(); }
  std::size_t megatile_cols() const { return e_x * supertile_cols(); }
  /// "rows×K×cols@Ncol", e.g. "512x512x512@8col".
  std::string label() const;
  void validate() const;

  friend bool operator==(const MegatileConfig&,
                         const MegatileConfig&) = default;
};

struct CostReport {
  double bytes_moved = 0;      // input traffic from the megatile formula
  double flops = 0;            // useful 2·M·K·N
  double padding_overhead = 0; // padded FLOPs / useful FLOPs - 1
  double intensity = 0;        // flops per byte moved
  double writeback_bytes = 0;  // informational: M·N output bytes
};

struct RankedConfig {
  MegatileConfig config;
  CostReport cost;
  double score = 0;  // bytes_moved · (1 + padding_overhead)
};

/// C = A B with A, B expected to hold bf16 values; accumulation is float32
/// and ragged dims are zero padded to megatile multiples internally.
MatrixF tiled_matmul(const MatrixF& a, const MatrixF& b,
                     const MegatileConfig& cfg,
                     OutputRounding rounding = OutputRounding::kBf16);

double cost_basic(double M, double K, double N, double m, double n,
                  double elem_bytes);
double cost_megatile(double M, double K, double N, const MegatileConfig& cfg,
                     double elem_bytes);

CostReport evaluate_config(std::size_t M, std::size_t K, std::size_t N,
                           const MegatileConfig& cfg, std::size_t elem_bytes);

/// Double-buffered a, b, c tiles must fit in one CT's L1.
sim::FitReport l1_fit(const MegatileConfig& cfg, const sim::TileArrayConfig& hw,
                      std::size_t elem_bytes);
/// The megatile's C block must fit in the aggregate L2.
bool l2_fits(const MegatileConfig& cfg, const sim::TileArrayConfig& hw,
             std::size_t elem_bytes);

/// Megatiles 128×512×512, 256×256×512 and 512×512×512 (rows × K × cols).
std::vector<MegatileConfig> reference_megatiles();

/// reference_megatiles() plus tiles m, k, n ∈ {16, 32, 64} at e = 1 on 1, 2, 4
/// and 8 CT columns.
std::vector<MegatileConfig> default_candidates();

/// Feasible candidates ranked by bytes_moved · (1 + padding_overhead); ties
/// broken by smaller padding, then by label. Throws InfeasibleError if no
/// candidate fits.
std::vector<RankedConfig> select_tile_config(
    std::size_t M, std::size_t K, std::size_t N,
    const sim::TileArrayConfig& hw,
    const std::vector<MegatileConfig>& candidates, std::size_t elem_bytes = 2);

/// Megatile-level load/compute pipeline for simulate_pipeline: one chunk per
/// (megatile, K step), A strip and B strip fetched per chunk.
std::vector<sim::StageSpec> matmul_stages(std::size_t M, std::size_t K,
                                          std::size_t N,
                                          const MegatileConfig& cfg,
                                          const sim::TileArrayConfig& hw,
                                          std::size_t elem_bytes = 2);

}  // namespace flowkern

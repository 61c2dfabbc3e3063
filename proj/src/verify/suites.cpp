// SPDX-License-Identifier: Apache-2.0
#include "flowkern/verify/suites.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "flowkern/bf16.hpp"
#include "flowkern/chunked_attn.hpp"
#include "flowkern/dataflow_sim.hpp"
#include "flowkern/errors.hpp"
#include "flowkern/fused_dqp.hpp"
#include "flowkern/model_layer.hpp"
#include "flowkern/q4nx.hpp"
#include "flowkern/refkern.hpp"
#include "flowkern/tiled_mm.hpp"
#include "flowkern/verify/oracle.hpp"

namespace flowkern::verify {

const char* to_string(Status s) {
  switch (s) {
    case Status::kPass: return "pass";
    case Status::kFail: return "fail";
    case Status::kError: return "error";
  }
  return "?";
}

void settle(CaseResult& c) {
  if (c.status == Status::kError) return;
  c.status = Status::kPass;
  for (const Metric& m : c.metrics) {
    if (m.checked && !(m.value <= m.tolerance)) c.status = Status::kFail;
  }
}

bool all_pass(const std::vector<CaseResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CaseResult& c) {
    return c.status == Status::kPass;
  });
}

bool same_results(const std::vector<CaseResult>& a,
                  const std::vector<CaseResult>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const CaseResult& x = a[i];
    const CaseResult& y = b[i];
    if (x.name != y.name || x.status != y.status || x.message != y.message ||
        x.metrics.size() != y.metrics.size()) {
      return false;
    }
    for (std::size_t j = 0; j < x.metrics.size(); ++j) {
      const Metric& p = x.metrics[j];
      const Metric& q = y.metrics[j];
      const bool same_value =
          p.value == q.value || (std::isnan(p.value) && std::isnan(q.value));
      if (p.name != q.name || !same_value || p.tolerance != q.tolerance ||
          p.checked != q.checked) {
        return false;
      }
    }
  }
  return true;
}

std::size_t worker_cap() {
  if (const char* env = std::getenv("FLOWKERN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

using Clock = std::chrono::steady_clock;

template <class Body>
CaseResult run_case(std::string name, Body&& body) {
  CaseResult c;
  c.name = std::move(name);
  const auto t0 = Clock::now();
  try {
    body(c);
    settle(c);
  } catch (const std::exception& e) {
    c.status = Status::kError;
    c.message = e.what();
  }
  c.wall_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  return c;
}

void check(CaseResult& c, std::string name, double value, double tol) {
  c.metrics.push_back({std::move(name), value, tol, true});
}

void report(CaseResult& c, std::string name, double value) {
  c.metrics.push_back({std::move(name), value, 0.0, false});
}

bool full(const SuiteOptions& o) { return o.sizes == Sizes::kFull; }

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MatrixF bf16_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  MatrixF m = random_matrix(r, c, seed);
  round_to_bf16(m);
  return m;
}

// ---------------------------------------------------------------- q4nx

std::vector<float> random_block_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> expo(-6.0f, 6.0f);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  const float scale = std::exp2(expo(rng));
  const float shift = unit(rng) * scale;
  std::vector<float> w(q4nx::kBlockRows * q4nx::kBlockCols);
  for (float& x : w) x = shift + scale * unit(rng);
  return w;
}

std::vector<CaseResult> q4nx_suite(const SuiteOptions& o) {
  std::vector<CaseResult> out;

  out.push_back(run_case("q4nx/round_trip", [&](CaseResult& c) {
    const std::size_t n = full(o) ? 1000 : 100;
    std::mt19937_64 rng(mix(o.seed, 1));
    std::size_t bad = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const q4nx::Block b = q4nx::quantize_block(random_block_weights(rng));
      const auto bytes = q4nx::serialize_block(b);
      const q4nx::Block back = q4nx::parse_block(bytes);
      if (!(back == b) || q4nx::serialize_block(back) != bytes) ++bad;
    }
    report(c, "blocks", static_cast<double>(n));
    check(c, "mismatched_blocks", static_cast<double>(bad), 0);
  }));

  out.push_back(run_case("q4nx/error_bound", [&](CaseResult& c) {
    const std::size_t blocks = full(o) ? 40 : 10;
    std::mt19937_64 rng(mix(o.seed, 2));
    std::size_t groups = 0, violations = 0;
    double worst = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto w = random_block_weights(rng);
      const q4nx::Block blk = q4nx::quantize_block(w);
      const MatrixBf16 deq = q4nx::dequantize_block(blk);
      for (std::size_t r = 0; r < q4nx::kBlockRows; ++r) {
        for (std::size_t col = 0; col < q4nx::kBlockCols; ++col) {
          const std::size_t g = q4nx::group_index(r, col);
          const double d = blk.scale(g).to_float();
          const double x = w[r * q4nx::kBlockCols + col];
          const double err = std::abs(deq(r, col).to_float() - x);
          const double bound = d / 2.0 + std::ldexp(std::abs(x), -8);
          const double ratio =
              bound > 0 ? err / bound : (err > 0 ? 1e300 : 0.0);
          worst = std::max(worst, ratio);
          if (err > bound) ++violations;
        }
      }
      groups += q4nx::kGroupsPerBlock;
    }
    report(c, "groups", static_cast<double>(groups));
    report(c, "worst_error_over_bound", worst);
    check(c, "violations", static_cast<double>(violations), 0);
  }));

  out.push_back(run_case("q4nx/container_inspect", [&](CaseResult& c) {
    const MatrixF w = random_matrix(32, 256, mix(o.seed, 3));
    const auto bytes = q4nx::write_container(q4nx::quantize_tensor(w));
    const auto h = q4nx::read_container_header(bytes);
    const double block_count = static_cast<double>(
        (h.rows / q4nx::kBlockRows) * (h.cols / q4nx::kBlockCols));
    const double payload = static_cast<double>(bytes.size() - q4nx::kContainerHeaderBytes);
    check(c, "block_count_error", std::abs(block_count - 1.0), 0);
    check(c, "payload_bytes_error", std::abs(payload - 5120.0), 0);

    const MatrixF ragged = random_matrix(40, 300, mix(o.seed, 4));
    const auto rb = q4nx::write_container(q4nx::quantize_tensor(ragged));
    const auto rh = q4nx::read_container_header(rb);
    check(c, "ragged_padding_error",
          std::abs(static_cast<double>(rh.rows) - 64.0) +
              std::abs(static_cast<double>(rh.cols) - 512.0),
          0);
  }));

  out.push_back(run_case("q4nx/container_reject", [&](CaseResult& c) {
    const MatrixF w = random_matrix(32, 256, mix(o.seed, 5));
    const auto good = q4nx::write_container(q4nx::quantize_tensor(w));
    std::vector<std::vector<std::uint8_t>> corrupt;
    corrupt.emplace_back(good.begin(), good.end() - 1);  // truncated
    corrupt.push_back(good);
    corrupt.back()[0] = 'X';  // magic
    corrupt.push_back(good);
    corrupt.back()[4] = 9;  // version
    corrupt.push_back(good);
    corrupt.back().push_back(0);  // trailing byte
    std::size_t accepted = 0;
    for (const auto& bytes : corrupt) {
      try {
        (void)q4nx::read_container(bytes);
        ++accepted;
      } catch (const FormatError&) {
      }
    }
    check(c, "accepted_corrupt", static_cast<double>(accepted), 0);
  }));

  out.push_back(run_case("q4nx/frozen_values", [&](CaseResult& c) {
    std::size_t bad = 0;
    if (bf16_round(1.00390625f).bits != 0x3F80) ++bad;
    if (bf16_round(1.01171875f).bits != 0x3F82) ++bad;
    std::vector<float> w(q4nx::kBlockRows * q4nx::kBlockCols, 0.0f);
    for (std::size_t i = 0; i < q4nx::kGroupSize; ++i) {
      w[i] = static_cast<float>(i);
    }
    const q4nx::Block b = q4nx::quantize_block(w);
    if (b.scale(0).bits != 0x4004 || b.min(0).bits != 0) ++bad;
    if (b.code(0, 31) != 15 || b.code(0, 0) != 0) ++bad;
    check(c, "mismatches", static_cast<double>(bad), 0);
  }));

  return out;
}

// ---------------------------------------------------------------- attn

constexpr double kAttnTol = 1e-5;

std::size_t swa_window(std::size_t L) { return L / 4 + 3; }

double attn_case(AttentionVariant variant, std::size_t L, std::size_t lc,
                 std::size_t d, std::size_t heads, std::uint64_t seed) {
  const GqaLayout layout{heads, 1, d};
  const float scale = default_scale(d);
  const std::vector<MatrixF> k{random_matrix(L, d, mix(seed, 1))};
  const std::vector<MatrixF> v{random_matrix(L, d, mix(seed, 2))};

  if (variant == AttentionVariant::kDecode) {
    const std::size_t window = (seed % 2 == 0) ? 0 : swa_window(L);
    const MatrixF q = random_matrix(heads, d, mix(seed, 3));
    const ChunkPlan plan = make_decode_plan(L, lc, window);
    const MatrixF got =
        flowkv_decode(q, k, v, layout, plan, scale, OutputRounding::kNone);
    const AttentionMask mask = window == 0
                                   ? AttentionMask::causal()
                                   : AttentionMask::sliding_window(window);
    double worst = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto ref = decode_attention_ref(q.row(h), k[0], v[0], mask, scale);
      worst = std::max(worst, max_rel_error(got.row(h), ref));
    }
    return worst;
  }

  std::vector<MatrixF> q;
  for (std::size_t h = 0; h < heads; ++h) {
    q.push_back(random_matrix(L, d, mix(seed, 10 + h)));
  }
  const std::size_t window =
      variant == AttentionVariant::kSlidingWindow ? swa_window(L) : 0;
  const ChunkPlan plan = make_prefill_plan(variant, L, L, lc, window);
  const auto got =
      flowqkv_prefill(q, k, v, layout, plan, scale, OutputRounding::kNone);
  AttentionMask mask = AttentionMask::causal();
  if (variant == AttentionVariant::kSlidingWindow) {
    mask = AttentionMask::sliding_window(window);
  } else if (variant == AttentionVariant::kNonCausal) {
    mask = AttentionMask::non_causal();
  }
  const auto ref = gqa_attention_ref(q, k, v, layout, mask, scale);
  double worst = 0.0;
  for (std::size_t h = 0; h < heads; ++h) {
    worst = std::max(worst, max_rel_error(got[h], ref[h]));
  }
  return worst;
}

std::vector<CaseResult> attn_suite(const SuiteOptions& o) {
  const bool f = full(o);
  const std::vector<std::size_t> lens =
      f ? std::vector<std::size_t>{16, 64, 256, 512}
        : std::vector<std::size_t>{16, 64};
  const std::vector<std::size_t> chunks =
      f ? std::vector<std::size_t>{8, 16, 64, 256}
        : std::vector<std::size_t>{8, 16};
  const std::vector<std::size_t> dims =
      f ? std::vector<std::size_t>{8, 64, 256} : std::vector<std::size_t>{8, 64};
  const std::size_t seeds = f ? 10 : 2;
  const AttentionVariant variants[] = {
      AttentionVariant::kCausalFull, AttentionVariant::kSlidingWindow,
      AttentionVariant::kNonCausal, AttentionVariant::kDecode};

  std::vector<CaseResult> out;
  for (AttentionVariant var : variants) {
    for (std::size_t L : lens) {
      for (std::size_t lc : chunks) {
        for (std::size_t d : dims) {
          for (std::size_t ratio : {1, 2}) {
            const std::string name = std::string("attn/") + to_string(var) +
                                     "/L" + std::to_string(L) + "_Lc" +
                                     std::to_string(lc) + "_d" +
                                     std::to_string(d) + "_hg" +
                                     std::to_string(ratio);
            out.push_back(run_case(name, [&](CaseResult& c) {
              double worst = 0.0;
              for (std::size_t s = 0; s < seeds; ++s) {
                const std::uint64_t seed =
                    mix(o.seed, L * 1000003 + lc * 1009 + d * 17 + ratio) + s;
                worst = std::max(worst, attn_case(var, L, lc, d, ratio, seed));
              }
              report(c, "seeds", static_cast<double>(seeds));
              check(c, "max_rel_error", worst, kAttnTol);
            }));
          }
        }
      }
    }
  }

  out.push_back(run_case("attn/empty_window_rejected", [&](CaseResult& c) {
    // A query whose window excludes every key must not produce values.
    ChunkAccumulator acc = init_accumulator(1, 4);
    std::size_t accepted = 0;
    try {
      (void)finalize(acc);
      ++accepted;
    } catch (const EmptyWindowError&) {
    }
    check(c, "accepted", static_cast<double>(accepted), 0);
  }));

  out.push_back(run_case("attn/u_mem_rd", [&](CaseResult& c) {
    const double got = u_mem_rd(2, 2048, 256, 8, 8, 1e-3);
    check(c, "abs_error", std::abs(got - 4718592000.0), 0);
  }));
  return out;
}

// ---------------------------------------------------------------- fused

std::vector<CaseResult> fused_suite(const SuiteOptions& o) {
  std::vector<CaseResult> out;
  const std::size_t n = full(o) ? 100 : 20;

  out.push_back(run_case("fused/oracle_and_workers", [&](CaseResult& c) {
    std::mt19937_64 rng(mix(o.seed, 20));
    std::uniform_int_distribution<std::size_t> mdist(1, 512), kdist(1, 1024);
    double worst = 0.0;
    std::size_t variant_mismatch = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t M = mdist(rng);
      const std::size_t K = kdist(rng);
      const q4nx::Tensor w =
          q4nx::quantize_tensor(random_matrix(M, K, mix(o.seed, 100 + i)));
      MatrixF am = random_matrix(1, K, mix(o.seed, 5000 + i));
      std::vector<Bf16> a(K);
      std::vector<float> af(K);
      for (std::size_t j = 0; j < K; ++j) {
        a[j] = bf16_round(am(0, j));
        af[j] = a[j].to_float();
      }
      const auto ref = dense_matvec(w, af);
      std::vector<float> ref_f(ref.begin(), ref.end());
      std::vector<float> base;
      for (std::size_t workers : {1, 2, 4, 16}) {
        FusedDqpPlan plan = make_fused_dqp_plan(workers, w.block_rows());
        plan.parallel = workers > 1;
        const auto y = fused_dqp_mvm(w, std::span<const Bf16>(a), plan,
                                     OutputRounding::kNone);
        if (base.empty()) {
          base = y;
          worst = std::max(worst, max_rel_error(y, ref_f));
        } else if (y != base) {
          ++variant_mismatch;
        }
      }
    }
    report(c, "cases", static_cast<double>(n));
    check(c, "max_rel_error", worst, 1e-4);
    check(c, "worker_count_mismatches", static_cast<double>(variant_mismatch),
          0);
  }));

  out.push_back(run_case("fused/broadcast_schedule", [&](CaseResult& c) {
    const FusedDqpPlan plan = make_fused_dqp_plan(4, 8);
    const auto events = broadcast_schedule(plan, 8 * 32, 3 * 256);
    std::size_t segments = 0, blocks = 0, bad_bytes = 0;
    for (const TransferEvent& e : events) {
      if (e.kind == TransferKind::kActivationSegment) {
        ++segments;
        if (e.worker != kBroadcast || e.bytes != 512) ++bad_bytes;
      } else {
        ++blocks;
        if (e.bytes != q4nx::kBlockBytes) ++bad_bytes;
      }
    }
    check(c, "segment_count_error", std::abs(double(segments) - 3.0), 0);
    check(c, "block_count_error", std::abs(double(blocks) - 24.0), 0);
    check(c, "bad_sizes", static_cast<double>(bad_bytes), 0);
  }));
  return out;
}

// ---------------------------------------------------------------- mm

std::vector<CaseResult> mm_suite(const SuiteOptions& o) {
  std::vector<CaseResult> out;
  const sim::TileArrayConfig hw;
  std::vector<MegatileConfig> feasible;
  for (const MegatileConfig& cfg : default_candidates()) {
    if (l1_fit(cfg, hw, 2).fits && l2_fits(cfg, hw, 2)) feasible.push_back(cfg);
  }

  struct Shape {
    std::size_t M, K, N;
  };
  const std::vector<Shape> shapes =
      full(o) ? std::vector<Shape>{{256, 256, 256},
                                   {100, 70, 200},
                                   {17, 33, 9},
                                   {1, 256, 64}}
              : std::vector<Shape>{{64, 64, 64}, {17, 33, 9}};
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    const Shape s = shapes[si];
    const std::string name = "mm/oracle/" + std::to_string(s.M) + "x" +
                             std::to_string(s.K) + "x" + std::to_string(s.N);
    out.push_back(run_case(name, [&](CaseResult& c) {
      const MatrixF a = bf16_matrix(s.M, s.K, mix(o.seed, 30 + si));
      const MatrixF b = bf16_matrix(s.K, s.N, mix(o.seed, 40 + si));
      const MatrixF ref = matmul_ref(a, b);
      double worst = 0.0;
      double spread = 0.0;
      MatrixF first;
      for (const MegatileConfig& cfg : feasible) {
        const MatrixF got = tiled_matmul(a, b, cfg, OutputRounding::kNone);
        worst = std::max(worst, max_rel_error(got, ref));
        if (first.empty()) {
          first = got;
        } else {
          spread = std::max(spread, max_rel_error(got, first));
        }
      }
      report(c, "configs", static_cast<double>(feasible.size()));
      check(c, "max_rel_error", worst, 1e-3);
      check(c, "config_spread", spread, 1e-3);
    }));
  }

  out.push_back(run_case("mm/megatile_reduces_to_basic", [&](CaseResult& c) {
    double worst = 0.0;
    for (const MegatileConfig& base : default_candidates()) {
      MegatileConfig cfg = base;
      cfg.e_x = cfg.e_y = 1;
      for (double M : {16.0, 333.0, 2048.0}) {
        const double lhs = cost_megatile(M, 512, 1000, cfg, 2);
        const double rhs = cost_basic(
            M, 512, 1000, static_cast<double>(cfg.cols_used * cfg.tile.m),
            static_cast<double>(cfg.grid_rows * cfg.tile.n), 2);
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    }
    check(c, "max_abs_difference", worst, 0);
  }));

  out.push_back(run_case("mm/cost_decreases_with_expansion", [&](CaseResult& c) {
    std::size_t violations = 0;
    for (const MegatileConfig& base : default_candidates()) {
      for (std::size_t e = 1; e < 4; ++e) {
        MegatileConfig lo = base, hi = base;
        lo.e_x = e;
        hi.e_x = e + 1;
        if (!(cost_megatile(2048, 2048, 2048, hi, 2) <
              cost_megatile(2048, 2048, 2048, lo, 2))) {
          ++violations;
        }
        lo = base;
        hi = base;
        lo.e_y = e;
        hi.e_y = e + 1;
        if (!(cost_megatile(2048, 2048, 2048, hi, 2) <
              cost_megatile(2048, 2048, 2048, lo, 2))) {
          ++violations;
        }
      }
    }
    check(c, "violations", static_cast<double>(violations), 0);
  }));

  out.push_back(run_case("mm/reference_megatile_ordering", [&](CaseResult& c) {
    const auto mts = reference_megatiles();  // 128, 256, 512 row variants
    const double c128 = cost_megatile(2048, 2048, 2048, mts[0], 2);
    const double c256 = cost_megatile(2048, 2048, 2048, mts[1], 2);
    const double c512 = cost_megatile(2048, 2048, 2048, mts[2], 2);
    report(c, "bytes_128x512x512", c128);
    report(c, "bytes_256x256x512", c256);
    report(c, "bytes_512x512x512", c512);
    check(c, "order_violations",
          static_cast<double>(!(c512 < c256)) + static_cast<double>(!(c256 < c128)),
          0);
    const auto ranked = select_tile_config(2048, 2048, 2048, hw, mts);
    check(c, "top_is_512", ranked.front().config == mts[2] ? 0.0 : 1.0, 0);
  }));

  out.push_back(run_case("mm/short_sequence_one_column", [&](CaseResult& c) {
    const auto ranked = select_tile_config(16, 256, 256, hw, default_candidates());
    report(c, "top_score", ranked.front().score);
    check(c, "top_cols_used",
          static_cast<double>(ranked.front().config.cols_used) - 1.0, 0);
  }));

  out.push_back(run_case("mm/infeasible_rejected", [&](CaseResult& c) {
    sim::TileArrayConfig tiny;
    tiny.l1_bytes = 1024;
    std::size_t accepted = 0;
    try {
      (void)select_tile_config(64, 64, 64, tiny, default_candidates());
      ++accepted;
    } catch (const InfeasibleError&) {
    }
    check(c, "accepted", static_cast<double>(accepted), 0);
  }));

  out.push_back(run_case("mm/frozen_cost", [&](CaseResult& c) {
    check(c, "abs_error",
          std::abs(cost_basic(512, 512, 512, 64, 64, 2) - 8388608.0), 0);
  }));
  return out;
}

// ---------------------------------------------------------------- sim

std::vector<CaseResult> sim_suite(const SuiteOptions& o) {
  std::vector<CaseResult> out;

  out.push_back(run_case("sim/single_stage_overlap", [&](CaseResult& c) {
    sim::TileArrayConfig cfg;
    cfg.dram_rd_bw = std::ldexp(1.0, 30);
    const double t = std::ldexp(1.0, -10);
    const sim::StageSpec eq{"eq", t * cfg.dram_rd_bw, t, 100};
    const auto a = sim::simulate_pipeline({eq}, cfg);
    check(c, "equal_abs_error", std::abs(a.total_time - 101.0 * t), 0);
    const sim::StageSpec slow{"slow", t * cfg.dram_rd_bw, 2 * t, 100};
    const auto b = sim::simulate_pipeline({slow}, cfg);
    check(c, "compute_bound_abs_error",
          std::abs(b.total_time - (t + 100.0 * 2 * t)), 0);
  }));

  out.push_back(run_case("sim/steady_state", [&](CaseResult& c) {
    const sim::TileArrayConfig cfg;
    std::vector<std::vector<sim::StageSpec>> pipelines;
    pipelines.push_back(sim::flowkv_stages(cfg, 32000, 32, 64, 2, 2));
    pipelines.push_back(sim::flowkv_stages(cfg, 32000, 32, 256, 4, 2));
    std::mt19937_64 rng(mix(o.seed, 50));
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (std::size_t stages : {2, 3}) {
      std::vector<sim::StageSpec> p;
      for (std::size_t s = 0; s < stages; ++s) {
        p.push_back({"s" + std::to_string(s), u(rng) * 1e-6 * cfg.dram_rd_bw /
                                                  static_cast<double>(stages),
                     u(rng) * 1e-6, 1000});
      }
      pipelines.push_back(p);
    }
    double worst = 0.0;
    for (const auto& p : pipelines) {
      const auto tl = sim::simulate_pipeline(p, cfg);
      double bound = 0.0;
      for (const auto& st : tl.stages) {
        bound = std::max({bound, st.transfer_time, st.compute_time});
      }
      const double n = static_cast<double>(p.front().chunk_count);
      worst = std::max(worst, std::abs(tl.total_time / n - bound) / bound);
    }
    check(c, "max_rel_rate_error", worst, 5e-3);
  }));

  out.push_back(run_case("sim/brute_force_agreement", [&](CaseResult& c) {
    std::mt19937_64 rng(mix(o.seed, 60));
    std::uniform_int_distribution<int> ticks(0, 6);
    std::uniform_int_distribution<std::size_t> nstages(1, 3), nchunks(1, 5);
    const std::size_t trials = full(o) ? 500 : 100;
    std::size_t mismatches = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t S = nstages(rng);
      const std::size_t N = nchunks(rng);
      sim::TileArrayConfig cfg;
      cfg.dram_rd_bw = static_cast<double>(S);  // 1 byte/s per stream
      std::vector<sim::StageSpec> specs;
      std::vector<TickStage> ts;
      for (std::size_t s = 0; s < S; ++s) {
        const int tx = ticks(rng), cp = ticks(rng);
        specs.push_back({"s", double(tx), double(cp), N});
        ts.push_back({tx, cp});
      }
      const double sim_total = sim::simulate_pipeline(specs, cfg).total_time;
      const std::int64_t brute = brute_force_pipeline(ts, N);
      if (sim_total != static_cast<double>(brute)) ++mismatches;
    }
    report(c, "trials", static_cast<double>(trials));
    check(c, "mismatches", static_cast<double>(mismatches), 0);
  }));

  out.push_back(run_case("sim/bound_classification", [&](CaseResult& c) {
    sim::TileArrayConfig cfg;
    cfg.dram_rd_bw = 40e9;
    const bool mem = sim::classify_bound(60e9, cfg) == sim::Bound::kMemory;
    cfg.dram_rd_bw = 80e9;
    const bool comp = sim::classify_bound(60e9, cfg) == sim::Bound::kCompute;
    check(c, "misclassified", static_cast<double>(!mem) + static_cast<double>(!comp),
          0);
  }));

  out.push_back(run_case("sim/zero_chunks_rejected", [&](CaseResult& c) {
    std::size_t accepted = 0;
    try {
      (void)sim::simulate_pipeline({{"s", 1, 1, 0}}, sim::TileArrayConfig{});
      ++accepted;
    } catch (const InvalidArgument&) {
    }
    check(c, "accepted", static_cast<double>(accepted), 0);
  }));

  out.push_back(run_case("sim/reference_placement", [&](CaseResult& c) {
    const sim::TileArrayConfig cfg;
    const auto r = sim::map_kernels(sim::reference_decode_assignment(), cfg);
    check(c, "invalid", r.valid ? 0.0 : 1.0, 0);
    check(c, "used_error", std::abs(static_cast<double>(r.used) - 27.0), 0);
    const auto fit = sim::check_l1_fit(sim::flowkv_ct0_buffers(32, 256, 2), cfg);
    report(c, "flowkv_ct0_l1_bytes", static_cast<double>(fit.total_bytes));
    check(c, "flowkv_ct0_overflow", fit.fits ? 0.0 : 1.0, 0);
  }));
  return out;
}

// ---------------------------------------------------------------- layer

model::LayerConfig desk_layer() {
  model::LayerConfig cfg;
  cfg.model_dim = 64;
  cfg.heads = 4;
  cfg.kv_groups = 2;
  cfg.head_dim = 16;
  cfg.mlp_hidden = 128;
  cfg.window = 16;
  return cfg;
}

std::vector<model::LayerWeights> model_weights(const model::ModelConfig& mc,
                                               std::uint64_t seed) {
  std::vector<model::LayerWeights> w;
  for (std::size_t i = 0; i < mc.layers.size(); ++i) {
    w.push_back(model::random_layer_weights(mc.layers[i], mix(seed, 70 + i)));
  }
  return w;
}

MatrixF random_tokens(std::size_t n, std::size_t D, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  MatrixF x(n, D);
  for (float& v : x.data()) v = round_bf16(dist(rng));
  return x;
}

// Decodes tokens 1..n-1 after a one-token prefill and compares each output
// with the matching row of a one-shot prefill over all n tokens.
double decode_prefill_gap(model::Precision p, std::size_t tokens,
                          std::uint64_t seed) {
  model::ModelConfig mc = model::ModelConfig::gemma_pattern(6, desk_layer());
  mc.kernels.precision = p;
  const auto w = model_weights(mc, seed);
  const MatrixF x = random_tokens(tokens, 64, mix(seed, 1));

  model::Model oneshot(mc, w);
  const MatrixF rows = oneshot.prefill(x);

  model::Model stepwise(mc, w);
  MatrixF first(1, 64);
  std::copy(x.row(0).begin(), x.row(0).end(), first.row(0).begin());
  (void)stepwise.prefill(first);
  double worst = 0.0;
  for (std::size_t t = 1; t < tokens; ++t) {
    const auto y = stepwise.decode(x.row(t));
    worst = std::max(worst, max_rel_error(y, rows.row(t)));
  }
  return worst;
}

double rowwise_rel_error(const MatrixF& got, const MatrixF& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    worst = std::max(worst, max_rel_error(got.row(i), ref.row(i)));
  }
  return worst;
}

std::vector<CaseResult> layer_suite(const SuiteOptions& o) {
  std::vector<CaseResult> out;
  const bool f = full(o);

  out.push_back(run_case("layer/decode_matches_prefill", [&](CaseResult& c) {
    const std::size_t seeds = f ? 20 : 2;
    const std::size_t tokens = f ? 64 : 20;
    double worst_f32 = 0.0, worst_mixed = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = mix(o.seed, 200 + s);
      worst_f32 = std::max(
          worst_f32, decode_prefill_gap(model::Precision::kFloat32, tokens, seed));
      worst_mixed = std::max(
          worst_mixed,
          decode_prefill_gap(model::Precision::kMixedBf16, tokens, seed));
    }
    report(c, "seeds", static_cast<double>(seeds));
    check(c, "max_rel_error_f32", worst_f32, 1e-3);
    check(c, "max_rel_error_mixed_bf16", worst_mixed, 1e-3);
  }));

  out.push_back(run_case("layer/swa_eviction", [&](CaseResult& c) {
    model::LayerConfig cfg = desk_layer();
    cfg.window = 8;
    const model::TransformerLayer layer(
        cfg, model::random_layer_weights(cfg, mix(o.seed, 300)));
    const model::KernelSettings ks;
    const std::size_t t = 20;  // decode token t (1-based) at position t - 1
    const MatrixF x = random_tokens(t, 64, mix(o.seed, 301));
    MatrixF prompt(t - 1, 64);
    std::copy(x.data().begin(), x.data().begin() + (t - 1) * 64,
              prompt.data().begin());
    model::LayerCache base(cfg.kv_groups, cfg.head_dim);
    (void)layer.prefill(prompt, base, ks);

    auto decode_with = [&](std::size_t perturbed_pos) {
      auto keys = base.keys();
      auto values = base.values();
      if (perturbed_pos < keys[0].rows()) {
        for (std::size_t g = 0; g < keys.size(); ++g) {
          for (float& v : keys[g].row(perturbed_pos)) v += 3.0f;
          for (float& v : values[g].row(perturbed_pos)) v -= 2.0f;
        }
      }
      model::LayerCache cache(keys, values);
      return layer.decode(x.row(t - 1), cache, ks);
    };
    const auto clean = decode_with(static_cast<std::size_t>(-1));
    // Query index t-1 sees keys t-L_w .. t-1 (0-based); t-1-L_w is evicted.
    const auto evicted = decode_with(t - 1 - cfg.window);
    const auto oldest_visible = decode_with(t - cfg.window);
    check(c, "evicted_change", max_rel_error(evicted, clean), 0);
    check(c, "visible_perturbation_ignored",
          max_rel_error(oldest_visible, clean) > 0 ? 0.0 : 1.0, 0);
  }));

  out.push_back(run_case("layer/model_matches_dense", [&](CaseResult& c) {
    model::ModelConfig mc = model::ModelConfig::gemma_pattern(6, desk_layer());
    mc.kernels.precision = model::Precision::kFloat32;
    const auto w = model_weights(mc, mix(o.seed, 400));
    const std::size_t prompt = f ? 24 : 10, steps = f ? 8 : 4;
    const MatrixF x = random_tokens(prompt + steps, 64, mix(o.seed, 401));
    const MatrixF ref = dense_model_forward(mc.layers, w, x);

    model::Model m(mc, w);
    MatrixF head(prompt, 64);
    std::copy(x.data().begin(), x.data().begin() + prompt * 64,
              head.data().begin());
    MatrixF got = m.prefill(head);
    for (std::size_t t = prompt; t < prompt + steps; ++t) {
      got.append_row(m.decode(x.row(t)));
    }
    check(c, "max_row_rel_error", rowwise_rel_error(got, ref), 1e-3);
  }));

  out.push_back(run_case("layer/vision_matches_dense", [&](CaseResult& c) {
    model::ModelConfig mc = model::ModelConfig::vision(2, desk_layer());
    mc.kernels.precision = model::Precision::kFloat32;
    const auto w = model_weights(mc, mix(o.seed, 500));
    const MatrixF x = random_tokens(f ? 48 : 16, 64, mix(o.seed, 501));
    model::Model m(mc, w);
    const MatrixF got = m.prefill(x);
    const MatrixF ref = dense_model_forward(mc.layers, w, x);
    check(c, "max_row_rel_error", rowwise_rel_error(got, ref), 1e-3);
  }));

  out.push_back(run_case("layer/cache_rows_immutable", [&](CaseResult& c) {
    model::ModelConfig mc = model::ModelConfig::gemma_pattern(6, desk_layer());
    model::Model m(mc, mix(o.seed, 600));
    const std::size_t prompt = 12;
    const MatrixF x = random_tokens(prompt + 4, 64, mix(o.seed, 601));
    MatrixF head(prompt, 64);
    std::copy(x.data().begin(), x.data().begin() + prompt * 64,
              head.data().begin());
    (void)m.prefill(head);
    const auto snapshot = m.caches();
    for (std::size_t t = prompt; t < prompt + 4; ++t) (void)m.decode(x.row(t));
    std::size_t changed = 0;
    for (std::size_t l = 0; l < snapshot.size(); ++l) {
      for (std::size_t g = 0; g < snapshot[l].groups(); ++g) {
        for (std::size_t r = 0; r < prompt; ++r) {
          const auto a = snapshot[l].keys()[g].row(r);
          const auto b = m.caches()[l].keys()[g].row(r);
          const auto va = snapshot[l].values()[g].row(r);
          const auto vb = m.caches()[l].values()[g].row(r);
          if (!std::equal(a.begin(), a.end(), b.begin()) ||
              !std::equal(va.begin(), va.end(), vb.begin())) {
            ++changed;
          }
        }
      }
    }
    check(c, "changed_rows", static_cast<double>(changed), 0);
  }));

  out.push_back(run_case("layer/geglu_matches_dense", [&](CaseResult& c) {
    const model::LayerConfig cfg = desk_layer();
    const auto w = model::random_layer_weights(cfg, mix(o.seed, 700));
    const MatrixF x = random_tokens(1, 64, mix(o.seed, 701));
    const auto got = model::geglu_mlp(x.row(0), w.w_gate, w.w_up, w.w_down,
                                      model::Precision::kFloat32);
    const auto gate = dense_matvec(w.w_gate, x.row(0));
    const auto up = dense_matvec(w.w_up, x.row(0));
    std::vector<float> act(gate.size());
    for (std::size_t i = 0; i < act.size(); ++i) {
      const double u = gate[i];
      const double g =
          0.5 * u *
          (1.0 + std::tanh(std::sqrt(2.0 / std::acos(-1.0)) *
                           (u + 0.044715 * u * u * u)));
      act[i] = static_cast<float>(g * up[i]);
    }
    const auto ref = dense_matvec(w.w_down, act);
    check(c, "max_rel_error",
          max_rel_error(got, std::vector<float>(ref.begin(), ref.end())), 1e-3);
  }));

  out.push_back(run_case("layer/global_layer_count", [&](CaseResult& c) {
    std::size_t globals = 0;
    for (std::size_t i = 0; i < 34; ++i) {
      if (model::layer_kind(i) == model::LayerKind::kGlobal) ++globals;
    }
    check(c, "count_error", std::abs(static_cast<double>(globals) - 5.0), 0);
  }));
  return out;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"q4nx", "attn", "fused",
                                              "mm",   "sim",  "layer"};
  return names;
}

bool is_suite(std::string_view name) {
  const auto& n = suite_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

std::vector<CaseResult> run_suite(std::string_view name,
                                  const SuiteOptions& opts) {
  if (name == "q4nx") return q4nx_suite(opts);
  if (name == "attn") return attn_suite(opts);
  if (name == "fused") return fused_suite(opts);
  if (name == "mm") return mm_suite(opts);
  if (name == "sim") return sim_suite(opts);
  if (name == "layer") return layer_suite(opts);
  throw InvalidArgument("unknown suite: " + std::string(name));
}

std::vector<CaseResult> run_suites(const std::vector<std::string>& names,
                                   const SuiteOptions& opts) {
  for (const std::string& n : names) {
    if (!is_suite(n)) throw InvalidArgument("unknown suite: " + n);
  }
  std::vector<std::vector<CaseResult>> parts(names.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < names.size(); i = next++) {
      parts[i] = run_suite(names[i], opts);
    }
  };
  const std::size_t workers = std::min(worker_cap(), names.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  std::vector<CaseResult> all;
  for (auto& p : parts) {
    for (auto& c : p) all.push_back(std::move(c));
  }
  std::sort(all.begin(), all.end(),
            [](const CaseResult& a, const CaseResult& b) {
              return a.name < b.name;
            });
  return all;
}

}  // namespace flowkern::verify

// SPDX-License-Identifier: Apache-2.0
//
// flowkern command-line driver. Exit codes: 0 all cases pass, 1 at least one
// case failed, 2 usage, config or input errors.
#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowkern/chunked_attn.hpp"
#include "flowkern/dataflow_sim.hpp"
#include "flowkern/errors.hpp"
#include "flowkern/fused_dqp.hpp"
#include "flowkern/model_layer.hpp"
#include "flowkern/q4nx.hpp"
#include "flowkern/tiled_mm.hpp"
#include "flowkern/verify/oracle.hpp"
#include "flowkern/verify/suites.hpp"
#include "run_report.hpp"

namespace fk = flowkern;
using fk::cli::Json;
using fk::cli::RunReport;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Globals {
  std::uint64_t seed = 1;
  std::string out;
  std::string format = "json";
};

struct VerifyArgs {
  std::string suite;
  std::string sizes = "small";
};

struct ModelArgs {
  std::size_t layers = 6;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t kv_groups = 2;
  std::size_t head_dim = 16;
  std::size_t window = 1024;
  std::size_t mlp_hidden = 128;
  std::string precision = "mixed";
};

struct BenchArgs {
  std::string kernel;
  std::size_t len = 256;
  std::vector<std::size_t> shape;
  std::size_t reps = 3;
  ModelArgs model;
};

struct CostArgs {
  std::size_t m = 0, k = 0, n = 0;
  std::string candidates = "default";
  std::size_t l1_bytes = fk::sim::TileArrayConfig{}.l1_bytes;
  std::size_t top = 0;
};

struct SimArgs {
  std::string scenario;
  std::size_t chunks = 100;
  std::size_t lc = 32;
  std::size_t head_dim = 64;
  std::size_t heads_per_group = 2;
  std::vector<std::size_t> shape;
  std::size_t workers = 16;
  double bw = fk::sim::TileArrayConfig{}.dram_rd_bw;
  double required_bw = 0;
  std::size_t l1_bytes = fk::sim::TileArrayConfig{}.l1_bytes;
};

struct Q4nxArgs {
  std::string input, output;
  std::size_t rows = 0, cols = 0;
};

fk::verify::CaseResult make_case(std::string name) {
  fk::verify::CaseResult c;
  c.name = std::move(name);
  return c;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const Globals& g, const VerifyArgs& a, RunReport& r) {
  r.command = "verify " + a.suite;
  r.config = {{"suite", a.suite}, {"sizes", a.sizes}};
  std::vector<std::string> names;
  if (a.suite == "all") {
    names = fk::verify::suite_names();
  } else {
    names = {a.suite};
  }
  fk::verify::SuiteOptions opts;
  opts.seed = g.seed;
  opts.sizes = a.sizes == "full" ? fk::verify::Sizes::kFull
                                 : fk::verify::Sizes::kSmall;
  r.cases = fk::verify::run_suites(names, opts);
  return fk::verify::all_pass(r.cases) ? 0 : kExitFail;
}

// ---------------------------------------------------------------- bench

fk::model::ModelConfig model_config(const ModelArgs& m) {
  fk::model::LayerConfig base;
  base.model_dim = m.model_dim;
  base.heads = m.heads;
  base.kv_groups = m.kv_groups;
  base.head_dim = m.head_dim;
  base.window = m.window;
  base.mlp_hidden = m.mlp_hidden;
  auto cfg = fk::model::ModelConfig::gemma_pattern(m.layers, base);
  cfg.kernels.precision = m.precision == "f32" ? fk::model::Precision::kFloat32
                                                : fk::model::Precision::kMixedBf16;
  for (const auto& l : cfg.layers) l.validate();
  return cfg;
}

Json model_echo(const ModelArgs& m) {
  return {{"layers", m.layers},       {"model_dim", m.model_dim},
          {"heads", m.heads},         {"kv_groups", m.kv_groups},
          {"head_dim", m.head_dim},   {"window", m.window},
          {"mlp_hidden", m.mlp_hidden}, {"precision", m.precision}};
}

std::vector<std::size_t> bench_shape(const BenchArgs& a, std::size_t dims) {
  std::vector<std::size_t> s = a.shape;
  if (s.empty()) s.assign(dims, 256);
  if (s.size() != dims) {
    throw fk::InvalidArgument("--shape needs " + std::to_string(dims) +
                              " comma-separated dims");
  }
  for (std::size_t v : s) {
    if (v == 0) throw fk::InvalidArgument("--shape dims must be positive");
  }
  return s;
}

int cmd_bench(const Globals& g, const BenchArgs& a, RunReport& r) {
  r.command = "bench " + a.kernel;
  r.config = {{"kernel", a.kernel}, {"reps", a.reps}};
  r.table.columns = {"kernel", "size", "reps", "unit", "items", "read_bw_model"};
  r.timing_table.columns = {"seconds", "items_per_s", "read_bytes_per_s"};

  auto add_row = [&](const std::string& size, const char* unit, double items,
                     const char* bw_model, double seconds, double read_bytes) {
    r.table.rows.push_back({a.kernel, size, a.reps, unit, items, bw_model});
    const double bw = seconds > 0 ? read_bytes / seconds : 0.0;
    r.timing_table.rows.push_back(
        {seconds, seconds > 0 ? items / seconds : 0.0, bw});
  };

  if (a.kernel == "prefill" || a.kernel == "decode") {
    if (a.len == 0) throw fk::InvalidArgument("--len must be positive");
    const auto cfg = model_config(a.model);
    r.config["len"] = a.len;
    r.config["model"] = model_echo(a.model);
    if (a.reps == 0) return 0;
    const fk::model::Model proto(cfg, g.seed);
    std::vector<fk::model::LayerWeights> weights;
    for (const auto& l : proto.layers()) weights.push_back(l.weights());
    const std::size_t D = a.model.model_dim;
    const double heads = static_cast<double>(a.model.heads);
    const double cts = 8;  // attention CTs in the reference mapping

    if (a.kernel == "prefill") {
      const fk::MatrixF x = fk::verify::random_matrix(a.len, D, g.seed + 1);
      double total = 0;
      for (std::size_t i = 0; i < a.reps; ++i) {
        fk::model::Model m(cfg, weights);
        const auto t0 = Clock::now();
        (void)m.prefill(x);
        total += seconds_since(t0);
      }
      const double per_rep = total / static_cast<double>(a.reps);
      const double bytes =
          per_rep > 0 ? fk::u_mem_rd(2, static_cast<double>(a.len),
                                     static_cast<double>(cfg.kernels.prefill_chunk),
                                     cts, heads, per_rep) *
                            per_rep
                      : 0.0;
      add_row("len=" + std::to_string(a.len), "tokens",
              static_cast<double>(a.len * a.reps), "u_mem_rd", total,
              bytes * static_cast<double>(a.reps));
    } else {
      fk::model::Model m(cfg, weights);
      (void)m.prefill(fk::verify::random_matrix(a.len, D, g.seed + 1));
      const fk::MatrixF steps = fk::verify::random_matrix(a.reps, D, g.seed + 2);
      const auto t0 = Clock::now();
      for (std::size_t i = 0; i < a.reps; ++i) (void)m.decode(steps.row(i));
      const double total = seconds_since(t0);
      const double per_token = total / static_cast<double>(a.reps);
      const double bytes =
          per_token > 0
              ? fk::u_mem_rd(2, static_cast<double>(a.len),
                             static_cast<double>(cfg.kernels.decode_chunk), cts,
                             heads, per_token) *
                    per_token
              : 0.0;
      add_row("len=" + std::to_string(a.len), "tokens",
              static_cast<double>(a.reps), "u_mem_rd", total,
              bytes * static_cast<double>(a.reps));
    }
    return 0;
  }

  if (a.kernel == "mm") {
    const auto s = bench_shape(a, 3);
    r.config["shape"] = s;
    const auto ranked = fk::select_tile_config(s[0], s[1], s[2],
                                               fk::sim::TileArrayConfig{},
                                               fk::default_candidates());
    const auto& best = ranked.front();
    r.config["tile_config"] = best.config.label();
    if (a.reps == 0) return 0;
    fk::MatrixF A = fk::verify::random_matrix(s[0], s[1], g.seed + 1);
    fk::MatrixF B = fk::verify::random_matrix(s[1], s[2], g.seed + 2);
    fk::round_to_bf16(A);
    fk::round_to_bf16(B);
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < a.reps; ++i) {
      (void)fk::tiled_matmul(A, B, best.config);
    }
    const double total = seconds_since(t0);
    const double macs = static_cast<double>(s[0] * s[1] * s[2] * a.reps);
    add_row(std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" +
                std::to_string(s[2]),
            "macs", macs, "cost_megatile", total,
            best.cost.bytes_moved * static_cast<double>(a.reps));
    return 0;
  }

  if (a.kernel == "fused_dqp") {
    const auto s = bench_shape(a, 2);
    r.config["shape"] = s;
    if (a.reps == 0) return 0;
    const auto w = fk::q4nx::quantize_tensor(
        fk::verify::random_matrix(s[0], s[1], g.seed + 1));
    const fk::MatrixF act = fk::verify::random_matrix(1, s[1], g.seed + 2);
    const auto plan = fk::make_fused_dqp_plan(16, w.block_rows());
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < a.reps; ++i) {
      (void)fk::fused_dqp_mvm(w, act.row(0), plan);
    }
    const double total = seconds_since(t0);
    const double bytes =
        static_cast<double>(w.blocks.size() * fk::q4nx::kBlockBytes);
    add_row(std::to_string(s[0]) + "x" + std::to_string(s[1]), "weights",
            static_cast<double>(s[0] * s[1] * a.reps), "q4nx_bytes", total,
            bytes * static_cast<double>(a.reps));
    return 0;
  }
  throw fk::InvalidArgument("unknown bench kernel: " + a.kernel);
}

// ---------------------------------------------------------------- cost

Json cost_json(const fk::CostReport& c) {
  return {{"bytes_moved", c.bytes_moved},
          {"flops", c.flops},
          {"padding_overhead", c.padding_overhead},
          {"intensity", c.intensity},
          {"writeback_bytes", c.writeback_bytes}};
}

int cmd_cost(const CostArgs& a, RunReport& r) {
  r.command = "cost";
  r.config = {{"M", a.m},
              {"K", a.k},
              {"N", a.n},
              {"candidates", a.candidates},
              {"l1_bytes", a.l1_bytes}};
  if (a.m == 0 || a.k == 0 || a.n == 0) {
    throw fk::InvalidArgument("cost: M, K, N must be positive");
  }
  fk::sim::TileArrayConfig hw;
  hw.l1_bytes = a.l1_bytes;
  hw.validate();
  const auto candidates = a.candidates == "reference" ? fk::reference_megatiles()
                                                  : fk::default_candidates();
  const auto ranked = fk::select_tile_config(a.m, a.k, a.n, hw, candidates);
  r.table.columns = {"rank",      "config",           "bytes_moved",
                     "flops",     "padding_overhead", "intensity",
                     "writeback_bytes", "score"};
  const std::size_t count =
      a.top == 0 ? ranked.size() : std::min(a.top, ranked.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto& rc = ranked[i];
    r.table.rows.push_back({i + 1, rc.config.label(), rc.cost.bytes_moved,
                            rc.cost.flops, rc.cost.padding_overhead,
                            rc.cost.intensity, rc.cost.writeback_bytes,
                            rc.score});
  }
  r.result = {{"best", ranked.front().config.label()},
              {"best_cost", cost_json(ranked.front().cost)},
              {"feasible", ranked.size()}};
  return 0;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const SimArgs& a, RunReport& r) {
  r.command = "simulate " + a.scenario;
  r.config = {{"scenario", a.scenario}, {"bw", a.bw}, {"l1_bytes", a.l1_bytes}};
  fk::sim::TileArrayConfig hw;
  hw.dram_rd_bw = a.bw;
  hw.l1_bytes = a.l1_bytes;
  hw.validate();

  std::vector<fk::sim::StageSpec> stages;
  fk::sim::TileArrayConfig run_hw = hw;
  if (a.scenario == "flowkv") {
    r.config["chunks"] = a.chunks;
    r.config["lc"] = a.lc;
    r.config["head_dim"] = a.head_dim;
    r.config["heads_per_group"] = a.heads_per_group;
    if (a.chunks == 0) throw fk::InvalidArgument("simulate: zero chunks");
    stages = fk::sim::flowkv_stages(hw, a.chunks * a.lc, a.lc, a.head_dim,
                                    a.heads_per_group);
    const auto fit = fk::sim::check_l1_fit(
        fk::sim::flowkv_ct0_buffers(a.lc, a.head_dim, a.heads_per_group), hw);
    r.result["l1_bytes_used"] = fit.total_bytes;
    r.result["l1_fits"] = fit.fits;
  } else if (a.scenario == "fused_dqp") {
    std::vector<std::size_t> s = a.shape.empty()
                                     ? std::vector<std::size_t>{2048, 2048}
                                     : a.shape;
    if (s.size() != 2 || s[0] == 0 || s[1] == 0 || a.workers == 0) {
      throw fk::InvalidArgument("simulate fused_dqp: --shape M,K and --workers");
    }
    r.config["shape"] = s;
    r.config["workers"] = a.workers;
    // One worker's stream: its share of the weight blocks, bandwidth split
    // evenly across workers.
    const std::size_t blocks = (fk::q4nx::padded_rows(s[0]) / fk::q4nx::kBlockRows) *
                               (fk::q4nx::padded_cols(s[1]) / fk::q4nx::kBlockCols);
    fk::sim::StageSpec st;
    st.name = "fused_dqp";
    st.transfer_bytes = static_cast<double>(fk::q4nx::kBlockBytes);
    st.compute_time = static_cast<double>(fk::q4nx::kBlockRows * fk::q4nx::kBlockCols) /
                      (hw.macs_per_cycle * hw.clock_hz);
    st.chunk_count = (blocks + a.workers - 1) / a.workers;
    stages.push_back(st);
    run_hw.dram_rd_bw = hw.dram_rd_bw / static_cast<double>(a.workers);
  } else if (a.scenario == "mm") {
    std::vector<std::size_t> s = a.shape.empty()
                                     ? std::vector<std::size_t>{512, 512, 512}
                                     : a.shape;
    if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0) {
      throw fk::InvalidArgument("simulate mm: --shape M,K,N");
    }
    r.config["shape"] = s;
    const auto ranked =
        fk::select_tile_config(s[0], s[1], s[2], hw, fk::default_candidates());
    r.config["tile_config"] = ranked.front().config.label();
    stages = fk::matmul_stages(s[0], s[1], s[2], ranked.front().config, hw);
  } else {
    throw fk::InvalidArgument("unknown scenario: " + a.scenario);
  }

  const auto tl = fk::sim::simulate_pipeline(stages, run_hw);
  r.table.columns = {"stage", "chunk", "kind", "start", "end"};
  for (const auto& row : fk::sim::timeline_rows(tl)) {
    r.table.rows.push_back({row.stage, row.chunk, row.kind, row.start, row.end});
  }

  double slowest = 0;
  Json per_stage = Json::array();
  for (const auto& s : tl.stages) {
    slowest = std::max({slowest, s.transfer_time, s.compute_time});
    per_stage.push_back({{"name", s.name},
                         {"transfer_time", s.transfer_time},
                         {"compute_time", s.compute_time}});
  }
  const double chunks = static_cast<double>(stages.front().chunk_count);
  const double required = a.required_bw > 0
                              ? a.required_bw
                              : fk::sim::balanced_bandwidth(stages);
  r.config["required_bw"] = required;
  r.result["stages"] = per_stage;
  r.result["chunks"] = stages.front().chunk_count;
  r.result["total_time"] = tl.total_time;
  r.result["total_bytes"] = tl.total_bytes;
  r.result["time_per_chunk"] = tl.total_time / chunks;
  r.result["slowest_stage_time"] = slowest;
  // Spacing of the last stage's compute completions after the first chunk.
  const auto& tail = tl.stages.back().chunks;
  const double interval =
      tail.size() > 1
          ? (tail.back().compute_end - tail.front().compute_end) /
                static_cast<double>(tail.size() - 1)
          : tl.total_time;
  r.result["steady_state_interval"] = interval;
  r.result["steady_state_ratio"] = slowest > 0 ? interval / slowest : 0.0;
  r.result["bound"] = fk::sim::to_string(fk::sim::classify_bound(required, hw));
  return 0;
}

// ---------------------------------------------------------------- q4nx

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fk::InvalidArgument("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw fk::InvalidArgument("cannot write " + path);
}

fk::MatrixF read_raw_f32(const std::string& path, std::size_t rows,
                         std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw fk::InvalidArgument("pack needs positive --rows and --cols");
  }
  const auto bytes = read_file(path);
  if (bytes.size() != rows * cols * sizeof(float)) {
    throw fk::FormatError("raw input has " + std::to_string(bytes.size()) +
                          " bytes, expected " +
                          std::to_string(rows * cols * sizeof(float)));
  }
  fk::MatrixF m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint32_t u = 0;
    for (int b = 3; b >= 0; --b) u = (u << 8) | bytes[i * 4 + b];
    std::memcpy(&m.data()[i], &u, sizeof u);
  }
  return m;
}

Json header_json(const fk::q4nx::ContainerHeader& h, std::size_t file_bytes) {
  const std::size_t blocks = (h.rows / fk::q4nx::kBlockRows) *
                             (h.cols / fk::q4nx::kBlockCols);
  return {{"version", h.version},
          {"logical_rows", h.logical_rows},
          {"logical_cols", h.logical_cols},
          {"group_size", h.group_size},
          {"padded_rows", h.rows},
          {"padded_cols", h.cols},
          {"block_count", blocks},
          {"block_bytes", fk::q4nx::kBlockBytes},
          {"payload_bytes", file_bytes - fk::q4nx::kContainerHeaderBytes},
          {"file_bytes", file_bytes}};
}

int cmd_q4nx_pack(const Q4nxArgs& a, RunReport& r) {
  r.command = "q4nx pack";
  r.config = {{"input", a.input}, {"output", a.output},
              {"rows", a.rows},   {"cols", a.cols}};
  const fk::MatrixF w = read_raw_f32(a.input, a.rows, a.cols);
  const auto tensor = fk::q4nx::quantize_tensor(w);
  const auto bytes = fk::q4nx::write_container(tensor);
  write_file(a.output, bytes.data(), bytes.size());

  const fk::MatrixF back = fk::to_float(fk::q4nx::dequantize_tensor(tensor));
  double max_err = 0, worst_ratio = 0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const auto& blk = tensor.block(i / fk::q4nx::kBlockRows,
                                     j / fk::q4nx::kBlockCols);
      const double d = blk.scale(fk::q4nx::group_index(
                                     i % fk::q4nx::kBlockRows,
                                     j % fk::q4nx::kBlockCols))
                           .to_float();
      const double err = std::abs(double(back(i, j)) - w(i, j));
      const double bound = d / 2 + std::ldexp(std::abs(double(w(i, j))), -8);
      max_err = std::max(max_err, err);
      if (bound > 0) worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  auto c = make_case("q4nx/pack");
  const bool same = fk::q4nx::read_container(bytes) == tensor;
  c.metrics.push_back({"container_mismatch", same ? 0.0 : 1.0, 0.0, true});
  c.metrics.push_back({"max_abs_error", max_err, 0.0, false});
  c.metrics.push_back({"worst_error_over_bound", worst_ratio, 0.0, false});
  fk::verify::settle(c);
  r.cases.push_back(c);
  r.result = header_json(fk::q4nx::read_container_header(bytes), bytes.size());
  return fk::verify::all_pass(r.cases) ? 0 : kExitFail;
}

int cmd_q4nx_unpack(const Q4nxArgs& a, RunReport& r) {
  r.command = "q4nx unpack";
  r.config = {{"input", a.input}, {"output", a.output}};
  const auto bytes = read_file(a.input);
  const auto tensor = fk::q4nx::read_container(bytes);
  const fk::MatrixF w = fk::to_float(fk::q4nx::dequantize_tensor(tensor));
  std::vector<std::uint8_t> raw(w.size() * 4);
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::uint32_t u = 0;
    std::memcpy(&u, &w.data()[i], sizeof u);
    for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  write_file(a.output, raw.data(), raw.size());
  r.result = header_json(fk::q4nx::read_container_header(bytes), bytes.size());
  return 0;
}

int cmd_q4nx_inspect(const Q4nxArgs& a, RunReport& r) {
  r.command = "q4nx inspect";
  r.config = {{"input", a.input}};
  const auto bytes = read_file(a.input);
  const auto tensor = fk::q4nx::read_container(bytes);
  r.result = header_json(fk::q4nx::read_container_header(bytes), bytes.size());
  r.table.columns = {"block_row", "block_col", "bytes",   "scale_min",
                     "scale_max", "min_min",   "min_max"};
  for (std::size_t br = 0; br < tensor.block_rows(); ++br) {
    for (std::size_t bc = 0; bc < tensor.block_cols(); ++bc) {
      const auto& b = tensor.block(br, bc);
      float smin = INFINITY, smax = -INFINITY, mmin = INFINITY, mmax = -INFINITY;
      for (std::size_t gi = 0; gi < fk::q4nx::kGroupsPerBlock; ++gi) {
        smin = std::min(smin, b.scale(gi).to_float());
        smax = std::max(smax, b.scale(gi).to_float());
        mmin = std::min(mmin, b.min(gi).to_float());
        mmax = std::max(mmax, b.min(gi).to_float());
      }
      r.table.rows.push_back({br, bc, fk::q4nx::kBlockBytes, smin, smax, mmin, mmax});
    }
  }
  return 0;
}

// ---------------------------------------------------------------- output

void emit(const Globals& g, const RunReport& r) {
  const std::string text = g.format == "csv"
                               ? fk::cli::to_csv(r)
                               : fk::cli::to_json(r).dump(2) + "\n";
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(g.out, std::ios::binary);
  out << text;
  if (!out) throw fk::InvalidArgument("cannot write " + g.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowkern: chunked attention, Q4NX and tiled kernels with "
               "verification, cost and simulation reports"};
  app.name("flowkern");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Flat key=value config file; flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out", g.out, "Write the report to this path");
  app.add_option("--format", g.format, "Report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run verification suites");
  {
    std::vector<std::string> suites = fk::verify::suite_names();
    suites.push_back("all");
    verify->add_option("suite", va.suite, "Suite name")
        ->required()
        ->check(CLI::IsMember(suites));
    verify->add_option("--sizes", va.sizes, "Case grid size")
        ->check(CLI::IsMember({"small", "full"}))
        ->capture_default_str();
  }

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time a kernel on this host");
  bench->add_option("kernel", ba.kernel, "Kernel")
      ->required()
      ->check(CLI::IsMember({"prefill", "decode", "mm", "fused_dqp"}));
  bench->add_option("--len", ba.len, "Sequence/context length")->capture_default_str();
  bench->add_option("--shape", ba.shape, "M,K,N for mm; M,K for fused_dqp")
      ->delimiter(',');
  bench->add_option("--reps", ba.reps, "Repetitions; 0 echoes the config")
      ->capture_default_str();
  bench->add_option("--layers", ba.model.layers)->capture_default_str();
  bench->add_option("--model-dim", ba.model.model_dim)->capture_default_str();
  bench->add_option("--heads", ba.model.heads)->capture_default_str();
  bench->add_option("--kv-groups", ba.model.kv_groups)->capture_default_str();
  bench->add_option("--head-dim", ba.model.head_dim)->capture_default_str();
  bench->add_option("--window", ba.model.window)->capture_default_str();
  bench->add_option("--mlp-hidden", ba.model.mlp_hidden)->capture_default_str();
  bench->add_option("--precision", ba.model.precision)
      ->check(CLI::IsMember({"mixed", "f32"}))
      ->capture_default_str();

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "Rank tile configs by data movement");
  cost->add_option("M", ca.m)->required();
  cost->add_option("K", ca.k)->required();
  cost->add_option("N", ca.n)->required();
  cost->add_option("--candidates", ca.candidates, "Candidate set")
      ->check(CLI::IsMember({"default", "reference"}))
      ->capture_default_str();
  cost->add_option("--l1-bytes", ca.l1_bytes, "Per-CT L1 capacity")
      ->capture_default_str();
  cost->add_option("--top", ca.top, "Rows to keep; 0 keeps all");

  SimArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Simulate a kernel pipeline");
  simulate->add_option("scenario", sa.scenario)
      ->required()
      ->check(CLI::IsMember({"flowkv", "fused_dqp", "mm"}));
  simulate->add_option("--chunks", sa.chunks)->capture_default_str();
  simulate->add_option("--lc", sa.lc, "Chunk length")->capture_default_str();
  simulate->add_option("--head-dim", sa.head_dim)->capture_default_str();
  simulate->add_option("--heads-per-group", sa.heads_per_group)
      ->capture_default_str();
  simulate->add_option("--shape", sa.shape, "M,K (fused_dqp) or M,K,N (mm)")
      ->delimiter(',');
  simulate->add_option("--workers", sa.workers)->capture_default_str();
  simulate->add_option("--bw", sa.bw, "Allocated DRAM read bandwidth, B/s")
      ->capture_default_str();
  simulate->add_option("--required-bw", sa.required_bw,
                       "Required bandwidth for classification; default is "
                       "the bandwidth that balances transfer and compute");
  simulate->add_option("--l1-bytes", sa.l1_bytes)->capture_default_str();

  Q4nxArgs qa;
  auto* q4 = app.add_subcommand("q4nx", "Q4NX container tools");
  q4->require_subcommand(1);
  auto* pack = q4->add_subcommand("pack", "Raw little-endian float32 to Q4NX");
  pack->add_option("input", qa.input)->required();
  pack->add_option("output", qa.output)->required();
  pack->add_option("--rows", qa.rows)->required();
  pack->add_option("--cols", qa.cols)->required();
  auto* unpack = q4->add_subcommand("unpack", "Q4NX to raw float32");
  unpack->add_option("input", qa.input)->required();
  unpack->add_option("output", qa.output)->required();
  auto* inspect = q4->add_subcommand("inspect", "Print header and block stats");
  inspect->add_option("input", qa.input)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  RunReport report;
  report.seed = g.seed;
  const auto t0 = Clock::now();
  int code = 0;
  try {
    if (verify->parsed()) {
      code = cmd_verify(g, va, report);
    } else if (bench->parsed()) {
      code = cmd_bench(g, ba, report);
    } else if (cost->parsed()) {
      code = cmd_cost(ca, report);
    } else if (simulate->parsed()) {
      code = cmd_simulate(sa, report);
    } else if (pack->parsed()) {
      code = cmd_q4nx_pack(qa, report);
    } else if (unpack->parsed()) {
      code = cmd_q4nx_unpack(qa, report);
    } else if (inspect->parsed()) {
      code = cmd_q4nx_inspect(qa, report);
    }
    report.total_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    emit(g, report);
  } catch (const std::exception& e) {
    std::cerr << "flowkern: " << e.what() << '\n';
    return kExitUsage;
  }
  return code;
}

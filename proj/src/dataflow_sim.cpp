// SPDX-License-Identifier: Apache-2.0
#include "flowkern/dataflow_sim.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include "flowkern/errors.hpp"

namespace flowkern::sim {

void TileArrayConfig::validate() const {
  if (ct_cols == 0 || ct_rows == 0 || l1_bytes == 0 || mt_count == 0 ||
      mt_bytes == 0 || !(clock_hz > 0) || !(dram_rd_bw > 0) ||
      !(macs_per_cycle > 0)) {
    throw InvalidArgument("tile array config: all fields must be positive");
  }
}

PipelineTimeline simulate_pipeline(const std::vector<StageSpec>& stages,
                                   const TileArrayConfig& cfg) {
  cfg.validate();
  if (stages.empty()) throw InvalidArgument("simulate: no stages");
  const std::size_t n = stages.front().chunk_count;
  if (n == 0) throw InvalidArgument("simulate: zero chunks");
  for (const StageSpec& s : stages) {
    if (s.chunk_count != n) {
      throw InvalidArgument("simulate: stages must agree on chunk count");
    }
    if (s.transfer_bytes < 0 || s.compute_time < 0) {
      throw InvalidArgument("simulate: negative transfer or compute");
    }
  }

  const double stream_bw = cfg.dram_rd_bw / static_cast<double>(stages.size());
  PipelineTimeline tl;
  tl.stages.resize(stages.size());
  for (std::size_t s = 0; s < stages.size(); ++s) {
    tl.stages[s].name = stages[s].name;
    tl.stages[s].transfer_time = stages[s].transfer_bytes / stream_bw;
    tl.stages[s].compute_time = stages[s].compute_time;
    tl.stages[s].chunks.resize(n);
    tl.total_bytes += stages[s].transfer_bytes * static_cast<double>(n);
  }

  // Chunk-major order: every dependency of (s, i) has smaller i, or equal i
  // and smaller s, or is (s+1, i-2).
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      StageTimeline& st = tl.stages[s];
      ChunkInterval& c = st.chunks[i];
      double t_start = 0.0;
      if (i >= 1) t_start = std::max(t_start, st.chunks[i - 1].transfer_end);
      if (i >= 2) t_start = std::max(t_start, st.chunks[i - 2].compute_end);
      c.transfer_start = t_start;
      c.transfer_end = t_start + st.transfer_time;

      double c_start = c.transfer_end;
      if (i >= 1) c_start = std::max(c_start, st.chunks[i - 1].compute_end);
      if (s >= 1) {
        c_start = std::max(c_start, tl.stages[s - 1].chunks[i].compute_end);
      }
      if (s + 1 < stages.size() && i >= 2) {
        c_start =
            std::max(c_start, tl.stages[s + 1].chunks[i - 2].compute_end);
      }
      c.compute_start = c_start;
      c.compute_end = c_start + st.compute_time;
      tl.total_time = std::max(tl.total_time, c.compute_end);
    }
  }
  return tl;
}

std::vector<TimelineRow> timeline_rows(const PipelineTimeline& timeline) {
  std::vector<TimelineRow> rows;
  for (const StageTimeline& st : timeline.stages) {
    for (std::size_t i = 0; i < st.chunks.size(); ++i) {
      const ChunkInterval& c = st.chunks[i];
      rows.push_back({st.name, i, "transfer", c.transfer_start, c.transfer_end});
      rows.push_back({st.name, i, "compute", c.compute_start, c.compute_end});
    }
  }
  return rows;
}

FitReport check_l1_fit(const std::vector<BufferSpec>& buffers,
                       const TileArrayConfig& cfg) {
  FitReport r;
  r.capacity = cfg.l1_bytes;
  for (const BufferSpec& b : buffers) {
    const std::size_t charged = b.bytes * (b.double_buffered ? 2 : 1);
    r.breakdown.emplace_back(b.name, charged);
    r.total_bytes += charged;
  }
  r.fits = r.total_bytes <= r.capacity;
  return r;
}

std::vector<BufferSpec> flowkv_ct0_buffers(std::size_t chunk_len,
                                           std::size_t head_dim,
                                           std::size_t heads_per_group,
                                           std::size_t elem_bytes) {
  const std::size_t rows = heads_per_group;
  return {
      {"k_chunk", chunk_len * head_dim * elem_bytes, true},
      {"q", rows * head_dim * elem_bytes, false},
      {"scores_f", rows * chunk_len * sizeof(float), false},
      {"m_c_l", 3 * rows * sizeof(float), false},
  };
}

const char* to_string(Bound b) {
  return b == Bound::kMemory ? "memory_bound" : "compute_bound";
}

Bound classify_bound(double required_bw, const TileArrayConfig& cfg) {
  return cfg.dram_rd_bw < required_bw ? Bound::kMemory : Bound::kCompute;
}

double required_bw_at_clock(double required_bw, double reference_clock_hz,
                            double clock_hz) {
  if (!(reference_clock_hz > 0)) {
    throw InvalidArgument("reference clock must be positive");
  }
  return required_bw * clock_hz / reference_clock_hz;
}

std::vector<StageSpec> flowkv_stages(const TileArrayConfig& cfg,
                                     std::size_t context_len,
                                     std::size_t chunk_len,
                                     std::size_t head_dim,
                                     std::size_t heads_per_group,
                                     std::size_t elem_bytes) {
  if (context_len == 0 || chunk_len == 0 || head_dim == 0 ||
      heads_per_group == 0) {
    throw InvalidArgument("flowkv_stages: dims must be positive");
  }
  const std::size_t chunks = (context_len + chunk_len - 1) / chunk_len;
  const double bytes = static_cast<double>(chunk_len * head_dim * elem_bytes);
  // Each stage does one MAC per (query head, key, channel) per chunk.
  const double macs =
      static_cast<double>(heads_per_group * chunk_len * head_dim);
  const double t = macs / (cfg.macs_per_cycle * cfg.clock_hz);
  return {{"ct0", bytes, t, chunks}, {"ct1", bytes, t, chunks}};
}

double balanced_bandwidth(const std::vector<StageSpec>& stages) {
  double bw = 0.0;
  for (const StageSpec& s : stages) {
    if (s.compute_time > 0) bw += s.transfer_bytes / s.compute_time;
  }
  return bw;
}

PlacementReport map_kernels(const KernelAssignment& a,
                            const TileArrayConfig& cfg) {
  PlacementReport r;
  auto fail = [&r](std::string msg) {
    r.valid = false;
    r.error = std::move(msg);
    return r;
  };

  std::set<std::pair<std::size_t, std::size_t>> used;
  auto claim = [&](const CtCoord& c) {
    if (c.col >= cfg.ct_cols || c.row >= cfg.ct_rows) return false;
    return used.insert({c.col, c.row}).second;
  };
  for (const CtCoord& c : a.flowkv) {
    if (!claim(c)) return fail("FlowKV CT outside the grid or used twice");
  }
  for (const CtCoord& c : a.fused_dqp) {
    if (!claim(c)) return fail("FusedDQP CT outside the grid or used twice");
  }
  for (const auto& [name, c] : a.nonlinear) {
    if (!claim(c)) return fail(name + " CT outside the grid or used twice");
  }
  r.used = used.size();
  if (r.used > cfg.ct_count()) return fail("more CTs used than available");

  if (a.flowkv.size() % 2 != 0) return fail("unpaired FlowKV CT");
  r.flowkv_pairs = a.flowkv.size() / 2;
  for (std::size_t p = 0; p < r.flowkv_pairs; ++p) {
    const CtCoord& c0 = a.flowkv[2 * p];
    const CtCoord& c1 = a.flowkv[2 * p + 1];
    const bool adjacent = c0.col == c1.col &&
                          (c0.row + 1 == c1.row || c1.row + 1 == c0.row);
    if (!adjacent) return fail("FlowKV pair CTs are not column neighbours");
  }
  if (a.kv_groups > r.flowkv_pairs) {
    return fail(std::to_string(a.kv_groups) + " KV groups but only " +
                std::to_string(r.flowkv_pairs) + " FlowKV pairs");
  }
  for (std::size_t g = 0; g < a.kv_groups; ++g) r.group_to_pair.push_back(g);
  return r;
}

KernelAssignment reference_decode_assignment() {
  KernelAssignment a;
  for (std::size_t col = 0; col < 2; ++col) {
    for (std::size_t row = 0; row < 4; ++row) a.flowkv.push_back({col, row});
  }
  for (std::size_t col = 2; col < 6; ++col) {
    for (std::size_t row = 0; row < 4; ++row) a.fused_dqp.push_back({col, row});
  }
  a.nonlinear = {{"rope", {6, 0}}, {"rmsnorm_residual", {6, 1}},
                 {"gelu_mul", {6, 2}}};
  a.kv_groups = 4;
  return a;
}

}  // namespace flowkern::sim

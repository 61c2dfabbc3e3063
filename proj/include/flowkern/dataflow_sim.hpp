// SPDX-License-Identifier: Apache-2.0
//
// Analytical model of the tile array: CT grid, L1/L2 capacities, DMA streams
// with double buffering, and memory- vs compute-bound classification. Times
// are in seconds. This is an event model, not a cycle-accurate simulator.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace flowkern::sim {

struct TileArrayConfig {
  std::size_t ct_cols = 8;
  std::size_t ct_rows = 4;
  std::size_t l1_bytes = 64 * 1024;
  std::size_t mt_count = 8;
  std::size_t mt_bytes = 512 * 1024;
  double clock_hz = 1.8e9;
  double dram_rd_bw = 40e9;  // allocated read bandwidth, bytes/s
  double macs_per_cycle = 64;  // per CT vector unit; stand-in value

  std::size_t ct_count() const { return ct_cols * ct_rows; }
  std::size_t l2_bytes() const { return mt_count * mt_bytes; }
  void validate() const;
};

/// One pipeline stage: a CT fed by its own DMA stream. Per chunk it moves
/// transfer_bytes and then computes for compute_time.
struct StageSpec {
  std::string name;
  double transfer_bytes = 0;
  double compute_time = 0;
  std::size_t chunk_count = 1;
};

struct ChunkInterval {
  double transfer_start = 0;
  double transfer_end = 0;
  double compute_start = 0;
  double compute_end = 0;
};

struct StageTimeline {
  std::string name;
  double transfer_time = 0;  // per chunk
  double compute_time = 0;   // per chunk
  std::vector<ChunkInterval> chunks;
};

struct PipelineTimeline {
  std::vector<StageTimeline> stages;
  double total_time = 0;
  double total_bytes = 0;
};

/// Simulates a chain of stages that stream concurrently and share the DRAM
/// read bandwidth equally. Per stage s and chunk i (two L1 buffers):
///   transfer i starts after transfer i-1 ends and compute i-2 freed its buffer
///   compute i starts after transfer i ends, compute i-1 ends, and (s > 0)
///   stage s-1 finished compute i; stage s-1 may run at most two chunks ahead
///   of stage s (double-buffered hand-off, zero transfer latency).
/// Throws InvalidArgument for an empty stage list, zero chunks, or stages
/// with different chunk counts.
PipelineTimeline simulate_pipeline(const std::vector<StageSpec>& stages,
                                   const TileArrayConfig& cfg);

struct TimelineRow {
  std::string stage;
  std::size_t chunk = 0;
  std::string kind;  // "transfer" | "compute"
  double start = 0;
  double end = 0;
};

std::vector<TimelineRow> timeline_rows(const PipelineTimeline& timeline);

struct BufferSpec {
  std::string name;
  std::size_t bytes = 0;
  bool double_buffered = false;
};

struct FitReport {
  std::vector<std::pair<std::string, std::size_t>> breakdown;  // charged bytes
  std::size_t total_bytes = 0;
  std::size_t capacity = 0;
  bool fits = true;
};

FitReport check_l1_fit(const std::vector<BufferSpec>& buffers,
                       const TileArrayConfig& cfg);

/// L1 buffers of FlowKV's score CT: double-buffered K chunk, the group's query
/// rows, and the per-chunk F / C / l intermediates handed to the second CT.
std::vector<BufferSpec> flowkv_ct0_buffers(std::size_t chunk_len,
                                           std::size_t head_dim,
                                           std::size_t heads_per_group,
                                           std::size_t elem_bytes = 2);

enum class Bound { kMemory, kCompute };

const char* to_string(Bound b);

/// Memory-bound iff the allocated read bandwidth is strictly below the
/// requirement.
Bound classify_bound(double required_bw, const TileArrayConfig& cfg);

/// Bandwidth requirements scale linearly with the compute clock.
double required_bw_at_clock(double required_bw, double reference_clock_hz,
                            double clock_hz);

/// Two-stage FlowKV pipeline for one KV group: stage "ct0" streams K chunks
/// and computes scores / softmax statistics, stage "ct1" streams V chunks and
/// accumulates F V.
std::vector<StageSpec> flowkv_stages(const TileArrayConfig& cfg,
                                     std::size_t context_len,
                                     std::size_t chunk_len,
                                     std::size_t head_dim,
                                     std::size_t heads_per_group,
                                     std::size_t elem_bytes = 2);

/// Per-stage bandwidth at which transfer time equals compute time.
double balanced_bandwidth(const std::vector<StageSpec>& stages);

struct CtCoord {
  std::size_t col = 0;
  std::size_t row = 0;
  friend bool operator==(const CtCoord&, const CtCoord&) = default;
};

struct KernelAssignment {
  std::vector<CtCoord> flowkv;     // consecutive entries form (CT0, CT1) pairs
  std::vector<CtCoord> fused_dqp;
  std::vector<std::pair<std::string, CtCoord>> nonlinear;
  std::size_t kv_groups = 0;       // one KV group per FlowKV pair
};

struct PlacementReport {
  bool valid = true;
  std::string error;
  std::size_t used = 0;
  std::size_t flowkv_pairs = 0;
  std::vector<std::size_t> group_to_pair;
};

/// Validates a decode-phase placement: CTs inside the grid and used once,
/// FlowKV CTs paired as vertical neighbours in one column, and no more KV
/// groups than pairs.
PlacementReport map_kernels(const KernelAssignment& assignment,
                            const TileArrayConfig& cfg);

/// Two FlowKV columns (4 pairs), four FusedDQP columns, and one CT each for
/// RoPE, RMSNorm-with-residual and GeLU-with-multiply.
KernelAssignment reference_decode_assignment();

}  // namespace flowkern::sim

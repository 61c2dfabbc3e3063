// SPDX-License-Identifier: Apache-2.0
//
// Verification suites. Each case carries its metrics and pinned tolerances;
// a case passes when every checked metric value is <= its tolerance.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flowkern::verify {

enum class Status { kPass, kFail, kError };

const char* to_string(Status s);

struct Metric {
  std::string name;
  double value = 0;
  double tolerance = 0;
  bool checked = true;  // false: reported only
};

struct CaseResult {
  std::string name;
  Status status = Status::kPass;
  std::vector<Metric> metrics;
  std::string message;
  double wall_ms = 0;  // not part of the deterministic payload
};

enum class Sizes { kSmall, kFull };

struct SuiteOptions {
  std::uint64_t seed = 1;
  Sizes sizes = Sizes::kSmall;
};

/// "q4nx", "attn", "fused", "mm", "sim", "layer".
const std::vector<std::string>& suite_names();
bool is_suite(std::string_view name);

/// Runs one suite. Throws InvalidArgument for an unknown name.
std::vector<CaseResult> run_suite(std::string_view name,
                                  const SuiteOptions& opts);

/// Runs several suites on up to worker_cap() threads; results sorted by name.
std::vector<CaseResult> run_suites(const std::vector<std::string>& names,
                                   const SuiteOptions& opts);

/// FLOWKERN_THREADS if set to a positive integer, else hardware concurrency.
std::size_t worker_cap();

/// True when name, status, metric names/values/tolerances and messages match;
/// wall_ms is ignored.
bool same_results(const std::vector<CaseResult>& a,
                  const std::vector<CaseResult>& b);

bool all_pass(const std::vector<CaseResult>& results);

/// Sets status from metrics; kError is kept.
void settle(CaseResult& c);

}  // namespace flowkern::verify

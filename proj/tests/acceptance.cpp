// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: runs every full-size suite and prints one line per
// criterion. Exit status is nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flowkern/chunked_attn.hpp"
#include "flowkern/verify/suites.hpp"

namespace {

using flowkern::verify::CaseResult;
using flowkern::verify::Status;

// Runtime limits in seconds.
constexpr double kAttnLimit = 120.0;
constexpr double kFusedLimit = 60.0;
constexpr double kQ4nxLimit = 60.0;
constexpr double kMmLimit = 120.0;
constexpr double kLayerLimit = 60.0;
constexpr double kUMemRdExpected = 4718592000.0;

struct SuiteRun {
  std::vector<CaseResult> results;
  double seconds = 0;
};

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

struct Selection {
  std::size_t count = 0;
  std::size_t failed = 0;
  std::string first_failure;
  double worst = 0;  // largest value/tolerance over checked metrics
};

Selection select(const std::vector<CaseResult>& results,
                 const std::function<bool(const std::string&)>& pick) {
  Selection s;
  for (const CaseResult& c : results) {
    if (!pick(c.name)) continue;
    ++s.count;
    if (c.status != Status::kPass) {
      if (s.failed++ == 0) {
        s.first_failure = c.name + (c.message.empty() ? "" : ": " + c.message);
      }
    }
    for (const auto& m : c.metrics) {
      if (m.checked && m.tolerance > 0) {
        s.worst = std::max(s.worst, m.value / m.tolerance);
      }
    }
  }
  return s;
}

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("[%s] criterion %2d  %-40s %s\n", ok ? "PASS" : "FAIL", id, title,
              detail.c_str());
  std::fflush(stdout);
}

std::string describe(const Selection& s, double seconds, double limit) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu cases, %zu failed, worst %.3g of tol",
                s.count, s.failed, s.worst);
  std::string out = buf;
  if (limit > 0) {
    std::snprintf(buf, sizeof buf, ", %.1f s (limit %.0f s)", seconds, limit);
    out += buf;
  }
  if (s.failed > 0) out += ", first: " + s.first_failure;
  return out;
}

bool passed(const Selection& s) { return s.count > 0 && s.failed == 0; }

}  // namespace

int main() {
  flowkern::verify::SuiteOptions opts;
  opts.seed = 1;
  opts.sizes = flowkern::verify::Sizes::kFull;

  std::map<std::string, SuiteRun> runs;
  std::vector<CaseResult> first;
  for (const std::string& name : flowkern::verify::suite_names()) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteRun run;
    run.results = flowkern::verify::run_suite(name, opts);
    run.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    first.insert(first.end(), run.results.begin(), run.results.end());
    runs[name] = std::move(run);
  }
  std::sort(first.begin(), first.end(),
            [](const CaseResult& a, const CaseResult& b) {
              return a.name < b.name;
            });

  {
    const SuiteRun& r = runs["attn"];
    const Selection s = select(r.results, [](const std::string& n) {
      return starts_with(n, "attn/") && n != "attn/u_mem_rd";
    });
    report(1, "chunked attention vs reference", passed(s) && r.seconds < kAttnLimit,
           describe(s, r.seconds, kAttnLimit));
  }
  {
    const SuiteRun& r = runs["fused"];
    const Selection s = select(r.results, [](const std::string& n) {
      return starts_with(n, "fused/");
    });
    report(2, "fused dequant matvec vs dense", passed(s) && r.seconds < kFusedLimit,
           describe(s, r.seconds, kFusedLimit));
  }
  {
    const SuiteRun& r = runs["q4nx"];
    const Selection s = select(r.results, [](const std::string& n) {
      return starts_with(n, "q4nx/");
    });
    report(3, "q4nx round trip, error bound, container",
           passed(s) && r.seconds < kQ4nxLimit,
           describe(s, r.seconds, kQ4nxLimit));
  }
  {
    const SuiteRun& r = runs["mm"];
    const Selection s = select(r.results, [](const std::string& n) {
      return starts_with(n, "mm/oracle") ||
             n == "mm/megatile_reduces_to_basic" ||
             n == "mm/cost_decreases_with_expansion";
    });
    report(4, "tiled matmul and cost model", passed(s) && r.seconds < kMmLimit,
           describe(s, r.seconds, kMmLimit));
  }
  {
    const Selection s = select(runs["mm"].results, [](const std::string& n) {
      return n == "mm/reference_megatile_ordering";
    });
    report(5, "megatile ordering at 2048^3", passed(s), describe(s, 0, 0));
  }
  {
    const Selection s = select(runs["sim"].results, [](const std::string& n) {
      return n == "sim/bound_classification";
    });
    report(6, "memory/compute bound classification", passed(s),
           describe(s, 0, 0));
  }
  {
    const Selection s = select(runs["sim"].results, [](const std::string& n) {
      return n == "sim/single_stage_overlap" || n == "sim/steady_state" ||
             n == "sim/brute_force_agreement";
    });
    report(7, "pipeline overlap law", passed(s), describe(s, 0, 0));
  }
  {
    const SuiteRun& r = runs["layer"];
    const Selection s = select(r.results, [](const std::string& n) {
      return n == "layer/decode_matches_prefill" || n == "layer/swa_eviction";
    });
    report(8, "decode vs prefill, window eviction",
           passed(s) && s.count == 2 && r.seconds < kLayerLimit,
           describe(s, r.seconds, kLayerLimit));
  }
  {
    const double got = flowkern::u_mem_rd(2, 2048, 256, 8, 8, 1e-3);
    const Selection s = select(runs["attn"].results, [](const std::string& n) {
      return n == "attn/u_mem_rd";
    });
    char buf[128];
    std::snprintf(buf, sizeof buf, "u_mem_rd = %.1f B/s (expected %.1f)", got,
                  kUMemRdExpected);
    report(9, "memory read bandwidth estimate",
           got == kUMemRdExpected && passed(s), buf);
  }
  {
    const auto second =
        flowkern::verify::run_suites(flowkern::verify::suite_names(), opts);
    const bool same = flowkern::verify::same_results(first, second);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu cases compared across two runs",
                  first.size());
    report(10, "determinism", same && !first.empty(), buf);
  }

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

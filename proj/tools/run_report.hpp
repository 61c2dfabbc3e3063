// SPDX-License-Identifier: Apache-2.0
//
// Run report written by every CLI command. Everything outside "timing" is a
// pure function of the command line, config file and seed.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "flowkern/verify/suites.hpp"

namespace flowkern::cli {

inline constexpr const char* kReportSchema = "flowkern.run_report/1";

using Json = nlohmann::ordered_json;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Json>> rows;
};

struct RunReport {
  std::string command;
  std::uint64_t seed = 0;
  Json config = Json::object();
  std::vector<verify::CaseResult> cases;  // sorted by name on output
  Json result = Json::object();
  Table table;
  Table timing_table;  // wall-clock columns, row-aligned with table
  double total_ms = 0;
};

Json to_json(const RunReport& r);

/// Bench/timeline rows when a table exists, else one line per case metric.
std::string to_csv(const RunReport& r);

/// Returns a list of problems; empty means the document conforms.
std::vector<std::string> validate_report(const Json& doc);

}  // namespace flowkern::cli

// SPDX-License-Identifier: Apache-2.0
#include "run_report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flowkern::cli {

namespace {

Json number(double v) {
  return std::isfinite(v) ? Json(v) : Json(nullptr);
}

Json table_json(const Table& t) {
  Json rows = Json::array();
  for (const auto& row : t.rows) rows.push_back(Json(row));
  return Json{{"columns", t.columns}, {"rows", rows}};
}

std::string csv_field(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return v.dump();
}

void check_table(const Json& t, const std::string& where,
                 std::vector<std::string>& errs) {
  if (!t.is_object() || !t.contains("columns") || !t.contains("rows") ||
      !t["columns"].is_array() || !t["rows"].is_array()) {
    errs.push_back(where + ": expected {columns: [], rows: []}");
    return;
  }
  for (const auto& c : t["columns"]) {
    if (!c.is_string()) errs.push_back(where + ": column names must be strings");
  }
  for (const auto& row : t["rows"]) {
    if (!row.is_array() || row.size() != t["columns"].size()) {
      errs.push_back(where + ": row width does not match columns");
      return;
    }
    for (const auto& v : row) {
      if (v.is_object() || v.is_array()) {
        errs.push_back(where + ": cells must be scalars");
        return;
      }
    }
  }
}

}  // namespace

Json to_json(const RunReport& r) {
  auto cases = r.cases;
  std::sort(cases.begin(), cases.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });

  std::size_t pass = 0, fail = 0, error = 0;
  Json case_list = Json::array();
  Json case_ms = Json::object();
  for (const auto& c : cases) {
    (c.status == verify::Status::kPass   ? pass
     : c.status == verify::Status::kFail ? fail
                                         : error)++;
    Json metrics = Json::array();
    for (const auto& m : c.metrics) {
      metrics.push_back({{"name", m.name},
                         {"value", number(m.value)},
                         {"tolerance", number(m.tolerance)},
                         {"checked", m.checked}});
    }
    Json jc = {{"name", c.name},
               {"status", verify::to_string(c.status)},
               {"metrics", metrics}};
    if (!c.message.empty()) jc["message"] = c.message;
    case_list.push_back(jc);
    case_ms[c.name] = c.wall_ms;
  }

  return Json{
      {"schema", kReportSchema},
      {"command", r.command},
      {"seed", r.seed},
      {"config", r.config},
      {"summary",
       {{"cases", cases.size()}, {"pass", pass}, {"fail", fail}, {"error", error}}},
      {"cases", case_list},
      {"result", r.result},
      {"table", table_json(r.table)},
      {"timing",
       {{"total_ms", r.total_ms},
        {"cases", case_ms},
        {"table", table_json(r.timing_table)}}},
  };
}

std::string to_csv(const RunReport& r) {
  std::ostringstream out;
  if (!r.table.columns.empty()) {
    std::vector<std::string> header = r.table.columns;
    header.insert(header.end(), r.timing_table.columns.begin(),
                  r.timing_table.columns.end());
    for (std::size_t i = 0; i < header.size(); ++i) {
      out << (i ? "," : "") << header[i];
    }
    out << '\n';
    for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
      std::vector<Json> row = r.table.rows[i];
      if (i < r.timing_table.rows.size()) {
        row.insert(row.end(), r.timing_table.rows[i].begin(),
                   r.timing_table.rows[i].end());
      }
      for (std::size_t j = 0; j < row.size(); ++j) {
        out << (j ? "," : "") << csv_field(row[j]);
      }
      out << '\n';
    }
    return out.str();
  }
  out << "case,status,metric,value,tolerance,checked\n";
  auto cases = r.cases;
  std::sort(cases.begin(), cases.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& c : cases) {
    if (c.metrics.empty()) {
      out << csv_field(c.name) << ',' << verify::to_string(c.status) << ",,,,\n";
    }
    for (const auto& m : c.metrics) {
      out << csv_field(c.name) << ',' << verify::to_string(c.status) << ','
          << csv_field(m.name) << ',' << csv_field(number(m.value)) << ','
          << csv_field(number(m.tolerance)) << ',' << (m.checked ? 1 : 0)
          << '\n';
    }
  }
  return out.str();
}

std::vector<std::string> validate_report(const Json& doc) {
  std::vector<std::string> errs;
  if (!doc.is_object()) return {"report must be an object"};
  auto need = [&](const char* key, auto pred, const char* what) {
    if (!doc.contains(key) || !pred(doc[key])) {
      errs.push_back(std::string(key) + ": expected " + what);
      return false;
    }
    return true;
  };
  const auto is_obj = [](const Json& j) { return j.is_object(); };
  if (need("schema", [](const Json& j) { return j.is_string(); }, "string") &&
      doc["schema"] != kReportSchema) {
    errs.push_back("schema: unknown version");
  }
  need("command", [](const Json& j) { return j.is_string(); }, "string");
  need("seed", [](const Json& j) { return j.is_number_unsigned(); },
       "unsigned integer");
  need("config", is_obj, "object");
  need("result", is_obj, "object");

  std::size_t counted[3] = {0, 0, 0};
  if (need("cases", [](const Json& j) { return j.is_array(); }, "array")) {
    std::string prev;
    for (const auto& c : doc["cases"]) {
      if (!c.is_object() || !c.contains("name") || !c["name"].is_string() ||
          !c.contains("status") || !c.contains("metrics") ||
          !c["metrics"].is_array()) {
        errs.push_back("cases: malformed entry");
        continue;
      }
      const std::string name = c["name"];
      if (name < prev) errs.push_back("cases: not sorted by name");
      prev = name;
      const std::string st = c["status"].is_string() ? c["status"].get<std::string>() : "";
      if (st == "pass") ++counted[0];
      else if (st == "fail") ++counted[1];
      else if (st == "error") ++counted[2];
      else errs.push_back("cases: " + name + ": bad status");
      for (const auto& m : c["metrics"]) {
        const bool ok = m.is_object() && m.contains("name") &&
                        m["name"].is_string() && m.contains("value") &&
                        (m["value"].is_number() || m["value"].is_null()) &&
                        m.contains("tolerance") &&
                        (m["tolerance"].is_number() || m["tolerance"].is_null()) &&
                        m.contains("checked") && m["checked"].is_boolean();
        if (!ok) errs.push_back("cases: " + name + ": malformed metric");
      }
    }
  }
  if (need("summary", is_obj, "object")) {
    const Json& s = doc["summary"];
    const char* keys[] = {"pass", "fail", "error"};
    for (int i = 0; i < 3; ++i) {
      if (!s.contains(keys[i]) || !s[keys[i]].is_number_unsigned() ||
          s[keys[i]].get<std::size_t>() != counted[i]) {
        errs.push_back(std::string("summary.") + keys[i] +
                       ": does not match cases");
      }
    }
    if (!s.contains("cases") || !s["cases"].is_number_unsigned() ||
        s["cases"].get<std::size_t>() != counted[0] + counted[1] + counted[2]) {
      errs.push_back("summary.cases: does not match cases");
    }
  }
  if (doc.contains("table")) {
    check_table(doc["table"], "table", errs);
  } else {
    errs.push_back("table: missing");
  }
  if (need("timing", is_obj, "object")) {
    const Json& t = doc["timing"];
    if (!t.contains("total_ms") || !t["total_ms"].is_number()) {
      errs.push_back("timing.total_ms: expected number");
    }
    if (!t.contains("cases") || !t["cases"].is_object()) {
      errs.push_back("timing.cases: expected object");
    }
    if (t.contains("table")) {
      check_table(t["table"], "timing.table", errs);
      if (doc.contains("table") && doc["table"].contains("rows") &&
          t["table"].contains("rows") && !t["table"]["columns"].empty() &&
          t["table"]["rows"].size() != doc["table"]["rows"].size()) {
        errs.push_back("timing.table: row count differs from table");
      }
    } else {
      errs.push_back("timing.table: missing");
    }
  }
  return errs;
}

}  // namespace flowkern::cli

// SPDX-License-Identifier: Apache-2.0
// Drives the flowkern binary end to end.
#include "doctest.h"
#include "flowkern/q4nx.hpp"
#include "flowkern/tiled_mm.hpp"
#include "flowkern/verify/oracle.hpp"
#include "run_report.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using flowkern::cli::Json;
namespace fs = std::filesystem;

namespace {

const fs::path kTmp = fs::path(FLOWKERN_TEST_TMP) / "cli_tmp";

std::string tmp(const std::string& name) {
  fs::create_directories(kTmp);
  return (kTmp / name).string();
}

int run(const std::string& args) {
  const std::string cmd =
      std::string(FLOWKERN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json report(const std::string& args, int expected_code = 0) {
  const std::string out = tmp("report.json");
  fs::remove(out);
  REQUIRE(run(args + " --out " + out) == expected_code);
  const Json doc = Json::parse(slurp(out));
  const auto problems = flowkern::cli::validate_report(doc);
  CHECK_MESSAGE(problems.empty(), (problems.empty() ? "" : problems.front()));
  return doc;
}

Json without_timing(Json doc) {
  doc.erase("timing");
  return doc;
}

void write_raw(const std::string& path, const flowkern::MatrixF& m) {
  std::ofstream out(path, std::ios::binary);
  for (float v : m.data()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int b = 0; b < 4; ++b) out.put(static_cast<char>(u >> (8 * b)));
  }
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("verify bogus") == 2);
  CHECK(run("verify") == 2);
  CHECK(run("cost 0 16 16") == 2);
  CHECK(run("bench mm --shape 1,2") == 2);
  CHECK(run("--format xml verify sim") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("verify reports are reproducible and schema-valid") {
  const Json a = report("--seed 7 verify sim");
  const Json b = report("--seed 7 verify sim");
  CHECK(without_timing(a) == without_timing(b));
  CHECK(a["seed"] == 7);
  CHECK(a["summary"]["fail"] == 0);
  CHECK(a["summary"]["cases"].get<int>() > 0);
  const Json q = report("verify q4nx");
  CHECK(q["summary"]["pass"] == q["summary"]["cases"]);
}

TEST_CASE("validator rejects malformed reports") {
  Json doc = report("verify sim");
  Json broken = doc;
  broken["cases"][0]["status"] = "maybe";
  CHECK_FALSE(flowkern::cli::validate_report(broken).empty());
  broken = doc;
  broken["summary"]["pass"] = 0;
  CHECK_FALSE(flowkern::cli::validate_report(broken).empty());
  broken = doc;
  broken.erase("schema");
  CHECK_FALSE(flowkern::cli::validate_report(broken).empty());
}

TEST_CASE("config file supplies defaults and flags win") {
  const std::string cfg = tmp("run.conf");
  {
    std::ofstream out(cfg);
    out << "# comment\nseed=5\nformat=json\n";
  }
  CHECK(report("--config " + cfg + " verify sim")["seed"] == 5);
  CHECK(report("--config " + cfg + " --seed 9 verify sim")["seed"] == 9);
  {
    std::ofstream out(cfg);
    out << "seed=5\nnot_a_key=1\n";
  }
  CHECK(run("--config " + cfg + " verify sim") == 2);
  CHECK(run("--config " + tmp("missing.conf") + " verify sim") == 2);
}

TEST_CASE("csv output") {
  const std::string out = tmp("cases.csv");
  REQUIRE(run("--format csv --out " + out + " verify sim") == 0);
  const std::string text = slurp(out);
  CHECK(text.rfind("case,status,metric,value,tolerance,checked\n", 0) == 0);
  CHECK(text.find("sim/steady_state,pass,") != std::string::npos);
}

TEST_CASE("cost ranks the reference megatiles") {
  const Json doc = report("cost 2048 2048 2048 --candidates reference");
  const auto& rows = doc["table"]["rows"];
  REQUIRE(rows.size() == 3);
  CHECK(rows[0][1] == "512x512x512@8col");
  CHECK(rows[1][1] == "256x256x512@8col");
  CHECK(rows[2][1] == "128x512x512@8col");
  CHECK(rows[0][2].get<double>() < rows[1][2].get<double>());
  CHECK(rows[1][2].get<double>() < rows[2][2].get<double>());

  const Json small = report("cost 16 256 256");
  CHECK(small["result"]["best"].get<std::string>().ends_with("@1col"));
  CHECK(run("cost 256 256 256 --l1-bytes 64") == 2);
}

TEST_CASE("simulate") {
  const Json doc = report("simulate flowkv --chunks 100 --lc 32");
  CHECK(doc["result"]["chunks"] == 100);
  CHECK(std::abs(doc["result"]["steady_state_ratio"].get<double>() - 1.0) <= 5e-3);
  CHECK(doc["table"]["columns"] ==
        Json::array({"stage", "chunk", "kind", "start", "end"}));
  CHECK(doc["table"]["rows"].size() > 0);

  CHECK(report("simulate flowkv --bw 40e9 --required-bw 60e9")["result"]["bound"] ==
        "memory_bound");
  CHECK(report("simulate flowkv --bw 80e9 --required-bw 60e9")["result"]["bound"] ==
        "compute_bound");
  CHECK(run("simulate flowkv --chunks 0") == 2);
  CHECK(report("simulate fused_dqp --shape 256,512")["result"]["chunks"] == 1);
  CHECK(report("simulate mm --shape 128,128,128")["result"]["total_time"] > 0);
}

TEST_CASE("q4nx pack, inspect, unpack") {
  const flowkern::MatrixF w = flowkern::verify::random_matrix(32, 256, 3);
  const std::string raw = tmp("w.f32"), packed = tmp("w.q4nx"),
                    back = tmp("w_back.f32");
  write_raw(raw, w);
  const Json p = report("q4nx pack " + raw + " " + packed + " --rows 32 --cols 256");
  CHECK(p["cases"][0]["status"] == "pass");

  const Json info = report("q4nx inspect " + packed);
  CHECK(info["result"]["block_count"] == 1);
  CHECK(info["result"]["payload_bytes"] == 5120);
  CHECK(info["table"]["rows"].size() == 1);

  report("q4nx unpack " + packed + " " + back);
  const std::string bytes = slurp(back);
  REQUIRE(bytes.size() == w.size() * 4);
  const auto tensor = flowkern::q4nx::load(packed);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      float v;
      std::memcpy(&v, bytes.data() + 4 * (i * w.cols() + j), 4);
      const float d = tensor.block(0, 0)
                          .scale(flowkern::q4nx::group_index(i, j))
                          .to_float();
      CHECK(std::abs(v - w(i, j)) <= d / 2 + std::ldexp(std::abs(w(i, j)), -8));
    }
  }

  const std::string all = slurp(packed);
  {
    std::ofstream cut(tmp("cut.q4nx"), std::ios::binary);
    cut.write(all.data(), static_cast<std::streamsize>(all.size() - 10));
  }
  CHECK(run("q4nx inspect " + tmp("cut.q4nx")) == 2);
  CHECK(run("q4nx pack " + raw + " " + packed + " --rows 32 --cols 255") == 2);
}

TEST_CASE("bench") {
  const Json echo = report("bench mm --shape 256,256,256 --reps 0");
  CHECK(echo["table"]["rows"].empty());
  CHECK(echo["config"]["shape"] == Json::array({256, 256, 256}));

  const Json dec = report("bench decode --len 64 --reps 2");
  REQUIRE(dec["table"]["rows"].size() == 1);
  CHECK(dec["table"]["rows"][0][5] == "u_mem_rd");
  CHECK(dec["timing"]["table"]["rows"][0][1].get<double>() > 0);
  CHECK(report("bench fused_dqp --shape 64,256 --reps 1")["table"]["rows"].size() == 1);
  CHECK(report("bench prefill --len 16 --reps 1")["table"]["rows"].size() == 1);
}

// SPDX-License-Identifier: Apache-2.0
// Checks on the verification helpers themselves.
#include "doctest.h"
#include "flowkern/errors.hpp"
#include "flowkern/verify/oracle.hpp"
#include "flowkern/verify/suites.hpp"

#include <cstdlib>

using namespace flowkern;
using namespace flowkern::verify;

TEST_CASE("tick enumeration on hand-worked pipelines") {
  CHECK(brute_force_pipeline({{1, 1}}, 3) == 4);
  CHECK(brute_force_pipeline({{2, 4}}, 3) == 14);
  CHECK(brute_force_pipeline({{4, 2}}, 3) == 14);
  // Zero-length actions complete on the tick they start.
  CHECK(brute_force_pipeline({{0, 0}, {0, 0}}, 5) == 0);
  // Stage b waits for a's chunk, then needs its own transfer done too.
  CHECK(brute_force_pipeline({{1, 3}, {5, 1}}, 1) == 6);
}

TEST_CASE("random matrices are seeded") {
  CHECK(random_matrix(3, 4, 1) == random_matrix(3, 4, 1));
  CHECK_FALSE(random_matrix(3, 4, 1) == random_matrix(3, 4, 2));
  const MatrixF m = random_matrix(10, 10, 3, 2.0f, 3.0f);
  for (float v : m.data()) {
    CHECK(v >= 2.0f);
    CHECK(v < 3.0f);
  }
}

TEST_CASE("case status follows checked metrics only") {
  CaseResult c;
  c.metrics = {{"err", 0.5, 1.0, true}, {"info", 99.0, 0.0, false}};
  settle(c);
  CHECK(c.status == Status::kPass);
  c.metrics.push_back({"bad", 2.0, 1.0, true});
  settle(c);
  CHECK(c.status == Status::kFail);
  c.status = Status::kError;
  settle(c);
  CHECK(c.status == Status::kError);
}

TEST_CASE("result comparison ignores wall time") {
  CaseResult a{"x", Status::kPass, {{"m", 1.0, 2.0, true}}, "", 5.0};
  CaseResult b = a;
  b.wall_ms = 900.0;
  CHECK(same_results({a}, {b}));
  b.metrics[0].value = 1.5;
  CHECK_FALSE(same_results({a}, {b}));
}

TEST_CASE("suite registry") {
  CHECK(suite_names().size() == 6);
  CHECK(is_suite("mm"));
  CHECK_FALSE(is_suite("bogus"));
  CHECK_THROWS_AS(run_suite("bogus", SuiteOptions{}), InvalidArgument);
}

TEST_CASE("worker cap reads the environment") {
  setenv("FLOWKERN_THREADS", "3", 1);
  CHECK(worker_cap() == 3);
  setenv("FLOWKERN_THREADS", "zero", 1);
  CHECK(worker_cap() >= 1);
  unsetenv("FLOWKERN_THREADS");
}

TEST_CASE("small suites pass and repeat exactly") {
  SuiteOptions o;
  o.seed = 11;
  const auto first = run_suites({"sim", "q4nx", "mm"}, o);
  CHECK(all_pass(first));
  CHECK(same_results(first, run_suites({"sim", "q4nx", "mm"}, o)));
  for (std::size_t i = 1; i < first.size(); ++i) {
    CHECK(first[i - 1].name < first[i].name);
  }
}

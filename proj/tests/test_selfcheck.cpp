#include <doctest.h>

#include "poco/selfcheck.hpp"

using namespace poco::diag;

TEST_CASE("full-loss gradient check at batch 8 reaches the last stage") {
  // batch 8 gives a 7/3/1 plan, so the h2 head receives a nonzero gradient
  const auto s = full_loss_gradcheck(3, 8);
  CHECK(s.passed);
  CHECK(s.report.max_relative_error < 1e-3);
  CHECK(s.median_nonzero_relative_error < 1e-6);
  std::size_t fc2_nonzero = 0;
  for (const auto& e : s.report.entries) {
    if (e.parameter == "head.fc2.weight" && e.analytic != 0.0) ++fc2_nonzero;
  }
  CHECK(fc2_nonzero > 0);
}

TEST_CASE("property battery") {
  const auto results = selfcheck(5);
  CHECK(results.size() >= 8);
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
  const auto table = format_table(results);
  CHECK(table.rfind("PASS ", 0) == 0);
}

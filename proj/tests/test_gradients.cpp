#include <doctest.h>

#include <set>

#include "mvcc/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mvcc;

TEST_CASE("every differentiable op passes central differences") {
  const auto cases = mvcc::testing::gradient_cases(20240611);
  CHECK(cases.size() >= 100);
  for (const auto& r : mvcc::testing::run_gradient_cases(cases)) {
    INFO(r.name << " max rel error " << r.check.max_rel_error << " at " << r.check.worst);
    CHECK(r.passed);
  }
}

TEST_CASE("gradient catalogue covers each op with several instances") {
  std::multiset<std::string> ops;
  for (const auto& c : mvcc::testing::gradient_cases(1)) ops.insert(c.name.substr(0, c.name.find(" #")));
  for (const char* op : {"matmul", "conv2d_same", "grid_sample_bilinear", "correlation_consistency", "info_nce",
                         "consistency_loss", "cross_entropy_rows", "l2_normalize_rows", "gather_rows"}) {
    CHECK(ops.count(op) == 4);
  }
}

TEST_CASE("check_gradients flags a wrong backward") {
  // Sum of squares whose backward never writes a gradient.
  const auto fn = [](const std::vector<Tensor>& in) {
    std::vector<double> v(in[0].data().begin(), in[0].data().end());
    double s = 0.0;
    for (double x : v) s += x * x;
    return make_result("broken", {1}, {s}, {in[0]}, [](std::span<const double>, GradSinks) {});
  };
  const auto r = check_gradients(fn, {Tensor::parameter({2}, {0.5, -1.5})});
  CHECK(r.max_rel_error > 0.5);
}

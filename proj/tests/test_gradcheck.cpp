// Gradient-check harness contract tests.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mer/gradcheck.hpp"
#include "mer/param_store.hpp"

using namespace mer;

TEST_CASE("quadratic: analytic 2x matches finite differences at x=3") {
  ParamStore ps;
  ps.add("x", {1}).values() = {3.f};
  auto loss = [](auto& p) {
    auto& x = p.get("x");
    return mul(x, x);
  };
  auto report = grad_check(loss, ps);
  CHECK(report.pass);
  CHECK(ps.get("x").grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("constant loss: all gradients zero, pass") {
  ParamStore ps;
  ps.add("x", {4}).values() = {1.f, -2.f, 0.5f, 3.f};
  auto loss = [](auto& p) {
    using S = typename std::decay_t<decltype(p)>::value_type;
    return add(scale(sum_all(p.get("x")), S(0)), TensorT<S>::scalar(S(5)));
  };
  auto report = grad_check(loss, ps);
  CHECK(report.pass);
  CHECK(report.max_abs_diff == doctest::Approx(0.0));
}

TEST_CASE("non-finite loss is rejected") {
  ParamStore ps;
  ps.add("x", {1}).values() = {0.f};
  auto loss = [](auto& p) {
    using S = typename std::decay_t<decltype(p)>::value_type;
    return scale(p.get("x"), std::numeric_limits<S>::infinity());
  };
  CHECK_THROWS_WITH_AS(grad_check(loss, ps), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("nondeterministic loss is rejected") {
  ParamStore ps;
  ps.add("x", {1}).values() = {1.f};
  int calls = 0;
  auto loss = [&calls](auto& p) {
    using S = typename std::decay_t<decltype(p)>::value_type;
    ++calls;
    return add(p.get("x"), TensorT<S>::scalar(S(calls)));
  };
  CHECK_THROWS_WITH_AS(grad_check(loss, ps), doctest::Contains("nondeterministic"),
                       std::runtime_error);
}

TEST_CASE("tolerance rule: zero tolerances flag the tiny fd/analytic gap") {
  ParamStore ps;
  ps.add("x", {1}).values() = {1.3f};
  auto loss = [](auto& p) {
    auto& x = p.get("x");
    return mul(x, mul(x, x));  // x^3: fd at eps 1e-2 has an O(eps^2) bias
  };
  GradCheckOptions opt;
  opt.eps = 1e-2;
  opt.rel_tol = 0.0;
  opt.abs_tol = 0.0;
  auto report = grad_check(loss, ps, opt);
  CHECK_FALSE(report.pass);
}

TEST_CASE("coordinate sampling compares a deterministic subset") {
  ParamStore ps;
  ps.add("x", {100}).values().assign(100, 0.5f);
  auto loss = [](auto& p) { return sum_all(mul(p.get("x"), p.get("x"))); };
  GradCheckOptions opt;
  opt.max_coords_per_param = 7;
  opt.sample_seed = 5;
  auto r1 = grad_check(loss, ps, opt);
  auto r2 = grad_check(loss, ps, opt);
  CHECK(r1.pass);
  CHECK(r1.compared == 7);
  CHECK(r1.per_param[0].max_abs_diff == r2.per_param[0].max_abs_diff);
}

TEST_CASE("eps must be positive") {
  ParamStore ps;
  ps.add("x", {1}).values() = {1.f};
  auto loss = [](auto& p) { return sum_all(p.get("x")); };
  GradCheckOptions opt;
  opt.eps = 0.0;
  CHECK_THROWS_AS(grad_check(loss, ps, opt), std::invalid_argument);
}

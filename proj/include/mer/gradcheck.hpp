#pragma once
// Finite-difference gradient checking.
//
// The analytic gradient comes from one reverse pass at working precision;
// the central differences are evaluated on a double instantiation of the
// same loss program, so the quotient noise stays far below the tolerances.
// The loss callable must therefore be generic over the parameter scalar
// type: it is invoked with both ParamStoreT<float> and ParamStoreT<double>.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mer/param_store.hpp"
#include "mer/rng.hpp"
#include "mer/tensor.hpp"

namespace mer {

struct GradCheckOptions {
  double eps = 1e-3;
  double rel_tol = 1e-2;
  double abs_tol = 1e-4;
  // < 0 compares every coordinate; otherwise a deterministic sample per param
  int64_t max_coords_per_param = -1;
  uint64_t sample_seed = 0;
};

struct ParamGradStats {
  std::string name;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  int64_t compared = 0;
  int64_t failed = 0;
};

struct GradReport {
  std::vector<ParamGradStats> per_param;
  bool pass = false;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  int64_t compared = 0;
  int64_t failed = 0;

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& p : per_param)
      os << (p.failed ? "FAIL " : "ok   ") << p.name << "  max_abs_diff=" << p.max_abs_diff
         << "  max_rel_diff=" << p.max_rel_diff << "  compared=" << p.compared << "\n";
    os << (pass ? "PASS" : "FAIL") << "  coords=" << compared << "  failed=" << failed
       << "  max_abs_diff=" << max_abs_diff << "  max_rel_diff=" << max_rel_diff << "\n";
    return os.str();
  }
};

// loss_fn: callable taking ParamStoreT<T>& and returning a scalar TensorT<T>,
// deterministic for fixed parameters (any sampling frozen or disabled).
template <class LossFn>
GradReport grad_check(LossFn&& loss_fn, ParamStore& params, GradCheckOptions opt = {}) {
  if (opt.eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");

  // determinism probe: two float evaluations must agree bitwise
  const float l1 = loss_fn(params).item();
  const float l2 = loss_fn(params).item();
  if (!std::isfinite(l1)) throw std::runtime_error("grad_check: non-finite loss");
  if (l1 != l2) throw std::runtime_error("grad_check: loss_fn is nondeterministic");

  params.zero_grad();
  TensorT<float> loss = loss_fn(params);
  loss.backward();

  ParamStoreT<double> dparams = params.template cast<double>();

  GradReport report;
  report.pass = true;
  Rng sampler(opt.sample_seed, 0x9d);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& fp = params.param(pi);
    auto& dp = dparams.param(pi);
    const auto& grad = fp.grad();

    std::vector<int64_t> coords;
    const int64_t total = fp.size();
    if (opt.max_coords_per_param < 0 || total <= opt.max_coords_per_param) {
      coords.resize(size_t(total));
      for (int64_t i = 0; i < total; ++i) coords[size_t(i)] = i;
    } else {
      for (int64_t i = 0; i < opt.max_coords_per_param; ++i)
        coords.push_back(int64_t(sampler.below(uint64_t(total))));
    }

    ParamGradStats stats;
    stats.name = params.name(pi);
    for (int64_t ci : coords) {
      const double x0 = dp.values()[size_t(ci)];
      dp.values()[size_t(ci)] = x0 + opt.eps;
      const double lp = double(loss_fn(dparams).item());
      dp.values()[size_t(ci)] = x0 - opt.eps;
      const double lm = double(loss_fn(dparams).item());
      dp.values()[size_t(ci)] = x0;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("grad_check: non-finite loss during perturbation");

      const double numeric = (lp - lm) / (2.0 * opt.eps);
      const double analytic = grad.empty() ? 0.0 : double(grad[size_t(ci)]);
      const double diff = std::abs(analytic - numeric);
      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = denom > 0 ? diff / denom : 0.0;
      stats.max_abs_diff = std::max(stats.max_abs_diff, diff);
      stats.max_rel_diff = std::max(stats.max_rel_diff, rel);
      ++stats.compared;
      if (diff > opt.abs_tol + opt.rel_tol * denom) ++stats.failed;
    }
    report.compared += stats.compared;
    report.failed += stats.failed;
    report.max_abs_diff = std::max(report.max_abs_diff, stats.max_abs_diff);
    report.max_rel_diff = std::max(report.max_rel_diff, stats.max_rel_diff);
    if (stats.failed) report.pass = false;
    report.per_param.push_back(std::move(stats));
  }
  return report;
}

}  // namespace mer

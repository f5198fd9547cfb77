#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pmx/matrix.hpp"

namespace pmx {

/// One named parameter tensor and its analytic gradient.
struct ParamRef {
  std::string name;
  Matrix* value;
  const Matrix* grad;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;  // flat index within worst_param
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;

  bool ok(double tol) const { return max_rel_err < tol; }
};

/// Central-difference check of analytic gradients against a scalar loss.
/// loss_fn() must recompute the loss from the current parameter values and be
/// deterministic. Relative error per coordinate is |a-n| / max(|a|,|n|,floor);
/// the floor keeps finite-difference roundoff on near-zero gradients from
/// registering as large relative errors.
template <class LossFn>
GradCheckReport finite_diff_check(const std::vector<ParamRef>& params, LossFn&& loss_fn,
                                  double h = 1e-5, double denom_floor = 1e-6) {
  GradCheckReport report;
  for (const ParamRef& p : params) {
    for (std::size_t idx = 0; idx < p.value->size(); ++idx) {
      double& theta = (*p.value)[idx];
      const double saved = theta;
      theta = saved + h;
      const double f_plus = loss_fn();
      theta = saved - h;
      const double f_minus = loss_fn();
      theta = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = (*p.grad)[idx];
      const double denom =
          std::max(std::max(std::abs(analytic), std::abs(numeric)), denom_floor);
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = idx;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace pmx

// Central-difference gradient verification. Works on any scalar-valued
// closure over a flat parameter array; run in fp64.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace walsnet {

inline constexpr double kGradCheckStep = 1e-5;

// Zero guard for the relative-error denominator. Central differences of an
// O(1) loss carry rounding noise of about ulp(loss)/2h ~ 1e-11, so a pair of
// near-zero gradients (a structurally invariant parameter, a saturated unit)
// is indistinguishable from noise. The guard forgives |a - n| up to
// tol * kGradCheckFloor = 1e-9 there while leaving measurable gradients on a
// plain relative scale.
inline constexpr double kGradCheckFloor = 1e-5;

inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(kGradCheckFloor, std::abs(analytic) + std::abs(numeric));
}

// Perturbs each entry of `values` in place (restoring it), re-evaluating
// `loss_fn()` at +/- h, and compares the central difference against
// `analytic`. Returns the max relative error over all entries.
template <class Fn>
double grad_check_array(std::vector<double>& values, const std::vector<double>& analytic,
                        Fn&& loss_fn, double h = kGradCheckStep) {
  double worst = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss_fn();
    values[i] = saved - h;
    const double down = loss_fn();
    values[i] = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, grad_rel_err(analytic[i], numeric));
  }
  return worst;
}

}  // namespace walsnet

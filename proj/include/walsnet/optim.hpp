// AdaDelta with a learning-rate multiplier, exponential decay schedule, and
// global-norm gradient clipping.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/model.hpp"
#include "walsnet/tensor.hpp"

namespace walsnet {

template <class Real>
std::vector<Tensor<Real>*> trainable_arrays(ModelParams<Real>& p) {
  std::vector<Tensor<Real>*> out;
  visit_params(p, [&](const std::string&, Tensor<Real>& t, bool trainable) {
    if (trainable) out.push_back(&t);
  });
  return out;
}

// lr0 * factor^(step / period), continuous in the step.
inline double lr_schedule(double step, double lr0 = 5e-5, double factor = 0.9,
                          double period = 3e5) {
  return lr0 * std::pow(factor, step / period);
}

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
template <class Real>
double clip_global(std::vector<Tensor<Real>*> grads, double max_norm) {
  long double sq = 0;
  for (const auto* g : grads)
    for (Real v : g->data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("diverged: non-finite gradient");
      sq += static_cast<long double>(v) * v;
    }
  const double norm = static_cast<double>(std::sqrt(sq));
  if (norm > max_norm && norm > 0) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (auto* g : grads)
      for (Real& v : g->data) v *= scale;
  }
  return norm;
}

template <class Real>
struct OptimizerState {
  ModelParams<Real> eg2;   // accumulated squared gradients
  ModelParams<Real> edx2;  // accumulated squared updates
  double rho = 0.95;
  double eps = 1e-8;
};

template <class Real>
OptimizerState<Real> init_optimizer(const ModelParams<Real>& params) {
  OptimizerState<Real> s;
  s.eg2 = zero_grads(params);
  s.edx2 = zero_grads(params);
  return s;
}

// One AdaDelta update over every trainable array. The accumulator update
// order is: E[g2] first, then the step from the previous E[dx2], then E[dx2].
// The applied delta is lr times the AdaDelta-native step.
template <class Real>
void adadelta_step(ModelParams<Real>& params, ModelParams<Real>& grads, OptimizerState<Real>& state,
                   double lr) {
  auto ps = trainable_arrays(params);
  auto gs = trainable_arrays(grads);
  auto eg = trainable_arrays(state.eg2);
  auto ed = trainable_arrays(state.edx2);
  const double rho = state.rho, eps = state.eps;
  for (std::size_t a = 0; a < ps.size(); ++a) {
    Tensor<Real>& p = *ps[a];
    const Tensor<Real>& g = *gs[a];
    Tensor<Real>& e_g = *eg[a];
    Tensor<Real>& e_d = *ed[a];
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      const double eg_new = rho * static_cast<double>(e_g.data[i]) + (1 - rho) * gi * gi;
      const double dx = -std::sqrt(static_cast<double>(e_d.data[i]) + eps) /
                        std::sqrt(eg_new + eps) * gi;
      e_g.data[i] = static_cast<Real>(eg_new);
      e_d.data[i] = static_cast<Real>(rho * static_cast<double>(e_d.data[i]) + (1 - rho) * dx * dx);
      p.data[i] += static_cast<Real>(lr * dx);
    }
  }
}

}  // namespace walsnet

#pragma once

// MNL preference model: choice probabilities, multinomial logistic loss and
// derivatives, online mirror descent updates, confidence radii, and
// optimistic/pessimistic utilities.

#include <mnlvql/numerics.hpp>
#include <mnlvql/tolerances.hpp>

#include <cassert>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace mnlvql {

struct MnlConfig {
  int dim = 0;        // feature dimension d
  int max_items = 2;  // assortment capacity M (counting the outside option)
  double radius = 1.0;
  double delta = 0.1;
  double eta = 0.0;
  double lambda = 0.0;

  // eta and lambda are pinned functions of (M, B); keeping them as stored
  // fields lets tests probe nonstandard values without recomputation races.
  static MnlConfig make(int dim, int max_items, double radius, double delta) {
    MnlConfig c;
    c.dim = dim;
    c.max_items = max_items;
    c.radius = radius;
    c.delta = delta;
    c.eta = 0.5 * std::log(static_cast<double>(max_items) + 1.0) + radius + 1.0;
    c.lambda = 84.0 * std::numbers::sqrt2 * static_cast<double>(dim) * c.eta;
    return c;
  }
};

struct ChoiceObservation {
  static constexpr int kOutside = -1;

  // One feature row per non-outside item offered; the outside option always
  // participates with the zero feature and is encoded by kOutside.
  std::vector<RealVector> item_features;
  int chosen = kOutside;
};

struct MnlParameterState {
  int horizon = 0;
  RealVector theta;
  SymMatrix hessian_accum;  // lambda*I plus accumulated per-step Hessians
  int episode_count = 0;
  MnlConfig config;
};

inline MnlParameterState make_initial_mnl_state(int horizon, const MnlConfig& config) {
  MnlParameterState s;
  s.horizon = horizon;
  s.theta = RealVector::Zero(config.dim);
  s.hessian_accum = config.lambda * SymMatrix::Identity(config.dim, config.dim);
  s.episode_count = 0;
  s.config = config;
  return s;
}

inline double clamp_utility(double u) {
  return std::clamp(u, -tol::kUtilityClamp, tol::kUtilityClamp);
}

// Probabilities from raw utilities (outside option has utility 0 and occupies
// the final slot of the result). Max-shifted so the exponentials never
// overflow even before the clamp.
inline RealVector choice_probs_from_utilities(const std::vector<double>& utilities) {
  const int n = static_cast<int>(utilities.size());
  double shift = 0.0;
  for (double u : utilities) shift = std::max(shift, clamp_utility(u));
  RealVector p(n + 1);
  double total = std::exp(-shift);
  p[n] = total;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(clamp_utility(utilities[i]) - shift);
    total += p[i];
  }
  p /= total;
  return p;
}

inline std::vector<double> item_utilities(const RealVector& theta,
                                          const std::vector<RealVector>& items) {
  std::vector<double> u(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) u[i] = theta.dot(items[i]);
  return u;
}

// p(a) = exp(phi_a . theta) / (1 + sum_a' exp(phi_a' . theta)); the outside
// probability sits at index items.size().
inline RealVector choice_probs(const RealVector& theta,
                               const std::vector<RealVector>& items) {
  return choice_probs_from_utilities(item_utilities(theta, items));
}

namespace detail {

inline double log_sum_exp_with_zero(const std::vector<double>& utilities) {
  double shift = 0.0;
  for (double u : utilities) shift = std::max(shift, clamp_utility(u));
  double total = std::exp(-shift);
  for (double u : utilities) total += std::exp(clamp_utility(u) - shift);
  return shift + std::log(total);
}

}  // namespace detail

// Negative log-likelihood of the observed choice.
inline double mnl_loss(const RealVector& theta, const ChoiceObservation& obs) {
  const std::vector<double> u = item_utilities(theta, obs.item_features);
  const double lse = detail::log_sum_exp_with_zero(u);
  const double chosen_utility =
      obs.chosen == ChoiceObservation::kOutside
          ? 0.0
          : clamp_utility(u[static_cast<std::size_t>(obs.chosen)]);
  return lse - chosen_utility;
}

inline RealVector mnl_grad(const RealVector& theta, const ChoiceObservation& obs) {
  const RealVector p = choice_probs(theta, obs.item_features);
  RealVector g = RealVector::Zero(theta.size());
  for (std::size_t i = 0; i < obs.item_features.size(); ++i) {
    g += p[static_cast<int>(i)] * obs.item_features[i];
  }
  if (obs.chosen != ChoiceObservation::kOutside) {
    g -= obs.item_features[static_cast<std::size_t>(obs.chosen)];
  }
  return g;
}

// sum_a p_a phi_a phi_a^T - (sum_a p_a phi_a)(sum_a p_a phi_a)^T, the
// covariance of the chosen feature (outside contributes the zero vector), so
// it is PSD by construction.
inline SymMatrix mnl_hessian(const RealVector& theta, const ChoiceObservation& obs) {
  const RealVector p = choice_probs(theta, obs.item_features);
  const auto d = theta.size();
  SymMatrix h = SymMatrix::Zero(d, d);
  RealVector mean = RealVector::Zero(d);
  for (std::size_t i = 0; i < obs.item_features.size(); ++i) {
    const RealVector& phi = obs.item_features[i];
    h.noalias() += p[static_cast<int>(i)] * phi * phi.transpose();
    mean += p[static_cast<int>(i)] * phi;
  }
  h.noalias() -= mean * mean.transpose();
  return h;
}

// One online mirror descent step:
//   Htilde = H + eta * hess(theta_old)
//   theta_bar = theta_old - eta * Htilde^{-1} grad(theta_old)
//   theta_new = projection of theta_bar onto {|theta| <= B} in the Htilde metric
//   H_new = H + hess(theta_new)   (the accumulator uses the post-update point)
inline MnlParameterState omd_update(const MnlParameterState& state,
                                    const ChoiceObservation& obs) {
  const double eta = state.config.eta;
  const RealVector grad = mnl_grad(state.theta, obs);
  const SymMatrix htilde =
      state.hessian_accum + eta * mnl_hessian(state.theta, obs);
  const RealVector theta_bar = state.theta - eta * cholesky_solve(htilde, grad);
  MnlParameterState next = state;
  next.theta = project_to_ball_in_metric(theta_bar, htilde, state.config.radius);
  next.hessian_accum = state.hessian_accum + mnl_hessian(next.theta, obs);
  next.episode_count = state.episode_count + 1;
  return next;
}

// Closed-form confidence radius. The printed source display is typeset with
// overlapping radicals; this transcription is the first complete closed form
// and is intentionally the single place the expression lives.
inline double confidence_radius(const MnlConfig& config, int k,
                                double radius_scale = 1.0) {
  assert(k >= 1);
  const double eta = config.eta;
  const double lambda = config.lambda;
  const double b = config.radius;
  const double m1k = 1.0 + (config.max_items + 1.0) * k;
  const double inner =
      11.0 * (3.0 * std::log(m1k) + b + 2.0) *
          std::log(2.0 * std::sqrt(1.0 + 2.0 * k) / config.delta) +
      2.0 +
      (7.0 * std::sqrt(6.0) / 6.0) * config.dim * eta *
          std::log(1.0 + (k + 1.0) / (2.0 * lambda)) +
      2.0;
  return radius_scale * std::sqrt(2.0 * eta * inner + 4.0 * lambda * b * b);
}

inline double confidence_radius(const MnlParameterState& state,
                                double radius_scale = 1.0) {
  return confidence_radius(state.config, state.episode_count, radius_scale);
}

struct UtilityBounds {
  double optimistic = 0.0;
  double pessimistic = 0.0;
};

inline UtilityBounds utilities(const MnlParameterState& state, const RealVector& phi,
                               double radius_scale = 1.0) {
  const double center = state.theta.dot(phi);
  const double width = confidence_radius(state, radius_scale) *
                       inverse_metric_norm(state.hessian_accum, phi);
  return {center + width, center - width};
}

// Optimistic choice law: if any offered item's value estimate reaches the
// outside option's (ties included), every item uses its optimistic utility;
// otherwise every item uses its pessimistic utility. Outside keeps utility 0.
inline RealVector optimistic_choice_probs(
    const MnlParameterState& state,
    const std::vector<std::pair<RealVector, double>>& items, double f_outside,
    double radius_scale = 1.0) {
  bool use_optimistic = false;
  for (const auto& [phi, f] : items) {
    (void)phi;
    if (f >= f_outside) {
      use_optimistic = true;
      break;
    }
  }
  std::vector<double> utils;
  utils.reserve(items.size());
  for (const auto& [phi, f] : items) {
    (void)f;
    const UtilityBounds u = utilities(state, phi, radius_scale);
    utils.push_back(use_optimistic ? u.optimistic : u.pessimistic);
  }
  return choice_probs_from_utilities(utils);
}

// Problem-dependent curvature diagnostic: the smallest p(a)*p(outside) over
// the given assortment. Callers minimize over assortments of interest.
inline double kappa(const RealVector& theta, const std::vector<RealVector>& items) {
  const RealVector p = choice_probs(theta, items);
  const int n = static_cast<int>(items.size());
  double k = 1.0;
  for (int i = 0; i < n; ++i) k = std::min(k, p[i] * p[n]);
  return k;
}

}  // namespace mnlvql

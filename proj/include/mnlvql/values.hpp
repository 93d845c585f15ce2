#pragma once

// Linear item-level Q-value machinery: variance-weighted ridge regression,
// the elliptical bonus oracle, clipped value estimates, the full parameter
// schedule (covering numbers, betas, exploration threshold), the sigma
// variance schedule, and the information-gain diagnostic.

#include <mnlvql/numerics.hpp>
#include <mnlvql/tolerances.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <vector>

namespace mnlvql {

enum class ValueIndex { kOpt, kOver, kUnder, kSecondMoment };

struct LinearValueModel {
  int horizon = 0;
  ValueIndex index_j = ValueIndex::kOpt;
  RealVector weights;
  SymMatrix design;  // rho/(16 d_lin) I plus the (weighted) Gram matrix
  double beta = 0.0;
  double rho = 1.0;
};

inline double design_ridge(double rho, int d_lin) {
  return rho / (16.0 * static_cast<double>(d_lin));
}

// Solves argmin_w sum_tau (w.psi_tau - y_tau)^2 / sigma_bar_sq[tau]
//               + (rho/(16 d_lin)) |w|^2.
// Pass all-ones sigma_bar_sq for the unweighted fits; then the weighted and
// unweighted paths are arithmetically identical.
inline LinearValueModel weighted_ridge_fit(const std::vector<RealVector>& features,
                                           const std::vector<double>& targets,
                                           const std::vector<double>& sigma_bar_sq,
                                           double rho, int d_lin) {
  assert(features.size() == targets.size() &&
         features.size() == sigma_bar_sq.size());
  LinearValueModel m;
  m.rho = rho;
  m.design = design_ridge(rho, d_lin) * SymMatrix::Identity(d_lin, d_lin);
  RealVector rhs = RealVector::Zero(d_lin);
  for (std::size_t t = 0; t < features.size(); ++t) {
    const double inv = 1.0 / sigma_bar_sq[t];
    m.design.noalias() += inv * features[t] * features[t].transpose();
    rhs += inv * targets[t] * features[t];
  }
  m.weights = cholesky_solve(m.design, rhs);
  return m;
}

inline double elliptical_bonus(const LinearValueModel& m, const RealVector& psi) {
  return inverse_metric_norm(m.design, psi) * std::sqrt(m.beta * m.beta + m.rho);
}

inline double value_f1(const LinearValueModel& m, const RealVector& psi,
                       double bonus1) {
  return std::min(m.weights.dot(psi) + bonus1, 1.0);
}

inline double value_f2(const LinearValueModel& m, const RealVector& psi,
                       double bonus1, double bonus2) {
  return std::min(m.weights.dot(psi) + 2.0 * bonus1 + bonus2, 1.0);
}

inline double value_f_neg2(const LinearValueModel& m, const RealVector& psi,
                           double bonus2) {
  return std::max(m.weights.dot(psi) - bonus2, 0.0);
}

inline double value_second_moment(const LinearValueModel& m,
                                  const RealVector& psi) {
  return std::clamp(m.weights.dot(psi), 0.0, 4.0);
}

// Full theoretical parameter schedule. All covering-number arithmetic stays
// in log space. The schedule is episode-independent because the per-step
// failure probability delta/((K+1)(H+1)) does not depend on k, so everything
// here is computed once per run.
struct ParamSchedule {
  int episodes = 0;       // K
  int horizon = 0;        // H
  int d_lin = 0;          // linear feature dimension
  int d_mnl = 0;          // MNL feature dimension
  int max_items = 2;      // M
  double delta = 0.1;
  double rho = 1.0;
  double nu = 0.0;
  double bound_l = 1.0;   // L, sup-norm bound of the function class
  double eps_c = 0.0;     // function-class cover resolution
  double eps_b = 0.0;     // bonus oracle error (elliptical oracle is exact)
  double log_n = 0.0;     // log covering number of the value class
  double log_nb = 0.0;    // log covering number of the bonus class
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta_bar = 0.0;
  double o_kh = 0.0;      // o(delta^k_h)
  double iota_kh = 0.0;   // iota(delta^k_h)
  double d_nu = 0.0;      // generalized-Eluder bound for the linear class
  double rho_prime = 0.0;
  double beta_scale = 1.0;  // practical multiplier applied to bonuses
  double u_scale = 1.0;     // the constant C of the exploration threshold

  double log_inv_delta_kh() const {
    return std::log((episodes + 1.0) * (horizon + 1.0) / delta);
  }

  // Exploration-policy threshold; with eps_b = 0 this decays exactly as
  // 1/sqrt(k).
  double u_k(int k) const {
    assert(k >= 1);
    const double log_k_h = std::log(static_cast<double>(episodes)) +
                           std::log(static_cast<double>(horizon));
    const double log_nu_delta = std::log(1.0 / nu) + std::log(1.0 / delta);
    const double log_a = log_n + log_k_h + log_nu_delta;
    const double log_b = log_n + log_nb + log_k_h + log_nu_delta;
    const double h52 = std::pow(static_cast<double>(horizon), 2.5);
    const double term1 =
        std::sqrt(log_a) *
        (log_b * h52 * std::sqrt(d_nu) +
         std::sqrt(static_cast<double>(k)) * horizon * eps_b);
    const double term2 = d_mnl * h52 *
                         std::log(static_cast<double>(episodes)) *
                         std::log(static_cast<double>(max_items)) *
                         std::sqrt(log_b);
    return u_scale * (term1 + term2) / std::sqrt(static_cast<double>(k));
  }
};

inline double eluder_bound(int episodes, int d_lin, double rho_prime) {
  return 2.0 * d_lin *
         std::log(1.0 + static_cast<double>(episodes) / (d_lin * rho_prime));
}

inline ParamSchedule make_param_schedule(int episodes, int horizon, int d_lin,
                                         int d_mnl, int max_items, double delta,
                                         double beta_scale = 1.0,
                                         double u_scale = 1.0) {
  ParamSchedule p;
  p.episodes = episodes;
  p.horizon = horizon;
  p.d_lin = d_lin;
  p.d_mnl = d_mnl;
  p.max_items = max_items;
  p.delta = delta;
  p.rho = 1.0;
  p.nu = std::sqrt(1.0 / (static_cast<double>(episodes) * horizon));
  p.bound_l = 1.0;
  p.eps_c = 1.0 / (8.0 * horizon * static_cast<double>(episodes));
  p.eps_b = 0.0;
  p.beta_scale = beta_scale;
  p.u_scale = u_scale;

  const double l = p.bound_l;
  const double k_d = static_cast<double>(episodes);
  const double b_lin = 2.0 * std::sqrt(static_cast<double>(d_lin));
  p.log_n = d_lin * std::log(b_lin / p.eps_c);

  // The bonus-class covering number depends on the largest beta in use, and
  // the betas depend back on it; the dependence is inside a log, so a few
  // fixed-point sweeps converge to machine precision for all practical sizes.
  const double log_inv_delta = std::log(1.0 / delta);
  const double log_inv_delta_kh = p.log_inv_delta_kh();
  const double c1 = std::log(2.0 * std::log(4.0 * l * k_d / p.nu) + 2.0);
  const double c2 = std::log(std::log(8.0 * l / (p.nu * p.nu)) + 2.0);
  const double c1p = std::log(2.0 * std::log(18.0 * l * k_d) + 2.0);
  const double c2p = std::log(std::log(18.0 * l) + 2.0);
  const double c1pp = std::log(2.0 * std::log(32.0 * l * k_d) + 2.0);
  const double c2pp = std::log(std::log(32.0 * l) + 2.0);

  double beta_for_cover = 1.0;
  for (int sweep = 0; sweep < 50; ++sweep) {
    p.log_nb = static_cast<double>(d_lin) * d_lin *
               std::log(1.0 + std::pow(static_cast<double>(d_lin), 1.5) *
                                  beta_for_cover / (p.rho * p.eps_c * p.eps_c));
    const double iota_p =
        std::sqrt(2.0 * (p.log_n + p.log_nb + c1p + c2p + log_inv_delta_kh));
    p.beta2 = std::sqrt(2.0 * (24.0 * l + 21.0)) * iota_p;
    // The second-moment radius literally uses the global failure probability.
    const double iota_pp =
        std::sqrt(2.0 * (p.log_n + p.log_nb + c1pp + c2pp + log_inv_delta));
    p.beta_bar = std::sqrt(8.0 * (11.0 * l + 9.0)) * iota_pp;
    const double next = std::max({1.0, p.beta2, p.beta_bar});
    if (std::abs(next - beta_for_cover) <= 1e-12 * next) {
      beta_for_cover = next;
      break;
    }
    beta_for_cover = next;
  }
  // One final evaluation so the stored cover size matches the final betas.
  p.log_nb = static_cast<double>(d_lin) * d_lin *
             std::log(1.0 + std::pow(static_cast<double>(d_lin), 1.5) *
                                beta_for_cover / (p.rho * p.eps_c * p.eps_c));

  p.beta1 = std::sqrt((6.0 * std::sqrt(p.rho) + 156.0) *
                      (2.0 * p.log_n + std::log(episodes + 1.0) +
                       std::log(horizon + 1.0) + c1 + c2 + log_inv_delta));
  p.o_kh = std::sqrt(2.0 * p.log_n + c1 + c2 + log_inv_delta_kh);
  p.iota_kh =
      3.0 * std::sqrt(p.log_n + p.log_nb + c1 + c2 + log_inv_delta_kh);

  p.rho_prime = p.rho * p.nu * p.nu / (16.0 * d_lin);
  p.d_nu = eluder_bound(episodes, d_lin, p.rho_prime);
  return p;
}

enum class SigmaMode { kSimple, kFull };

// sigma^2 = min{4, max(0, g_hat - f_neg2_hat^2) + D * (sqrt(beta_bar^2+rho)
//                                                    + sqrt(beta2^2+rho))},
// where D is |psi| in the inverse unweighted design metric; degenerate values
// are kept inside [nu^2, 4].
inline double sigma_schedule(double ghat_val, double f_neg2_hat_val,
                             double d_unit, double beta_bar, double beta2,
                             double rho, double nu) {
  const double base = std::max(0.0, ghat_val - f_neg2_hat_val * f_neg2_hat_val);
  const double dterm = d_unit * (std::sqrt(beta_bar * beta_bar + rho) +
                                 std::sqrt(beta2 * beta2 + rho));
  const double sq = std::clamp(base + dterm, nu * nu, 4.0);
  return std::sqrt(sq);
}

inline double sigma_bar_schedule(SigmaMode mode, double sigma, double nu,
                                 double f2_val, double f_neg2_val,
                                 double d_weighted, double o_kh,
                                 double iota_kh) {
  if (mode == SigmaMode::kSimple) return 1.0;
  const double spread = std::max(0.0, f2_val - f_neg2_val);
  return std::max({sigma, nu, std::sqrt(2.0) * iota_kh * std::sqrt(spread),
                   2.0 * (std::sqrt(o_kh) + iota_kh) * std::sqrt(d_weighted)});
}

// Running information gain sum_k min(1, |psi_k|^2_{Sigma_{k-1}^{-1}} /
// sigma_bar_k^2) for the linear class, with the same regularized base design
// the regressions use. Bounded by eluder_bound(K, d_lin, rho_prime) with
// rho_prime = rho nu^2 / (16 d_lin) whenever |psi| <= 1 and sigma_bar >= nu.
class InfoGainTracker {
 public:
  InfoGainTracker(int d_lin, double rho)
      : design_(design_ridge(rho, d_lin) *
                SymMatrix::Identity(d_lin, d_lin)) {}

  double add(const RealVector& psi, double sigma_bar) {
    const double w = inverse_metric_norm(design_, psi);
    const double term = std::min(1.0, w * w / (sigma_bar * sigma_bar));
    design_.noalias() += psi * psi.transpose() / (sigma_bar * sigma_bar);
    total_ += term;
    return term;
  }

  double total() const { return total_; }
  const SymMatrix& design() const { return design_; }

 private:
  SymMatrix design_;
  double total_ = 0.0;
};

}  // namespace mnlvql

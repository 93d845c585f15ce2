#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mnlvql/assort.hpp"
#include "mnlvql/envs.hpp"
#include "mnlvql/mnl.hpp"
#include "mnlvql/rng.hpp"
#include "mnlvql/values.hpp"

// Episode-based agents over TabularEnv. Each agent follows the same driver
// protocol: begin_episode(k), then alternating act/observe over h = 0..H-1.
// Episode indices k are 1-based; horizon steps h are 0-based. Every agent
// plays a uniformly random assortment in episode 1 so that confidence radii
// and design matrices are seeded before the first planning pass.

namespace mnlvql {

struct TooManyAssortments : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cap on explicit assortment enumeration (atomic baseline, random-policy
// evaluation). Above this the combinatorial surface is considered closed.
inline constexpr std::size_t kMaxEnumeratedAssortments = 2'000'000;

// Uniform size in {1, ..., cap}, then a uniform subset of that size.
inline std::vector<int> random_assortment(Rng& rng, int n_items, int cap) {
  assert(n_items >= 1 && cap >= 1 && cap <= n_items);
  const int size = 1 + static_cast<int>(rng.uniform_below(
                           static_cast<std::uint64_t>(cap)));
  std::vector<int> pool(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < size; ++i) {
    const int j = i + static_cast<int>(rng.uniform_below(
                          static_cast<std::uint64_t>(n_items - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(size));
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace detail {

// Exact one-step value of offering `items` at (h, s) under the true choice
// model, with continuation values v_next. The outside option participates
// with weight 1.
inline double policy_step_value(const TabularEnv& env, int h, int s,
                                const std::vector<int>& items,
                                const RealVector& v_next) {
  const RealVector& theta = env.true_theta[static_cast<std::size_t>(h)];
  auto branch = [&](int a) {
    double q = env.r(h, s, a);
    for (int sn = 0; sn < env.n_states; ++sn) {
      const double p = env.p(h, s, a, sn);
      if (p != 0.0) q += p * v_next[sn];
    }
    return q;
  };
  double den = 1.0;
  double num = branch(env.outside_action());
  for (int a : items) {
    const double w = std::exp(clamp_utility(theta.dot(env.phi(s, a))));
    den += w;
    num += w * branch(a);
  }
  return num / den;
}

inline std::vector<std::vector<std::vector<int>>> enumerate_assortments(
    int n_items, int cap, std::size_t limit) {
  std::vector<std::vector<std::vector<int>>> by_size;
  std::size_t total = 0;
  for (int m = 1; m <= cap; ++m) {
    double count = 1.0;
    for (int i = 0; i < m; ++i)
      count *= static_cast<double>(n_items - i) / static_cast<double>(i + 1);
    total += static_cast<std::size_t>(count + 0.5);
    if (total > limit)
      throw TooManyAssortments(
          "assortment enumeration exceeds the supported size");
    by_size.push_back(size_k_subsets(n_items, m));
  }
  return by_size;
}

}  // namespace detail

// A deployed episode policy. `primary` is played until a state flagged in
// `switch_here` is visited; from that step on `fallback` is played. Agents
// without a switching rule leave switch_here empty.
struct FrozenPolicy {
  std::vector<std::vector<std::vector<int>>> primary;   // [h][s]
  std::vector<std::vector<std::vector<int>>> fallback;  // [h][s]
  std::vector<std::vector<char>> switch_here;           // [h][s], may be empty
};

// Exact policy evaluation under the true environment. The switch behaves as
// a latch, so the evaluation runs over the state space augmented with the
// latch bit.
inline double policy_expected_return(const TabularEnv& env,
                                     const FrozenPolicy& pol) {
  const int big_h = env.horizon;
  const int n = env.n_states;
  const bool latching = !pol.switch_here.empty();
  RealVector next0 = RealVector::Zero(n), next1 = RealVector::Zero(n);
  RealVector cur0 = RealVector::Zero(n), cur1 = RealVector::Zero(n);
  for (int h = big_h - 1; h >= 0; --h) {
    const auto hh = static_cast<std::size_t>(h);
    for (int s = 0; s < n; ++s) {
      const auto ss = static_cast<std::size_t>(s);
      if (latching) {
        cur1[s] = detail::policy_step_value(env, h, s, pol.fallback[hh][ss], next1);
        cur0[s] = pol.switch_here[hh][ss] != 0
                      ? cur1[s]
                      : detail::policy_step_value(env, h, s, pol.primary[hh][ss],
                                                  next0);
      } else {
        cur0[s] = detail::policy_step_value(env, h, s, pol.primary[hh][ss], next0);
      }
    }
    next0.swap(cur0);
    next1.swap(cur1);
  }
  return next0[env.initial_state];
}

// Exact expected return of the episode-1 randomization: size uniform in
// {1, ..., M-1}, subset uniform given the size. Enumerates every subset, so
// it shares the enumeration cap with the atomic baseline.
inline double uniform_random_policy_value(const TabularEnv& env) {
  const int cap = std::min(env.max_assortment - 1, env.n_items);
  const auto by_size =
      detail::enumerate_assortments(env.n_items, cap, kMaxEnumeratedAssortments);
  const int n = env.n_states;
  RealVector next = RealVector::Zero(n);
  RealVector cur = RealVector::Zero(n);
  std::vector<double> weight(static_cast<std::size_t>(env.n_items));
  std::vector<double> branch(static_cast<std::size_t>(env.actions()));
  for (int h = env.horizon - 1; h >= 0; --h) {
    const RealVector& theta = env.true_theta[static_cast<std::size_t>(h)];
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < env.actions(); ++a) {
        double q = env.r(h, s, a);
        for (int sn = 0; sn < n; ++sn) {
          const double p = env.p(h, s, a, sn);
          if (p != 0.0) q += p * next[sn];
        }
        branch[static_cast<std::size_t>(a)] = q;
      }
      for (int a = 0; a < env.n_items; ++a)
        weight[static_cast<std::size_t>(a)] =
            std::exp(clamp_utility(theta.dot(env.phi(s, a))));
      const double outside = branch[static_cast<std::size_t>(env.outside_action())];
      double over_sizes = 0.0;
      for (const auto& subsets : by_size) {
        double acc = 0.0;
        for (const auto& items : subsets) {
          double den = 1.0, num = outside;
          for (int a : items) {
            const auto aa = static_cast<std::size_t>(a);
            den += weight[aa];
            num += weight[aa] * branch[aa];
          }
          acc += num / den;
        }
        over_sizes += acc / static_cast<double>(subsets.size());
      }
      cur[s] = over_sizes / static_cast<double>(by_size.size());
    }
    next.swap(cur);
  }
  return next[env.initial_state];
}

namespace detail {

// Per-state feature matrices, one column per action (psi spans every action,
// phi the ground items only); the planners' batched solves consume these.
inline std::vector<Eigen::MatrixXd> psi_columns(const TabularEnv& env) {
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(env.n_states));
  for (int s = 0; s < env.n_states; ++s) {
    auto& m = out[static_cast<std::size_t>(s)];
    m.resize(env.d_lin, env.actions());
    for (int a = 0; a < env.actions(); ++a) m.col(a) = env.psi(s, a);
  }
  return out;
}

inline std::vector<Eigen::MatrixXd> phi_columns(const TabularEnv& env) {
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(env.n_states));
  for (int s = 0; s < env.n_states; ++s) {
    auto& m = out[static_cast<std::size_t>(s)];
    m.resize(env.d_mnl, env.n_items);
    for (int a = 0; a < env.n_items; ++a) m.col(a) = env.phi(s, a);
  }
  return out;
}

}  // namespace detail

class AgentBase {
 public:
  virtual ~AgentBase() = default;
  virtual void begin_episode(int k) = 0;
  virtual std::vector<int> act(int k, int h, int s) = 0;
  virtual void observe(int k, int h, int s, const std::vector<int>& assortment,
                       const StepOutcome& outcome) = 0;
  // Exact expected return of the policy deployed for the current episode,
  // evaluated under the true environment (used for expectation-form regret).
  virtual double expected_episode_value() = 0;
};

// Expectation-form regret increment for the current episode.
inline double expected_regret_increment(double v_star, AgentBase& agent) {
  return v_star - agent.expected_episode_value();
}

struct MnlVqlOptions {
  int episodes = 1;    // K entering the parameter schedule
  double delta = 0.1;
  double radius_scale = 1.0;  // scales the utility confidence width
  double beta_scale = 1.0;    // scales the value bonuses b1, b2
  double u_scale = 1.0;       // scales the exploration threshold
  SigmaMode sigma_mode = SigmaMode::kSimple;
};

class MnlVqlAgent : public AgentBase {
 public:
  struct ReplayTuple {
    int h = 0, s = 0, item = 0;  // item is an action index, outside included
    double reward = 0.0;
    int next_state = 0;
    double sigma = 1.0, sigma_bar = 1.0;
  };

  MnlVqlAgent(const TabularEnv& env, const MnlVqlOptions& opt, std::uint64_t seed)
      : env_(&env),
        opt_(opt),
        schedule_(make_param_schedule(opt.episodes, env.horizon, env.d_lin,
                                      env.d_mnl, env.max_assortment, opt.delta,
                                      opt.beta_scale, opt.u_scale)),
        rng_(seed) {
    const MnlConfig mnl_cfg = MnlConfig::make(env.d_mnl, env.max_assortment,
                                              env.theta_radius, opt.delta);
    const double ridge = design_ridge(schedule_.rho, env.d_lin);
    const auto d = env.d_lin;
    per_h_.resize(static_cast<std::size_t>(env.horizon));
    for (auto& hd : per_h_) {
      hd.mnl = make_initial_mnl_state(env.horizon, mnl_cfg);
      hd.design_w = ridge * SymMatrix::Identity(d, d);
      hd.design_u = hd.design_w;
      hd.sum_r_w = RealVector::Zero(d);
      hd.sum_r_u = RealVector::Zero(d);
      hd.sum_r2_u = RealVector::Zero(d);
      hd.cnt_w.assign(static_cast<std::size_t>(env.n_states), RealVector::Zero(d));
      hd.cnt_u = hd.cnt_w;
      hd.cnt_r_u = hd.cnt_w;
    }
    plan_.resize(static_cast<std::size_t>(env.horizon * env.n_states));
    psi_cols_ = detail::psi_columns(env);
    phi_cols_ = detail::phi_columns(env);
  }

  void begin_episode(int k) override {
    episode_ = k;
    switched_ = false;
    switch_step_ = env_->horizon + 1;
    if (k >= 2) plan(k);
  }

  // Backward planning pass for episode k. Exposed separately so tests can
  // replan after injecting parameters.
  void plan(int k) { plan_impl(k, nullptr); }

  std::vector<int> act(int k, int h, int s) override {
    if (k == 1)
      return random_assortment(rng_, env_->n_items, env_->max_assortment - 1);
    assert(planned_);
    const PlanCell& cell = plan_at(h, s);
    if (!switched_ && cell.violates) {
      switched_ = true;
      switch_step_ = h + 1;  // 1-based step at which the fallback starts
    }
    return switched_ ? cell.a2 : cell.a1;
  }

  void observe(int k, int h, int s, const std::vector<int>& assortment,
               const StepOutcome& out) override {
    const int a = out.chosen_item == StepOutcome::kOutside
                      ? env_->outside_action()
                      : out.chosen_item;
    double sigma, sigma_bar;
    if (k == 1) {
      sigma = 2.0;
      sigma_bar = opt_.sigma_mode == SigmaMode::kFull ? 2.0 : 1.0;
    } else {
      assert(planned_);
      const PlanCell& cell = plan_at(h, s);
      const auto aa = static_cast<std::size_t>(a);
      sigma = sigma_schedule(cell.ghat[aa], cell.fm2_hat[aa], cell.norm_u[aa],
                             schedule_.beta_bar, schedule_.beta2, schedule_.rho,
                             schedule_.nu);
      sigma_bar = sigma_bar_schedule(opt_.sigma_mode, sigma, schedule_.nu,
                                     cell.f2[aa], cell.fm2[aa], cell.norm_w[aa],
                                     schedule_.o_kh, schedule_.iota_kh);
    }
    replay_.push_back({h, s, a, out.reward, out.next_state, sigma, sigma_bar});

    HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
    const RealVector& psi = env_->psi(s, a);
    const double inv = 1.0 / (sigma_bar * sigma_bar);
    const double r = out.reward;
    const auto sn = static_cast<std::size_t>(out.next_state);
    hd.design_w.noalias() += inv * psi * psi.transpose();
    hd.design_u.noalias() += psi * psi.transpose();
    hd.sum_r_w += (inv * r) * psi;
    hd.sum_r_u += r * psi;
    hd.sum_r2_u += (r * r) * psi;
    hd.cnt_w[sn] += inv * psi;
    hd.cnt_u[sn] += psi;
    hd.cnt_r_u[sn] += r * psi;

    ChoiceObservation obs;
    obs.item_features.reserve(assortment.size());
    for (int item : assortment) obs.item_features.push_back(env_->phi(s, item));
    obs.chosen = ChoiceObservation::kOutside;
    for (std::size_t i = 0; i < assortment.size(); ++i)
      if (assortment[i] == out.chosen_item) obs.chosen = static_cast<int>(i);
    hd.mnl = omd_update(hd.mnl, obs);
  }

  double expected_episode_value() override {
    if (episode_ <= 1 || !planned_) return random_policy_value();
    FrozenPolicy pol;
    const auto big_h = static_cast<std::size_t>(env_->horizon);
    const auto n = static_cast<std::size_t>(env_->n_states);
    pol.primary.assign(big_h, std::vector<std::vector<int>>(n));
    pol.fallback = pol.primary;
    pol.switch_here.assign(big_h, std::vector<char>(n, 0));
    for (int h = 0; h < env_->horizon; ++h)
      for (int s = 0; s < env_->n_states; ++s) {
        const PlanCell& cell = plan_at(h, s);
        const auto hh = static_cast<std::size_t>(h);
        const auto ss = static_cast<std::size_t>(s);
        pol.primary[hh][ss] = cell.a1;
        pol.fallback[hh][ss] = cell.a2;
        pol.switch_here[hh][ss] = cell.violates ? 1 : 0;
      }
    return policy_expected_return(*env_, pol);
  }

  // -- introspection --

  bool planned() const { return planned_; }
  // 1-based first step at which the fallback assortment was played this
  // episode; horizon + 1 when the episode stayed on the optimistic plan.
  int switch_step() const { return switch_step_; }
  double threshold() const { return u_current_; }
  const std::vector<ReplayTuple>& replay() const { return replay_; }
  const ParamSchedule& schedule() const { return schedule_; }
  const MnlParameterState& mnl_state(int h) const {
    return per_h_[static_cast<std::size_t>(h)].mnl;
  }
  MnlParameterState& mutable_mnl_state(int h) {
    return per_h_[static_cast<std::size_t>(h)].mnl;
  }
  // j in {1, 2, -2}
  double value_estimate(int h, int s, int j) const {
    const PlanCell& cell = plan_at(h, s);
    return j == 1 ? cell.v1 : j == 2 ? cell.v2 : cell.vm2;
  }
  double fitted_f(int h, int s, int a, int j) const {
    const PlanCell& cell = plan_at(h, s);
    const auto aa = static_cast<std::size_t>(a);
    return j == 1 ? cell.f1[aa] : j == 2 ? cell.f2[aa] : cell.fm2[aa];
  }
  double fitted_second_moment(int h, int s, int a) const {
    return plan_at(h, s).ghat[static_cast<std::size_t>(a)];
  }
  double fitted_f_neg2_raw(int h, int s, int a) const {
    return plan_at(h, s).fm2_hat[static_cast<std::size_t>(a)];
  }
  double design_norm(int h, int s, int a, bool weighted) const {
    const PlanCell& cell = plan_at(h, s);
    const auto aa = static_cast<std::size_t>(a);
    return weighted ? cell.norm_w[aa] : cell.norm_u[aa];
  }
  const std::vector<int>& planned_assortment(int h, int s, int j) const {
    return j == 2 ? plan_at(h, s).a2 : plan_at(h, s).a1;
  }
  const std::vector<double>& choice_weights(int h, int s, int j) const {
    const PlanCell& cell = plan_at(h, s);
    return j == 1 ? cell.w1 : j == 2 ? cell.w2 : cell.wm2;
  }
  bool violation_flag(int h, int s) const { return plan_at(h, s).violates; }

  // -- test hooks --

  // Overrides u_k in subsequent plans; call before begin_episode.
  void force_threshold(double u) { forced_u_ = u; }
  void clear_forced_threshold() { forced_u_.reset(); }
  // Replans with the optimistic fit replaced by the given per-step weight
  // vectors (the over- and under-optimistic fits reuse the same vectors).
  void plan_with_weights(int k, const std::vector<RealVector>& w) {
    plan_impl(k, &w);
  }

 private:
  struct HorizonData {
    MnlParameterState mnl;
    SymMatrix design_w, design_u;
    RealVector sum_r_w, sum_r_u, sum_r2_u;
    std::vector<RealVector> cnt_w, cnt_u, cnt_r_u;  // per next state
  };

  struct PlanCell {
    // Indexed by action; the outside action sits at index n_items.
    std::vector<double> f1, f2, fm2, ghat, fm2_hat, norm_u, norm_w;
    std::vector<double> w1, w2, wm2;  // MNL weights over ground items
    std::vector<int> a1, a2;
    double v1 = 0.0, v2 = 0.0, vm2 = 0.0;
    bool violates = false;
  };

  PlanCell& plan_at(int h, int s) {
    return plan_[static_cast<std::size_t>(h * env_->n_states + s)];
  }
  const PlanCell& plan_at(int h, int s) const {
    return plan_[static_cast<std::size_t>(h * env_->n_states + s)];
  }

  double random_policy_value() {
    if (!random_value_) random_value_ = uniform_random_policy_value(*env_);
    return *random_value_;
  }

  void plan_impl(int k, const std::vector<RealVector>* w_override) {
    assert(k >= 2);
    const int big_h = env_->horizon;
    const int n = env_->n_states;
    const int acts = env_->actions();
    const int ground = env_->n_items;
    const int outside = env_->outside_action();
    const double rho = schedule_.rho;
    const double gain1 = std::sqrt(schedule_.beta1 * schedule_.beta1 + rho);
    const double gain2 = std::sqrt(schedule_.beta2 * schedule_.beta2 + rho);
    u_current_ = forced_u_ ? *forced_u_ : schedule_.u_k(k);

    std::vector<double> opt_util(static_cast<std::size_t>(ground));
    std::vector<double> pess_util(static_cast<std::size_t>(ground));
    exp_opt_.resize(static_cast<std::size_t>(ground));
    exp_pess_.resize(static_cast<std::size_t>(ground));
    AssortmentInstance inst;
    inst.outside_weight = 1.0;
    inst.weights.resize(static_cast<std::size_t>(ground));
    inst.values.resize(static_cast<std::size_t>(ground));
    inst.max_items = env_->max_assortment - 1;

    for (int h = big_h - 1; h >= 0; --h) {
      HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
      RealVector rhs1 = hd.sum_r_w;
      RealVector rhs2 = hd.sum_r_u;
      RealVector rhs_m2 = hd.sum_r_u;
      RealVector rhs_g = hd.sum_r2_u;
      if (h + 1 < big_h) {
        for (int sn = 0; sn < n; ++sn) {
          const auto ss = static_cast<std::size_t>(sn);
          const PlanCell& nxt = plan_at(h + 1, sn);
          rhs1 += nxt.v1 * hd.cnt_w[ss];
          rhs2 += nxt.v2 * hd.cnt_u[ss];
          rhs_m2 += nxt.vm2 * hd.cnt_u[ss];
          rhs_g += (2.0 * nxt.v1) * hd.cnt_r_u[ss] + (nxt.v1 * nxt.v1) * hd.cnt_u[ss];
        }
      }
      const auto llt_w = cholesky(hd.design_w);
      const auto llt_u = cholesky(hd.design_u);
      RealVector w1, w2, wm2, wg;
      if (w_override) {
        w1 = (*w_override)[static_cast<std::size_t>(h)];
        w2 = w1;
        wm2 = w1;
        wg = RealVector::Zero(env_->d_lin);
      } else {
        w1 = llt_w.solve(rhs1);
        w2 = llt_u.solve(rhs2);
        wm2 = llt_u.solve(rhs_m2);
        wg = llt_u.solve(rhs_g);
      }

      const double radius = confidence_radius(hd.mnl, opt_.radius_scale);
      const auto llt_mnl = cholesky(hd.mnl.hessian_accum);

      for (int s = 0; s < n; ++s) {
        PlanCell& cell = plan_at(h, s);
        resize_cell(cell, acts, ground);
        const Eigen::MatrixXd& psis = psi_cols_[static_cast<std::size_t>(s)];
        inverse_metric_norms(llt_w, psis, scratch_lin_, zw_);
        inverse_metric_norms(llt_u, psis, scratch_lin_, zu_);
        mean1_.noalias() = psis.transpose() * w1;
        mean2_.noalias() = psis.transpose() * w2;
        meanm2_.noalias() = psis.transpose() * wm2;
        meang_.noalias() = psis.transpose() * wg;
        for (int a = 0; a < acts; ++a) {
          const auto aa = static_cast<std::size_t>(a);
          const double b1 = schedule_.beta_scale * zw_[a] * gain1;
          const double b2 = schedule_.beta_scale * zu_[a] * gain2;
          cell.f1[aa] = std::min(mean1_[a] + b1, 1.0);
          cell.f2[aa] = std::min(mean2_[a] + 2.0 * b1 + b2, 1.0);
          cell.fm2[aa] = std::max(meanm2_[a] - b2, 0.0);
          cell.fm2_hat[aa] = meanm2_[a];
          cell.ghat[aa] = std::clamp(meang_[a], 0.0, 4.0);
          cell.norm_u[aa] = zu_[a];
          cell.norm_w[aa] = zw_[a];
        }
        const Eigen::MatrixXd& phis = phi_cols_[static_cast<std::size_t>(s)];
        inverse_metric_norms(llt_mnl, phis, scratch_mnl_, width_);
        mnl_mean_.noalias() = phis.transpose() * hd.mnl.theta;
        for (int a = 0; a < ground; ++a) {
          const auto aa = static_cast<std::size_t>(a);
          const double mean = mnl_mean_[a];
          const double width = radius * width_[a];
          opt_util[aa] = mean + width;
          pess_util[aa] = mean - width;
          exp_opt_[aa] = std::exp(clamp_utility(opt_util[aa]));
          exp_pess_[aa] = std::exp(clamp_utility(pess_util[aa]));
        }
        solve_index(cell.f1, exp_opt_, exp_pess_, ground, outside, inst, cell.w1,
                    &cell.a1, cell.v1);
        solve_index(cell.f2, exp_opt_, exp_pess_, ground, outside, inst, cell.w2,
                    &cell.a2, cell.v2);
        solve_index(cell.fm2, exp_opt_, exp_pess_, ground, outside, inst,
                    cell.wm2, nullptr, cell.vm2);

        cell.violates = false;
        const auto oo = static_cast<std::size_t>(outside);
        if (cell.f1[oo] < cell.f2[oo] - u_current_) cell.violates = true;
        for (int a : cell.a1) {
          const auto aa = static_cast<std::size_t>(a);
          if (cell.f1[aa] < cell.f2[aa] - u_current_) cell.violates = true;
        }
      }
    }
    planned_ = true;
  }

  static void resize_cell(PlanCell& cell, int acts, int ground) {
    const auto na = static_cast<std::size_t>(acts);
    const auto ng = static_cast<std::size_t>(ground);
    cell.f1.resize(na);
    cell.f2.resize(na);
    cell.fm2.resize(na);
    cell.ghat.resize(na);
    cell.fm2_hat.resize(na);
    cell.norm_u.resize(na);
    cell.norm_w.resize(na);
    cell.w1.resize(ng);
    cell.w2.resize(ng);
    cell.wm2.resize(ng);
  }

  // One index-j assortment optimization: the ground-set indicator picks the
  // optimistic or pessimistic branch, whose exp-utilities arrive precomputed.
  void solve_index(const std::vector<double>& f,
                   const std::vector<double>& exp_opt,
                   const std::vector<double>& exp_pess, int ground, int outside,
                   AssortmentInstance& inst, std::vector<double>& weights_out,
                   std::vector<int>* chosen_out, double& value_out) {
    const double f_outside = f[static_cast<std::size_t>(outside)];
    bool item_at_least_outside = false;
    for (int a = 0; a < ground; ++a)
      if (f[static_cast<std::size_t>(a)] >= f_outside) {
        item_at_least_outside = true;
        break;
      }
    const std::vector<double>& wsrc = item_at_least_outside ? exp_opt : exp_pess;
    for (int a = 0; a < ground; ++a) {
      const auto aa = static_cast<std::size_t>(a);
      weights_out[aa] = wsrc[aa];
      inst.weights[aa] = wsrc[aa];
      inst.values[aa] = f[aa];
    }
    inst.outside_value = f_outside;
    AssortmentSolution sol = solve_bisection(inst);
    value_out = sol.value;
    if (chosen_out) *chosen_out = std::move(sol.chosen);
  }

  const TabularEnv* env_;
  MnlVqlOptions opt_;
  ParamSchedule schedule_;
  Rng rng_;
  std::vector<HorizonData> per_h_;
  std::vector<PlanCell> plan_;
  // Planning scratch: fixed per-state feature columns plus reusable buffers
  // for the batched triangular solves, kept hot across episodes.
  std::vector<Eigen::MatrixXd> psi_cols_, phi_cols_;
  Eigen::MatrixXd scratch_lin_, scratch_mnl_;
  RealVector zw_, zu_, width_, mean1_, mean2_, meanm2_, meang_, mnl_mean_;
  std::vector<double> exp_opt_, exp_pess_;
  std::vector<ReplayTuple> replay_;
  std::optional<double> forced_u_;
  std::optional<double> random_value_;
  double u_current_ = 0.0;
  int episode_ = 0;
  int switch_step_ = 0;
  bool switched_ = false;
  bool planned_ = false;
};

struct MyopicOptions {
  int episodes = 1;
  double delta = 0.1;
  double radius_scale = 1.0;
  double beta_scale = 1.0;
};

// Greedy baseline: per-step MNL estimation plus a ridge fit of the immediate
// reward only; no value backup, so it optimizes the one-step return.
class MyopicAgent : public AgentBase {
 public:
  MyopicAgent(const TabularEnv& env, const MyopicOptions& opt, std::uint64_t seed)
      : env_(&env),
        opt_(opt),
        schedule_(make_param_schedule(opt.episodes, env.horizon, env.d_lin,
                                      env.d_mnl, env.max_assortment, opt.delta,
                                      opt.beta_scale, 1.0)),
        rng_(seed) {
    const MnlConfig mnl_cfg = MnlConfig::make(env.d_mnl, env.max_assortment,
                                              env.theta_radius, opt.delta);
    const double ridge = design_ridge(schedule_.rho, env.d_lin);
    const auto d = env.d_lin;
    per_h_.resize(static_cast<std::size_t>(env.horizon));
    for (auto& hd : per_h_) {
      hd.mnl = make_initial_mnl_state(env.horizon, mnl_cfg);
      hd.design = ridge * SymMatrix::Identity(d, d);
      hd.sum_r = RealVector::Zero(d);
    }
    const auto cells = static_cast<std::size_t>(env.horizon * env.n_states);
    assort_.resize(cells);
    f_.resize(cells);
    psi_cols_ = detail::psi_columns(env);
    phi_cols_ = detail::phi_columns(env);
  }

  void begin_episode(int k) override {
    episode_ = k;
    if (k >= 2) plan();
  }

  std::vector<int> act(int k, int h, int s) override {
    if (k == 1)
      return random_assortment(rng_, env_->n_items, env_->max_assortment - 1);
    assert(planned_);
    return assort_[static_cast<std::size_t>(h * env_->n_states + s)];
  }

  void observe(int k, int h, int s, const std::vector<int>& assortment,
               const StepOutcome& out) override {
    (void)k;
    const int a = out.chosen_item == StepOutcome::kOutside
                      ? env_->outside_action()
                      : out.chosen_item;
    HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
    const RealVector& psi = env_->psi(s, a);
    hd.design.noalias() += psi * psi.transpose();
    hd.sum_r += out.reward * psi;

    ChoiceObservation obs;
    obs.item_features.reserve(assortment.size());
    for (int item : assortment) obs.item_features.push_back(env_->phi(s, item));
    obs.chosen = ChoiceObservation::kOutside;
    for (std::size_t i = 0; i < assortment.size(); ++i)
      if (assortment[i] == out.chosen_item) obs.chosen = static_cast<int>(i);
    hd.mnl = omd_update(hd.mnl, obs);
  }

  double expected_episode_value() override {
    if (episode_ <= 1 || !planned_) return random_policy_value();
    FrozenPolicy pol;
    const auto big_h = static_cast<std::size_t>(env_->horizon);
    const auto n = static_cast<std::size_t>(env_->n_states);
    pol.primary.assign(big_h, std::vector<std::vector<int>>(n));
    for (int h = 0; h < env_->horizon; ++h)
      for (int s = 0; s < env_->n_states; ++s)
        pol.primary[static_cast<std::size_t>(h)][static_cast<std::size_t>(s)] =
            assort_[static_cast<std::size_t>(h * env_->n_states + s)];
    pol.fallback = pol.primary;
    return policy_expected_return(*env_, pol);
  }

  double fitted_f(int h, int s, int a) const {
    return f_[static_cast<std::size_t>(h * env_->n_states + s)]
             [static_cast<std::size_t>(a)];
  }
  const MnlParameterState& mnl_state(int h) const {
    return per_h_[static_cast<std::size_t>(h)].mnl;
  }

 private:
  struct HorizonData {
    MnlParameterState mnl;
    SymMatrix design;
    RealVector sum_r;
  };

  double random_policy_value() {
    if (!random_value_) random_value_ = uniform_random_policy_value(*env_);
    return *random_value_;
  }

  void plan() {
    const int n = env_->n_states;
    const int acts = env_->actions();
    const int ground = env_->n_items;
    const int outside = env_->outside_action();
    const double gain = std::sqrt(schedule_.beta1 * schedule_.beta1 + schedule_.rho);
    AssortmentInstance inst;
    inst.outside_weight = 1.0;
    inst.weights.resize(static_cast<std::size_t>(ground));
    inst.values.resize(static_cast<std::size_t>(ground));
    inst.max_items = env_->max_assortment - 1;
    for (int h = 0; h < env_->horizon; ++h) {
      HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
      const auto llt = cholesky(hd.design);
      const RealVector w = llt.solve(hd.sum_r);
      const double radius = confidence_radius(hd.mnl, opt_.radius_scale);
      const auto llt_mnl = cholesky(hd.mnl.hessian_accum);
      for (int s = 0; s < n; ++s) {
        auto& f = f_[static_cast<std::size_t>(h * n + s)];
        f.resize(static_cast<std::size_t>(acts));
        const Eigen::MatrixXd& psis = psi_cols_[static_cast<std::size_t>(s)];
        inverse_metric_norms(llt, psis, scratch_lin_, z_);
        mean_.noalias() = psis.transpose() * w;
        for (int a = 0; a < acts; ++a) {
          const double bonus = schedule_.beta_scale * z_[a] * gain;
          f[static_cast<std::size_t>(a)] = std::min(mean_[a] + bonus, 1.0);
        }
        const double f_outside = f[static_cast<std::size_t>(outside)];
        bool item_at_least_outside = false;
        for (int a = 0; a < ground; ++a)
          if (f[static_cast<std::size_t>(a)] >= f_outside) {
            item_at_least_outside = true;
            break;
          }
        const Eigen::MatrixXd& phis = phi_cols_[static_cast<std::size_t>(s)];
        inverse_metric_norms(llt_mnl, phis, scratch_mnl_, width_);
        mnl_mean_.noalias() = phis.transpose() * hd.mnl.theta;
        for (int a = 0; a < ground; ++a) {
          const auto aa = static_cast<std::size_t>(a);
          const double util = item_at_least_outside
                                  ? mnl_mean_[a] + radius * width_[a]
                                  : mnl_mean_[a] - radius * width_[a];
          inst.weights[aa] = std::exp(clamp_utility(util));
          inst.values[aa] = f[aa];
        }
        inst.outside_value = f_outside;
        assort_[static_cast<std::size_t>(h * n + s)] =
            solve_bisection(inst).chosen;
      }
    }
    planned_ = true;
  }

  const TabularEnv* env_;
  MyopicOptions opt_;
  ParamSchedule schedule_;
  Rng rng_;
  std::vector<HorizonData> per_h_;
  std::vector<Eigen::MatrixXd> psi_cols_, phi_cols_;
  Eigen::MatrixXd scratch_lin_, scratch_mnl_;
  RealVector z_, mean_, width_, mnl_mean_;
  std::vector<std::vector<int>> assort_;
  std::vector<std::vector<double>> f_;
  std::optional<double> random_value_;
  int episode_ = 0;
  bool planned_ = false;
};

struct LsviOptions {
  int episodes = 1;
  double delta = 0.1;
  double beta_scale = 1.0;
  std::size_t feature_cache_limit = 1'000'000;
};

// Value iteration with optimism over atomic actions: every assortment is one
// arm with feature equal to the choice-probability mix of its item features.
// The choice model is estimated during episode 1 only and then frozen, so
// the arm features stay fixed and regression on them is well posed. The
// enumeration over assortments is what the combinatorial algorithm avoids.
class LsviUcbAtomicAgent : public AgentBase {
 public:
  LsviUcbAtomicAgent(const TabularEnv& env, const LsviOptions& opt,
                     std::uint64_t seed)
      : env_(&env), opt_(opt), rng_(seed) {
    const int cap = env.max_assortment - 1;
    for (const auto& block : detail::enumerate_assortments(
             env.n_items, cap, kMaxEnumeratedAssortments))
      assortments_.insert(assortments_.end(), block.begin(), block.end());
    // Pascal table for the combinadic rank of an assortment within the
    // size-then-lex enumeration order.
    choose_.assign(static_cast<std::size_t>(env.n_items) + 1,
                   std::vector<std::size_t>(static_cast<std::size_t>(cap) + 1, 0));
    for (std::size_t i = 0; i < choose_.size(); ++i) {
      choose_[i][0] = 1;
      for (std::size_t j = 1; j <= std::min<std::size_t>(i, static_cast<std::size_t>(cap)); ++j)
        choose_[i][j] = choose_[i - 1][j - 1] + (j <= i - 1 ? choose_[i - 1][j] : 0);
    }
    size_offset_.assign(static_cast<std::size_t>(cap) + 1, 0);
    for (int m = 2; m <= cap; ++m)
      size_offset_[static_cast<std::size_t>(m)] =
          size_offset_[static_cast<std::size_t>(m - 1)] +
          choose_[static_cast<std::size_t>(env.n_items)][static_cast<std::size_t>(m - 1)];
    beta_ = opt.beta_scale * env.d_lin *
            std::sqrt(std::log(2.0 * env.d_lin * opt.episodes * env.horizon /
                               opt.delta));
    const MnlConfig mnl_cfg = MnlConfig::make(env.d_mnl, env.max_assortment,
                                              env.theta_radius, opt.delta);
    const auto d = env.d_lin;
    per_h_.resize(static_cast<std::size_t>(env.horizon));
    for (auto& hd : per_h_) {
      hd.mnl = make_initial_mnl_state(env.horizon, mnl_cfg);
      hd.lambda = SymMatrix::Identity(d, d);
      hd.target_base = RealVector::Zero(d);
    }
    cache_features_ = static_cast<std::size_t>(env.horizon) *
                          static_cast<std::size_t>(env.n_states) *
                          assortments_.size() <=
                      opt.feature_cache_limit;
    if (cache_features_) {
      feature_cache_.resize(static_cast<std::size_t>(env.horizon) *
                            static_cast<std::size_t>(env.n_states) *
                            assortments_.size());
      cache_ready_.assign(feature_cache_.size(), 0);
    }
    policy_.resize(static_cast<std::size_t>(env.horizon * env.n_states), 0);
  }

  void begin_episode(int k) override {
    episode_ = k;
    if (k < 2) return;
    if (!frozen_) freeze_choice_model();
    plan();
  }

  std::vector<int> act(int k, int h, int s) override {
    if (k == 1)
      return random_assortment(rng_, env_->n_items, env_->max_assortment - 1);
    assert(planned_);
    return assortments_[policy_[static_cast<std::size_t>(h * env_->n_states + s)]];
  }

  void observe(int k, int h, int s, const std::vector<int>& assortment,
               const StepOutcome& out) override {
    HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
    Tuple t;
    t.s = s;
    t.reward = out.reward;
    t.next_state = out.next_state;
    t.assort = assortment_rank(assortment);
    assert(assortments_[t.assort] == assortment);
    if (frozen_) {
      t.feature = arm_feature(h, s, t.assort);
      hd.lambda.noalias() += t.feature * t.feature.transpose();
      hd.target_base += out.reward * t.feature;
      t.featurized = true;
    }
    hd.tuples.push_back(std::move(t));

    if (k == 1) {
      ChoiceObservation obs;
      obs.item_features.reserve(assortment.size());
      for (int item : assortment) obs.item_features.push_back(env_->phi(s, item));
      obs.chosen = ChoiceObservation::kOutside;
      for (std::size_t i = 0; i < assortment.size(); ++i)
        if (assortment[i] == out.chosen_item) obs.chosen = static_cast<int>(i);
      hd.mnl = omd_update(hd.mnl, obs);
    }
  }

  double expected_episode_value() override {
    if (episode_ <= 1 || !planned_) return random_policy_value();
    FrozenPolicy pol;
    const auto big_h = static_cast<std::size_t>(env_->horizon);
    const auto n = static_cast<std::size_t>(env_->n_states);
    pol.primary.assign(big_h, std::vector<std::vector<int>>(n));
    for (int h = 0; h < env_->horizon; ++h)
      for (int s = 0; s < env_->n_states; ++s)
        pol.primary[static_cast<std::size_t>(h)][static_cast<std::size_t>(s)] =
            assortments_[policy_[static_cast<std::size_t>(h * env_->n_states + s)]];
    pol.fallback = pol.primary;
    return policy_expected_return(*env_, pol);
  }

  std::size_t assortment_count() const { return assortments_.size(); }
  const std::vector<int>& assortment_at(std::size_t idx) const {
    return assortments_[idx];
  }
  double bonus_multiplier() const { return beta_; }
  const RealVector& frozen_theta(int h) const {
    return per_h_[static_cast<std::size_t>(h)].theta_hat;
  }

  // Size-then-lex index of a sorted assortment, via the combinadic rank
  // within its size block.
  std::size_t assortment_rank(const std::vector<int>& items) const {
    const int m = static_cast<int>(items.size());
    std::size_t rank = size_offset_[static_cast<std::size_t>(m)];
    int prev = -1;
    for (int j = 0; j < m; ++j) {
      for (int t = prev + 1; t < items[static_cast<std::size_t>(j)]; ++t)
        rank += choose_[static_cast<std::size_t>(env_->n_items - 1 - t)]
                       [static_cast<std::size_t>(m - 1 - j)];
      prev = items[static_cast<std::size_t>(j)];
    }
    return rank;
  }

 private:
  struct Tuple {
    int s = 0;
    std::size_t assort = 0;
    double reward = 0.0;
    int next_state = 0;
    RealVector feature;
    bool featurized = false;
  };

  struct HorizonData {
    MnlParameterState mnl;
    RealVector theta_hat;
    SymMatrix lambda;
    RealVector target_base;  // sum of reward-weighted features
    std::vector<Tuple> tuples;
  };

  double random_policy_value() {
    if (!random_value_) random_value_ = uniform_random_policy_value(*env_);
    return *random_value_;
  }

  void freeze_choice_model() {
    frozen_ = true;
    for (int h = 0; h < env_->horizon; ++h) {
      HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
      hd.theta_hat = hd.mnl.theta;
      for (auto& t : hd.tuples) {
        if (t.featurized) continue;
        t.feature = arm_feature(h, t.s, t.assort);
        hd.lambda.noalias() += t.feature * t.feature.transpose();
        hd.target_base += t.reward * t.feature;
        t.featurized = true;
      }
    }
  }

  RealVector arm_feature_for(const RealVector& theta, int s,
                             std::size_t assort) const {
    const auto& items = assortments_[assort];
    double shift = 0.0;
    std::vector<double> util(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      util[i] = clamp_utility(theta.dot(env_->phi(s, items[i])));
      shift = std::max(shift, util[i]);
    }
    double den = std::exp(-shift);
    RealVector mix = std::exp(-shift) * env_->psi(s, env_->outside_action());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const double w = std::exp(util[i] - shift);
      den += w;
      mix += w * env_->psi(s, items[i]);
    }
    return mix / den;
  }

  // Frozen-model arm feature, cached when the table fits.
  const RealVector& arm_feature(int h, int s, std::size_t assort) {
    assert(frozen_);
    const RealVector& theta = per_h_[static_cast<std::size_t>(h)].theta_hat;
    if (!cache_features_) {
      scratch_feature_ = arm_feature_for(theta, s, assort);
      return scratch_feature_;
    }
    const std::size_t key =
        (static_cast<std::size_t>(h) * static_cast<std::size_t>(env_->n_states) +
         static_cast<std::size_t>(s)) *
            assortments_.size() +
        assort;
    if (!cache_ready_[key]) {
      feature_cache_[key] = arm_feature_for(theta, s, assort);
      cache_ready_[key] = 1;
    }
    return feature_cache_[key];
  }

  void plan() {
    const int n = env_->n_states;
    RealVector v_next = RealVector::Zero(n);
    RealVector v_cur = RealVector::Zero(n);
    for (int h = env_->horizon - 1; h >= 0; --h) {
      HorizonData& hd = per_h_[static_cast<std::size_t>(h)];
      RealVector rhs = hd.target_base;
      for (const Tuple& t : hd.tuples) rhs += v_next[t.next_state] * t.feature;
      const auto llt = cholesky(hd.lambda);
      const RealVector w = llt.solve(rhs);
      for (int s = 0; s < n; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t idx = 0; idx < assortments_.size(); ++idx) {
          const RealVector& feat = arm_feature(h, s, idx);
          const double q = w.dot(feat) + beta_ * inverse_metric_norm(llt, feat);
          if (q > best) {
            best = q;
            best_idx = idx;
          }
        }
        policy_[static_cast<std::size_t>(h * n + s)] = best_idx;
        v_cur[s] = std::clamp(best, 0.0, 1.0);
      }
      v_next.swap(v_cur);
    }
    planned_ = true;
  }

  const TabularEnv* env_;
  LsviOptions opt_;
  Rng rng_;
  std::vector<std::vector<int>> assortments_;  // size-then-lex order
  std::vector<std::vector<std::size_t>> choose_;
  std::vector<std::size_t> size_offset_;
  std::vector<HorizonData> per_h_;
  std::vector<std::size_t> policy_;
  std::vector<RealVector> feature_cache_;
  std::vector<char> cache_ready_;
  RealVector scratch_feature_;
  std::optional<double> random_value_;
  double beta_ = 0.0;
  int episode_ = 0;
  bool frozen_ = false;
  bool planned_ = false;
  bool cache_features_ = false;
};

// Plays the exact optimal policy; its expectation-form regret is identically
// zero, which anchors the regret accounting in the benchmark.
class OptimalAgent : public AgentBase {
 public:
  explicit OptimalAgent(const TabularEnv& env)
      : env_(&env), dp_(dp_optimal_values(env)) {}

  void begin_episode(int) override {}
  std::vector<int> act(int, int h, int s) override {
    return dp_.best_assortment[static_cast<std::size_t>(h)]
                              [static_cast<std::size_t>(s)];
  }
  void observe(int, int, int, const std::vector<int>&, const StepOutcome&) override {}
  double expected_episode_value() override {
    return dp_.v[0][static_cast<std::size_t>(env_->initial_state)];
  }
  const DpResult& dp() const { return dp_; }

 private:
  const TabularEnv* env_;
  DpResult dp_;
};

class RandomAgent : public AgentBase {
 public:
  RandomAgent(const TabularEnv& env, std::uint64_t seed)
      : env_(&env), rng_(seed) {}

  void begin_episode(int) override {}
  std::vector<int> act(int, int, int) override {
    return random_assortment(rng_, env_->n_items, env_->max_assortment - 1);
  }
  void observe(int, int, int, const std::vector<int>&, const StepOutcome&) override {}
  double expected_episode_value() override {
    if (!value_) value_ = uniform_random_policy_value(*env_);
    return *value_;
  }

 private:
  const TabularEnv* env_;
  Rng rng_;
  std::optional<double> value_;
};

}  // namespace mnlvql

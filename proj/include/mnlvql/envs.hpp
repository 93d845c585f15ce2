#pragma once

// Tabular combinatorial MDPs with MNL preference feedback: the environment
// tables, the online-shopping-with-budget environment, the layered
// hard-to-learn instance, and the exact DP oracle.

#include <mnlvql/assort.hpp>
#include <mnlvql/mnl.hpp>
#include <mnlvql/numerics.hpp>
#include <mnlvql/rng.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace mnlvql {

class DimensionConstraint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rewards depend on (s,a) only: both built-in environments have
// next-state-independent rewards, so the general r_h(s,a,s') is specialized.
// Ground items are 0..n_items-1; the outside option is action index n_items
// in the tables and is reported as kOutside in outcomes.
struct TabularEnv {
  int n_states = 0;
  int n_items = 0;
  int horizon = 0;
  int max_assortment = 2;  // M: items per offer including the outside option
  int initial_state = 0;
  int d_mnl = 0;
  int d_lin = 0;
  double theta_radius = 1.0;  // B bound honored by true_theta

  std::vector<double> transition;  // [h][s][a][s'], a = n_items is outside
  std::vector<double> reward;      // [h][s][a]
  std::vector<RealVector> mnl_features;     // [s][a], ground items only
  std::vector<RealVector> linmdp_features;  // [s][a] including outside
  std::vector<RealVector> true_theta;       // [h]

  // Exact linear-MDP factorization data when the construction provides it
  // globally (the SVD-built shopping environment); empty otherwise.
  std::vector<RealVector> mu_star;  // [s']
  RealVector w_star;

  int actions() const { return n_items + 1; }
  int outside_action() const { return n_items; }

  double p(int h, int s, int a, int next) const {
    return transition[static_cast<std::size_t>(
        ((h * n_states + s) * actions() + a) * n_states + next)];
  }
  double& p_mut(int h, int s, int a, int next) {
    return transition[static_cast<std::size_t>(
        ((h * n_states + s) * actions() + a) * n_states + next)];
  }
  double r(int h, int s, int a) const {
    return reward[static_cast<std::size_t>((h * n_states + s) * actions() + a)];
  }
  double& r_mut(int h, int s, int a) {
    return reward[static_cast<std::size_t>((h * n_states + s) * actions() + a)];
  }
  const RealVector& phi(int s, int a) const {
    return mnl_features[static_cast<std::size_t>(s * n_items + a)];
  }
  const RealVector& psi(int s, int a) const {
    return linmdp_features[static_cast<std::size_t>(s * actions() + a)];
  }

  void allocate_tables() {
    transition.assign(static_cast<std::size_t>(horizon) * n_states * actions() *
                          n_states,
                      0.0);
    reward.assign(static_cast<std::size_t>(horizon) * n_states * actions(), 0.0);
    mnl_features.assign(static_cast<std::size_t>(n_states) * n_items,
                        RealVector::Zero(d_mnl));
    linmdp_features.assign(static_cast<std::size_t>(n_states) * actions(),
                           RealVector::Zero(d_lin));
  }
};

struct StepOutcome {
  static constexpr int kOutside = ChoiceObservation::kOutside;
  int chosen_item = kOutside;
  double reward = 0.0;
  int next_state = 0;
};

// One environment interaction at step h (0-based) from state s.
inline StepOutcome step(const TabularEnv& env, int h, int s,
                        const std::vector<int>& assortment, Rng& rng) {
  assert(!assortment.empty() &&
         static_cast<int>(assortment.size()) <= env.max_assortment - 1);
  std::vector<RealVector> feats;
  feats.reserve(assortment.size());
  for (int a : assortment) feats.push_back(env.phi(s, a));
  const RealVector probs = choice_probs(env.true_theta[static_cast<std::size_t>(h)], feats);
  std::vector<double> w(probs.data(), probs.data() + probs.size());
  const std::size_t pick = rng.sample_categorical(w);

  StepOutcome out;
  const int action = pick == assortment.size()
                         ? env.outside_action()
                         : assortment[pick];
  out.chosen_item =
      pick == assortment.size() ? StepOutcome::kOutside : assortment[pick];
  out.reward = env.r(h, s, action);
  std::vector<double> row(static_cast<std::size_t>(env.n_states));
  for (int next = 0; next < env.n_states; ++next) row[static_cast<std::size_t>(next)] = env.p(h, s, action, next);
  out.next_state = static_cast<int>(rng.sample_categorical(row));
  return out;
}

// The assortment-optimization instance at (h, s) given next-step values:
// weights are the true MNL weights, values are r + E[V_next]. Every consumer
// (DP oracle, optimal-policy evaluation) shares this construction so their
// optima agree bit-for-bit.
inline AssortmentInstance assortment_instance_at(const TabularEnv& env, int h,
                                                 int s,
                                                 const std::vector<double>& v_next) {
  AssortmentInstance inst;
  inst.max_items = env.max_assortment - 1;
  auto q_bar = [&](int action) {
    double q = env.r(h, s, action);
    for (int next = 0; next < env.n_states; ++next) {
      const double pr = env.p(h, s, action, next);
      if (pr > 0.0) q += pr * v_next[static_cast<std::size_t>(next)];
    }
    return q;
  };
  inst.outside_weight = 1.0;
  inst.outside_value = q_bar(env.outside_action());
  inst.weights.resize(static_cast<std::size_t>(env.n_items));
  inst.values.resize(static_cast<std::size_t>(env.n_items));
  const RealVector& theta = env.true_theta[static_cast<std::size_t>(h)];
  for (int a = 0; a < env.n_items; ++a) {
    inst.weights[static_cast<std::size_t>(a)] =
        std::exp(clamp_utility(theta.dot(env.phi(s, a))));
    inst.values[static_cast<std::size_t>(a)] = q_bar(a);
  }
  return inst;
}

struct DpResult {
  // v[h][s] for h in 0..H (v[H] is the terminal zero row)
  std::vector<std::vector<double>> v;
  // q_bar[h][s][a] with a = n_items the outside option
  std::vector<std::vector<std::vector<double>>> q_bar;
  std::vector<std::vector<std::vector<int>>> best_assortment;  // [h][s]
};

inline DpResult dp_optimal_values(const TabularEnv& env) {
  DpResult res;
  const int big_h = env.horizon;
  res.v.assign(static_cast<std::size_t>(big_h) + 1,
               std::vector<double>(static_cast<std::size_t>(env.n_states), 0.0));
  res.q_bar.assign(static_cast<std::size_t>(big_h), {});
  res.best_assortment.assign(static_cast<std::size_t>(big_h), {});
  for (int h = big_h - 1; h >= 0; --h) {
    auto& qh = res.q_bar[static_cast<std::size_t>(h)];
    auto& ah = res.best_assortment[static_cast<std::size_t>(h)];
    qh.assign(static_cast<std::size_t>(env.n_states), {});
    ah.assign(static_cast<std::size_t>(env.n_states), {});
    for (int s = 0; s < env.n_states; ++s) {
      AssortmentInstance inst =
          assortment_instance_at(env, h, s, res.v[static_cast<std::size_t>(h) + 1]);
      qh[static_cast<std::size_t>(s)] = inst.values;
      qh[static_cast<std::size_t>(s)].push_back(inst.outside_value);
      const AssortmentSolution sol = env.n_items <= 20
                                         ? solve_bruteforce(inst)
                                         : solve_bisection(inst);
      res.v[static_cast<std::size_t>(h)][static_cast<std::size_t>(s)] = sol.value;
      ah[static_cast<std::size_t>(s)] = sol.chosen;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Online shopping with budget.
// States are budget levels s_1..s_|S| (0-based internally); buying item a_i in
// state s_j yields reward (i/(100N) + j/|S|)/H with 1-based i, j, moves the
// budget up with probability 1 - i/N and down with probability i/N (clamped at
// the boundaries); the outside option yields 0 and moves up deterministically.
// psi reproduces (P, r) exactly through a thin SVD of the stacked transition
// matrix plus one reward coordinate, so d_lin = |S| + 1.
inline TabularEnv online_shopping_env(int n_items, int n_states, int horizon,
                                      int d_mnl, int max_assortment,
                                      std::uint64_t seed) {
  assert(n_items >= 2 && n_states >= 2);
  TabularEnv env;
  env.n_states = n_states;
  env.n_items = n_items;
  env.horizon = horizon;
  env.max_assortment = max_assortment;
  env.d_mnl = d_mnl;
  env.d_lin = n_states + 1;
  env.initial_state = (n_states + 1) / 2 - 1;  // ceil(|S|/2), 0-based
  env.theta_radius = 1.0;
  env.allocate_tables();

  // Transition and reward tables (identical across h).
  for (int h = 0; h < horizon; ++h) {
    for (int j = 0; j < n_states; ++j) {
      const int up = std::min(j + 1, n_states - 1);
      const int down = std::max(j - 1, 0);
      for (int a = 0; a < n_items; ++a) {
        const double p_down = static_cast<double>(a + 1) / n_items;
        env.p_mut(h, j, a, up) += 1.0 - p_down;
        env.p_mut(h, j, a, down) += p_down;
        env.r_mut(h, j, a) =
            ((a + 1.0) / (100.0 * n_items) + (j + 1.0) / n_states) / horizon;
      }
      env.p_mut(h, j, env.outside_action(), up) = 1.0;
      env.r_mut(h, j, env.outside_action()) = 0.0;
    }
  }

  // MNL features and true parameter: coordinatewise U[-1,1], then a global
  // rescale of all feature vectors by the max norm and a projection of theta
  // onto the unit ball.
  Rng rng(seed);
  double max_phi_norm = 0.0;
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_items; ++a) {
      RealVector v(d_mnl);
      for (int t = 0; t < d_mnl; ++t) v[t] = rng.uniform_real(-1.0, 1.0);
      max_phi_norm = std::max(max_phi_norm, v.norm());
      env.mnl_features[static_cast<std::size_t>(s * n_items + a)] = v;
    }
  }
  if (max_phi_norm > 1.0) {
    for (auto& v : env.mnl_features) v /= max_phi_norm;
  }
  RealVector theta(d_mnl);
  for (int t = 0; t < d_mnl; ++t) theta[t] = rng.uniform_real(-1.0, 1.0);
  if (theta.norm() > 1.0) theta /= theta.norm();
  env.true_theta.assign(static_cast<std::size_t>(horizon), theta);

  // Thin SVD of the stacked (s,a)-by-s' transition matrix gives an exact
  // rank-|S| factorization; singular values fold into the psi side.
  const int rows = n_states * env.actions();
  Eigen::MatrixXd stacked(rows, n_states);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < env.actions(); ++a) {
      for (int next = 0; next < n_states; ++next) {
        stacked(s * env.actions() + a, next) = env.p(0, s, a, next);
      }
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const RealVector singular = svd.singularValues();

  double max_psi_norm = 0.0;
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < env.actions(); ++a) {
      RealVector psi(env.d_lin);
      for (int t = 0; t < n_states; ++t) {
        psi[t] = svd.matrixU()(s * env.actions() + a, t) * singular[t];
      }
      psi[n_states] = env.r(0, s, a);
      max_psi_norm = std::max(max_psi_norm, psi.norm());
      env.linmdp_features[static_cast<std::size_t>(s * env.actions() + a)] = psi;
    }
  }
  const double scale = std::max(max_psi_norm, 1e-12);
  for (auto& psi : env.linmdp_features) psi /= scale;
  env.mu_star.assign(static_cast<std::size_t>(n_states), RealVector::Zero(env.d_lin));
  for (int next = 0; next < n_states; ++next) {
    RealVector mu = RealVector::Zero(env.d_lin);
    for (int t = 0; t < n_states; ++t) mu[t] = svd.matrixV()(next, t) * scale;
    env.mu_star[static_cast<std::size_t>(next)] = mu;
  }
  env.w_star = RealVector::Zero(env.d_lin);
  env.w_star[n_states] = scale;
  return env;
}

// ---------------------------------------------------------------------------
// Layered hard-to-learn instance.
//
// Layers i = 1..H+1 carry non-absorbing states x^(i)_h for h in [i, H+1];
// layers 1..H+2 each own an absorbing state, and one global absorbing state
// x0 catches the outside option. The optimal item a*_h keeps the walker in
// its layer; any other item demotes it; rewards scale with gamma^(layer-1).
// Item features are sign vectors in {-1,1}^m with m = (d_lin - 5)/2; an odd
// d_lin - 5 is zero-padded up by one coordinate.
//
// The utility-shifted MNL parameterization used here keeps the outside
// option's feature at zero, as the rest of the library assumes: item features
// are (z_U, 1)/sqrt(2) and theta_h = sqrt(2) (theta_W, log H), which yields
// exactly the same choice law as giving the outside option weight 1/H.
//
// The per-layer absorbing self-loops make an exact global factorization
// P(s'|s,a) = <psi(s,a), mu(s')> impossible at this dimension (the transition
// matrix has rank proportional to the state count), so the construction
// stores the per-branch response vectors mu_1..mu_5 per step and certifies
// the per-branch factorization identities plus the exact reward factorization
// <psi, w*> = r; that certificate is what factorization_residual reports.
struct HardInstance {
  TabularEnv env;
  int m = 0;
  int d_lin_padded = 0;
  double delta = 0.0;      // failure rate 1/H
  double gamma = 0.0;      // H/(H+1)
  double big_delta = 0.0;  // per-coordinate drift of mu_h
  double epsilon = 0.0;    // MNL support magnitude
  int global_state = 0;
  std::vector<int> state_layer;  // 0 for x0
  std::vector<int> state_time;   // H+2 for absorbing, 0 for x0
  std::vector<bool> absorbing;   // per-layer absorbing states only
  std::vector<int> optimal_item;  // a*_h per step h (0-based)
  double factorization_residual = 0.0;
};

namespace detail {

inline std::vector<std::vector<int>> size_k_subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(idx);
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int j = pos + 1; j < k; ++j)
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

}  // namespace detail

inline HardInstance hard_instance_env(int d_mnl, int d_lin, int horizon,
                                      int episodes) {
  if (d_mnl < 2 || (d_mnl - 1) % 4 != 0)
    throw DimensionConstraint("d must satisfy d >= 2 with d-1 divisible by 4");
  if (d_lin < 6) throw DimensionConstraint("d_lin must be at least 6");

  HardInstance hi;
  hi.d_lin_padded = (d_lin - 5) % 2 == 0 ? d_lin : d_lin + 1;
  hi.m = (hi.d_lin_padded - 5) / 2;
  const int m = hi.m;
  const int h_max = horizon;
  hi.delta = 1.0 / h_max;
  hi.gamma = static_cast<double>(h_max) / (h_max + 1.0);
  hi.big_delta = std::sqrt(hi.delta / episodes) / (4.0 * std::numbers::sqrt2);
  hi.epsilon = std::sqrt((d_mnl - 1.0) / (144.0 * episodes) *
                         (h_max + 1.0) * (h_max + 1.0) / h_max);

  TabularEnv& env = hi.env;
  env.horizon = h_max;
  env.n_items = 1 << m;
  env.max_assortment = 2;
  env.d_mnl = d_mnl;
  env.d_lin = hi.d_lin_padded;

  // State enumeration: x0 first, then non-absorbing x^(i)_h for i in
  // [1, H+1], h in [i, H+1], then absorbing states for layers 1..H+2.
  std::map<std::pair<int, int>, int> chain_index;  // (layer, time) -> state
  std::vector<int> absorb_index(static_cast<std::size_t>(h_max) + 3, -1);
  hi.state_layer.push_back(0);
  hi.state_time.push_back(0);
  hi.absorbing.push_back(false);
  hi.global_state = 0;
  int next_id = 1;
  for (int layer = 1; layer <= h_max + 1; ++layer) {
    for (int t = layer; t <= h_max + 1; ++t) {
      chain_index[{layer, t}] = next_id++;
      hi.state_layer.push_back(layer);
      hi.state_time.push_back(t);
      hi.absorbing.push_back(false);
    }
  }
  for (int layer = 1; layer <= h_max + 2; ++layer) {
    absorb_index[static_cast<std::size_t>(layer)] = next_id++;
    hi.state_layer.push_back(layer);
    hi.state_time.push_back(h_max + 2);
    hi.absorbing.push_back(true);
  }
  env.n_states = next_id;
  env.initial_state = chain_index.at({1, 1});
  env.allocate_tables();

  // Deterministic internal stream: the construction is a fixed instance, not
  // a seeded family.
  Rng rng(0x48415244u);
  std::vector<std::vector<int>> mu_sign(static_cast<std::size_t>(h_max));
  hi.optimal_item.assign(static_cast<std::size_t>(h_max), 0);
  for (int h = 0; h < h_max; ++h) {
    mu_sign[static_cast<std::size_t>(h)].resize(static_cast<std::size_t>(m));
    int item = 0;
    for (int t = 0; t < m; ++t) {
      const int sgn = rng.uniform_below(2) == 0 ? -1 : 1;
      mu_sign[static_cast<std::size_t>(h)][static_cast<std::size_t>(t)] = sgn;
      if (sgn > 0) item |= 1 << t;
    }
    hi.optimal_item[static_cast<std::size_t>(h)] = item;
  }

  auto item_sign = [&](int item, int coord) {
    return (item >> coord) & 1 ? 1.0 : -1.0;
  };
  auto drift = [&](int h, int item) {
    double v = 0.0;
    for (int t = 0; t < m; ++t)
      v += hi.big_delta * mu_sign[static_cast<std::size_t>(h)][static_cast<std::size_t>(t)] *
           item_sign(item, t);
    return v;
  };

  // psi case vectors. Layout: [0] block-1 scale, [1..m] block-1 signs,
  // [m+1] block-2 scale, [m+2..2m+1] block-2 signs, [2m+2] absorbing,
  // [2m+3] outside, [2m+4] reward.
  const double denom = 2.0 + hi.big_delta * (hi.d_lin_padded - 5.0);
  const double alpha = std::sqrt(1.0 / denom);
  const double beta = std::sqrt(hi.big_delta / denom);
  const int c_absorb = 2 * m + 2;
  const int c_outside = 2 * m + 3;
  const int c_reward = 2 * m + 4;
  const int dl = hi.d_lin_padded;

  auto psi_case_a = [&](int item, int layer) {
    RealVector v = RealVector::Zero(dl);
    v[0] = alpha;
    for (int t = 0; t < m; ++t) v[1 + t] = beta * item_sign(item, t);
    v[c_reward] = std::pow(hi.gamma, layer - 1) / std::numbers::sqrt2;
    return v;
  };
  auto psi_case_b = [&](int item, int layer) {
    RealVector v = RealVector::Zero(dl);
    v[m + 1] = alpha;
    for (int t = 0; t < m; ++t) v[m + 2 + t] = beta * item_sign(item, t);
    v[c_reward] = std::pow(hi.gamma, layer) / std::numbers::sqrt2;
    return v;
  };
  auto psi_case_c = [&]() {
    RealVector v = RealVector::Zero(dl);
    v[c_outside] = 1.0;
    return v;
  };
  auto psi_case_d = [&](int layer) {
    RealVector v = RealVector::Zero(dl);
    v[c_absorb] = 1.0 / std::numbers::sqrt2;
    v[c_reward] = std::pow(hi.gamma, layer - 1) / std::numbers::sqrt2;
    return v;
  };

  env.w_star = RealVector::Zero(dl);
  env.w_star[c_reward] = std::numbers::sqrt2 / h_max;

  // Fill psi for every state/action, and transitions+rewards per step.
  for (int s = 0; s < env.n_states; ++s) {
    const int layer = hi.state_layer[static_cast<std::size_t>(s)];
    const int t = hi.state_time[static_cast<std::size_t>(s)];
    for (int a = 0; a <= env.n_items; ++a) {
      RealVector psi;
      if (s == hi.global_state) {
        psi = psi_case_c();
      } else if (hi.absorbing[static_cast<std::size_t>(s)]) {
        psi = psi_case_d(layer);
      } else if (a == env.n_items) {
        psi = psi_case_c();
      } else {
        // Non-absorbing chain state: the case depends on whether the item is
        // optimal at this state's time index.
        const int h = t - 1;  // 0-based step when this state is live
        if (h >= 0 && h < h_max && a == hi.optimal_item[static_cast<std::size_t>(h)]) {
          psi = psi_case_a(a, layer);
        } else {
          psi = psi_case_b(a, layer);
        }
      }
      env.linmdp_features[static_cast<std::size_t>(s * env.actions() + a)] = psi;
    }
  }

  for (int h = 0; h < h_max; ++h) {
    for (int s = 0; s < env.n_states; ++s) {
      const int layer = hi.state_layer[static_cast<std::size_t>(s)];
      const int t = hi.state_time[static_cast<std::size_t>(s)];
      for (int a = 0; a <= env.n_items; ++a) {
        if (s == hi.global_state) {
          env.p_mut(h, s, a, s) = 1.0;
          env.r_mut(h, s, a) = 0.0;
        } else if (hi.absorbing[static_cast<std::size_t>(s)]) {
          env.p_mut(h, s, a, s) = 1.0;
          env.r_mut(h, s, a) = std::pow(hi.gamma, layer - 1) / h_max;
        } else if (t != h + 1) {
          // Chain states are only live at their own time index; these rows
          // are unreachable and self-loop for row-stochasticity.
          env.p_mut(h, s, a, s) = 1.0;
          env.r_mut(h, s, a) = 0.0;
        } else if (a == env.n_items) {
          env.p_mut(h, s, a, hi.global_state) = 1.0;
          env.r_mut(h, s, a) = 0.0;
        } else if (a == hi.optimal_item[static_cast<std::size_t>(h)]) {
          const double q = hi.delta + drift(h, a);
          env.p_mut(h, s, a, chain_index.at({layer, std::min(t + 1, h_max + 1)})) +=
              1.0 - q;
          env.p_mut(h, s, a, absorb_index[static_cast<std::size_t>(layer)]) += q;
          env.r_mut(h, s, a) = std::pow(hi.gamma, layer - 1) / h_max;
        } else {
          const double q = hi.delta + drift(h, a);
          env.p_mut(h, s, a,
                    chain_index.at({layer + 1, std::min(t + 1, h_max + 1)})) +=
              1.0 - q;
          env.p_mut(h, s, a,
                    absorb_index[static_cast<std::size_t>(std::min(layer + 2, h_max + 2))]) += q;
          env.r_mut(h, s, a) = std::pow(hi.gamma, layer) / h_max;
        }
      }
    }
  }

  // MNL construction: z-vectors live on size-(d-1)/4 supports of [d-1]; the
  // fixed assignment U gives distinct supports while they last (cyclic reuse
  // past that), and theta_h's support is U(a*_h) by construction.
  const int d_z = d_mnl - 1;
  const int support_size = d_z / 4;
  const std::vector<std::vector<int>> supports =
      detail::size_k_subsets(d_z, support_size);
  auto phi_of_item = [&](int item) {
    RealVector v = RealVector::Zero(d_mnl);
    const auto& sup = supports[static_cast<std::size_t>(item) % supports.size()];
    for (int c : sup) v[c] = 1.0 / std::sqrt(static_cast<double>(d_z));
    v[d_z] = 1.0;
    return RealVector((v / std::numbers::sqrt2).eval());
  };
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_items; ++a) {
      env.mnl_features[static_cast<std::size_t>(s * env.n_items + a)] =
          phi_of_item(a);
    }
  }
  env.true_theta.assign(static_cast<std::size_t>(h_max), RealVector::Zero(d_mnl));
  double max_theta = 0.0;
  for (int h = 0; h < h_max; ++h) {
    RealVector th = RealVector::Zero(d_mnl);
    const auto& sup = supports[static_cast<std::size_t>(
                          hi.optimal_item[static_cast<std::size_t>(h)]) %
                      supports.size()];
    for (int c : sup) th[c] = hi.epsilon;
    th[d_z] = std::log(static_cast<double>(h_max));
    th *= std::numbers::sqrt2;
    max_theta = std::max(max_theta, th.norm());
    env.true_theta[static_cast<std::size_t>(h)] = th;
  }
  env.theta_radius = std::max(1.0, max_theta);

  // Certify the construction: per-branch factorization identities against the
  // five response vectors, plus the exact reward factorization.
  double resid = 0.0;
  for (int h = 0; h < h_max; ++h) {
    RealVector mu1 = RealVector::Zero(dl), mu2 = RealVector::Zero(dl),
               mu3 = RealVector::Zero(dl), mu4 = RealVector::Zero(dl),
               mu5 = RealVector::Zero(dl);
    mu1[0] = (1.0 - hi.delta) / alpha;
    mu2[0] = hi.delta / alpha;
    mu3[m + 1] = (1.0 - hi.delta) / alpha;
    mu4[m + 1] = hi.delta / alpha;
    for (int c = 0; c < m; ++c) {
      const double mu_c =
          hi.big_delta * mu_sign[static_cast<std::size_t>(h)][static_cast<std::size_t>(c)];
      mu1[1 + c] = -mu_c / beta;
      mu2[1 + c] = mu_c / beta;
      mu3[m + 2 + c] = -mu_c / beta;
      mu4[m + 2 + c] = mu_c / beta;
    }
    mu2[c_absorb] = std::numbers::sqrt2;
    mu5[c_outside] = 1.0;

    for (int s = 0; s < env.n_states; ++s) {
      if (hi.state_time[static_cast<std::size_t>(s)] != h + 1 ||
          hi.absorbing[static_cast<std::size_t>(s)] || s == hi.global_state)
        continue;
      for (int a = 0; a < env.n_items; ++a) {
        const RealVector& psi = env.psi(s, a);
        const double q = hi.delta + drift(h, a);
        const bool opt = a == hi.optimal_item[static_cast<std::size_t>(h)];
        const double stay = opt ? psi.dot(mu1) : psi.dot(mu3);
        const double fall = opt ? psi.dot(mu2) : psi.dot(mu4);
        resid = std::max(resid, std::abs(stay - (1.0 - q)));
        resid = std::max(resid, std::abs(fall - q));
        // Cross-branch responses must vanish.
        resid = std::max(resid, std::abs(opt ? psi.dot(mu3) : psi.dot(mu1)));
        resid = std::max(resid, std::abs(opt ? psi.dot(mu4) : psi.dot(mu2)));
        resid = std::max(resid, std::abs(psi.dot(mu5)));
      }
      const RealVector& pso = env.psi(s, env.n_items);
      resid = std::max(resid, std::abs(pso.dot(mu5) - 1.0));
      resid = std::max(resid, std::abs(pso.dot(mu1)));
      resid = std::max(resid, std::abs(pso.dot(mu2)));
    }
    // Absorbing self-loops respond to mu2 with probability one.
    for (int s = 0; s < env.n_states; ++s) {
      if (!hi.absorbing[static_cast<std::size_t>(s)]) continue;
      const RealVector& psd = env.psi(s, 0);
      resid = std::max(resid, std::abs(psd.dot(mu2) - 1.0));
      resid = std::max(resid, std::abs(psd.dot(mu1)));
      resid = std::max(resid, std::abs(psd.dot(mu5)));
    }
  }
  for (int h = 0; h < h_max; ++h) {
    for (int s = 0; s < env.n_states; ++s) {
      // Unreachable filler rows are not part of the construction.
      if (!hi.absorbing[static_cast<std::size_t>(s)] && s != hi.global_state &&
          hi.state_time[static_cast<std::size_t>(s)] != h + 1)
        continue;
      for (int a = 0; a <= env.n_items; ++a) {
        resid = std::max(resid, std::abs(env.psi(s, a).dot(env.w_star) -
                                         env.r(h, s, a)));
      }
    }
  }
  hi.factorization_residual = resid;
  return hi;
}

}  // namespace mnlvql

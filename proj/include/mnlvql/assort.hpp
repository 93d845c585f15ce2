#pragma once

// Size-capped assortment optimization under MNL choice: brute-force
// enumeration, parametric bisection on the fractional objective, and the
// Charnes-Cooper LP solved by a small dense two-phase simplex.

#include <mnlvql/numerics.hpp>
#include <mnlvql/tolerances.hpp>

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mnlvql {

class TooManyItems : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class LpInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class LpUnbounded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AssortmentInstance {
  double outside_weight = 1.0;
  double outside_value = 0.0;
  std::vector<double> weights;  // strictly positive, one per ground item
  std::vector<double> values;   // in [0,1], same length
  int max_items = 1;            // cap on ground items per assortment (M-1)

  int item_count() const { return static_cast<int>(weights.size()); }
};

struct AssortmentSolution {
  std::vector<int> chosen;  // sorted ground-item indices, never empty
  double value = 0.0;
};

// Shared accumulation order: outside first, then chosen items ascending.
// Every consumer of assortment values routes through here so independently
// computed optima compare bit-identically.
inline double assortment_value(const AssortmentInstance& inst,
                               const std::vector<int>& chosen) {
  double num = inst.outside_weight * inst.outside_value;
  double den = inst.outside_weight;
  for (int a : chosen) {
    num += inst.weights[static_cast<std::size_t>(a)] *
           inst.values[static_cast<std::size_t>(a)];
    den += inst.weights[static_cast<std::size_t>(a)];
  }
  return num / den;
}

namespace detail {

// Candidate ordering: larger value wins; near-ties (within kValueTie) prefer
// the lexicographically smaller index set to keep argmax deterministic.
inline bool assortment_improves(const std::vector<int>& cand, double cand_value,
                                const std::vector<int>& best, double best_value) {
  if (best.empty()) return true;
  if (cand_value > best_value + tol::kValueTie) return true;
  if (cand_value < best_value - tol::kValueTie) return false;
  return std::lexicographical_compare(cand.begin(), cand.end(), best.begin(),
                                      best.end());
}

}  // namespace detail

inline AssortmentSolution solve_bruteforce(const AssortmentInstance& inst) {
  const int n = inst.item_count();
  if (n > 20) throw TooManyItems("brute force capped at 20 items");
  assert(n >= 1 && inst.max_items >= 1);
  AssortmentSolution best;
  std::vector<int> cand;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    const int size = __builtin_popcount(mask);
    if (size > inst.max_items) continue;
    cand.clear();
    for (int a = 0; a < n; ++a)
      if (mask & (1u << a)) cand.push_back(a);
    const double v = assortment_value(inst, cand);
    if (detail::assortment_improves(cand, v, best.chosen, best.value)) {
      best.chosen = cand;
      best.value = v;
    }
  }
  return best;
}

// Parametric (Dinkelbach-style) search: for a candidate value t, the residual
//   g(t) = w0 (f0 - t) + max over admissible S of sum_{a in S} w_a (f_a - t)
// is nonincreasing with root at the optimal value. The inner max keeps the
// top-scoring positive items up to the cap but always at least the single
// best item, honoring the >=1-item action space.
inline AssortmentSolution solve_bisection(const AssortmentInstance& inst) {
  const int n = inst.item_count();
  assert(n >= 1 && inst.max_items >= 1);
  // Scratch persists across calls; the planner solves this many times per
  // episode, so per-call allocation would dominate at large item counts.
  thread_local std::vector<int> order;
  thread_local std::vector<double> scores;
  thread_local std::vector<int> cand;
  order.resize(static_cast<std::size_t>(n));
  scores.resize(static_cast<std::size_t>(n));
  const int take = std::min(inst.max_items, n);
  AssortmentSolution best;

  auto residual = [&](double t) {
    for (int a = 0; a < n; ++a)
      scores[static_cast<std::size_t>(a)] =
          inst.weights[static_cast<std::size_t>(a)] *
          (inst.values[static_cast<std::size_t>(a)] - t);
    std::iota(order.begin(), order.end(), 0);
    // Only the best `take` entries can enter the set, and the comparator is a
    // total order, so the partial sort selects exactly the full sort's prefix.
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](int a, int b) {
                        const double sa = scores[static_cast<std::size_t>(a)];
                        const double sb = scores[static_cast<std::size_t>(b)];
                        if (sa != sb) return sa > sb;
                        return a < b;
                      });
    cand.clear();
    double inner = 0.0;
    for (int i = 0; i < take; ++i) {
      const int a = order[static_cast<std::size_t>(i)];
      if (scores[static_cast<std::size_t>(a)] <= 0.0) break;
      cand.push_back(a);
      inner += scores[static_cast<std::size_t>(a)];
    }
    if (cand.empty()) {
      cand.push_back(order.front());
      inner = scores[static_cast<std::size_t>(order.front())];
    }
    std::sort(cand.begin(), cand.end());
    // Every realized set is feasible, so its exact ratio lower-bounds the
    // optimum; keep the best one seen across all bisection probes.
    const double v = assortment_value(inst, cand);
    if (detail::assortment_improves(cand, v, best.chosen, best.value)) {
      best.chosen = cand;
      best.value = v;
    }
    return inst.outside_weight * (inst.outside_value - t) + inner;
  };

  bisect(residual, 0.0, 1.0, tol::kAssortBisection);
  return best;
}

namespace detail {

// Dense tableau primal simplex with Bland's rule, minimizing cost . x over
// {Ax (=|<=) b, x >= 0}. The LP here has at most ~70 rows and ~135 columns,
// so no basis factorization is warranted.
class SimplexTableau {
 public:
  // relations: '=' or '<'; b must be nonnegative.
  SimplexTableau(const Eigen::MatrixXd& a, const RealVector& b,
                 const std::vector<char>& relations)
      : m_(static_cast<int>(a.rows())), n_real_(static_cast<int>(a.cols())) {
    int n_slack = 0;
    for (char r : relations) n_slack += (r == '<') ? 1 : 0;
    n_art_ = m_ - n_slack;  // one artificial per equality row
    const int n_total = n_real_ + n_slack + n_art_;
    t_ = Eigen::MatrixXd::Zero(m_ + 1, n_total + 1);
    basis_.assign(static_cast<std::size_t>(m_), -1);
    t_.block(0, 0, m_, n_real_) = a;
    t_.block(0, n_total, m_, 1) = b;
    int slack_col = n_real_;
    int art_col = n_real_ + n_slack;
    for (int i = 0; i < m_; ++i) {
      assert(b[i] >= 0.0);
      if (relations[static_cast<std::size_t>(i)] == '<') {
        t_(i, slack_col) = 1.0;
        basis_[static_cast<std::size_t>(i)] = slack_col++;
      } else {
        t_(i, art_col) = 1.0;
        basis_[static_cast<std::size_t>(i)] = art_col++;
      }
    }
    n_enterable_phase1_ = n_total;
    first_art_ = n_real_ + n_slack;
  }

  // Returns primal values of the first n_real variables.
  RealVector solve(const RealVector& cost_real) {
    if (n_art_ > 0) {
      RealVector phase1 = RealVector::Zero(t_.cols() - 1);
      phase1.segment(first_art_, n_art_).setOnes();
      install_objective(phase1);
      run(n_enterable_phase1_);
      if (t_(m_, t_.cols() - 1) < -1e-9)
        throw LpInfeasible("phase-1 optimum positive");
      // Pivot any degenerate basic artificial out so phase-2 pivots can never
      // reactivate it; an all-zero row marks a redundant constraint and can
      // keep its artificial (no enterable column ever touches that row).
      for (int i = 0; i < m_; ++i) {
        if (basis_[static_cast<std::size_t>(i)] < first_art_) continue;
        for (int j = 0; j < first_art_; ++j) {
          if (std::abs(t_(i, j)) > 1e-9) {
            pivot(i, j);
            break;
          }
        }
      }
    }
    RealVector cost = RealVector::Zero(t_.cols() - 1);
    cost.head(n_real_) = cost_real;
    install_objective(cost);
    // Artificials are barred from re-entering in phase 2.
    run(first_art_);
    RealVector x = RealVector::Zero(n_real_);
    for (int i = 0; i < m_; ++i) {
      if (basis_[static_cast<std::size_t>(i)] < n_real_)
        x[basis_[static_cast<std::size_t>(i)]] = t_(i, t_.cols() - 1);
    }
    return x;
  }

 private:
  void install_objective(const RealVector& cost) {
    t_.row(m_).setZero();
    t_.row(m_).head(cost.size()) = cost.transpose();
    for (int i = 0; i < m_; ++i) {
      const int bv = basis_[static_cast<std::size_t>(i)];
      const double c = cost[bv];
      if (c != 0.0) t_.row(m_) -= c * t_.row(i);
    }
  }

  void run(int n_enterable) {
    const int rhs = static_cast<int>(t_.cols()) - 1;
    for (int iter = 0; iter < 100000; ++iter) {
      int enter = -1;
      for (int j = 0; j < n_enterable; ++j) {
        if (t_(m_, j) < -1e-9) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m_; ++i) {
        if (t_(i, enter) > 1e-12) {
          const double ratio = t_(i, rhs) / t_(i, enter);
          if (leave < 0 || ratio < best_ratio - 1e-15 ||
              (std::abs(ratio - best_ratio) <= 1e-15 &&
               basis_[static_cast<std::size_t>(i)] <
                   basis_[static_cast<std::size_t>(leave)])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) throw LpUnbounded("no blocking row for entering column");
      pivot(leave, enter);
    }
    throw NoConvergence("simplex iteration cap exceeded");
  }

  void pivot(int row, int col) {
    t_.row(row) /= t_(row, col);
    for (int i = 0; i <= m_; ++i) {
      if (i == row) continue;
      const double factor = t_(i, col);
      if (factor != 0.0) t_.row(i) -= factor * t_.row(row);
    }
    basis_[static_cast<std::size_t>(row)] = col;
  }

  int m_;
  int n_real_;
  int n_art_ = 0;
  int first_art_ = 0;
  int n_enterable_phase1_ = 0;
  Eigen::MatrixXd t_;
  std::vector<int> basis_;
};

}  // namespace detail

// Charnes-Cooper transformation of the fractional program. Beyond the two
// displayed constraints (normalization and the size cap), the LP needs the
// images of the box and action-space constraints on the pre-transform
// indicators: y_a <= t (from x_a <= 1) and sum_a y_a >= t (from the >=1-item
// rule). Without them the relaxation can exceed the integer optimum. The
// resulting constraint matrix is totally unimodular in the x-space, so the
// relaxation stays exact and vertices have y_a in {0, t}.
inline AssortmentSolution solve_charnes_cooper(const AssortmentInstance& inst) {
  const int n = inst.item_count();
  if (n > 64) throw TooManyItems("Charnes-Cooper LP capped at 64 items");
  assert(n >= 1 && inst.max_items >= 1);
  const int nv = n + 1;  // y_0..y_{n-1}, then t
  const int rows = n + 3;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, nv);
  RealVector b = RealVector::Zero(rows);
  std::vector<char> rel(static_cast<std::size_t>(rows), '<');

  // sum_a w_a y_a + w0 t = 1
  for (int j = 0; j < n; ++j) a(0, j) = inst.weights[static_cast<std::size_t>(j)];
  a(0, n) = inst.outside_weight;
  b[0] = 1.0;
  rel[0] = '=';
  // sum_a y_a <= max_items * t
  for (int j = 0; j < n; ++j) a(1, j) = 1.0;
  a(1, n) = -static_cast<double>(inst.max_items);
  // y_a <= t
  for (int j = 0; j < n; ++j) {
    a(2 + j, j) = 1.0;
    a(2 + j, n) = -1.0;
  }
  // sum_a y_a >= t
  for (int j = 0; j < n; ++j) a(rows - 1, j) = -1.0;
  a(rows - 1, n) = 1.0;

  RealVector cost(nv);  // maximize, so negate for the minimizing simplex
  for (int j = 0; j < n; ++j)
    cost[j] = -inst.weights[static_cast<std::size_t>(j)] *
              inst.values[static_cast<std::size_t>(j)];
  cost[n] = -inst.outside_weight * inst.outside_value;

  detail::SimplexTableau tableau(a, b, rel);
  RealVector x = tableau.solve(cost);
  const double t_star = x[n];
  if (!(t_star > 0.0)) throw LpInfeasible("normalization forces t > 0");

  AssortmentSolution sol;
  for (int j = 0; j < n; ++j) {
    if (x[j] > tol::kLpInclude) sol.chosen.push_back(j);
  }
  if (sol.chosen.empty()) {
    // Numerically possible only if every y collapsed; fall back to the best
    // singleton to preserve the action-space contract.
    int arg = 0;
    double bestv = -1.0;
    for (int j = 0; j < n; ++j) {
      const double v = assortment_value(inst, {j});
      if (v > bestv) {
        bestv = v;
        arg = j;
      }
    }
    sol.chosen.push_back(arg);
  }
  sol.value = assortment_value(inst, sol.chosen);
  return sol;
}

}  // namespace mnlvql

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "mnlvql/tolerances.hpp"

// Dense symmetric linear algebra and scalar root finding shared by all other
// modules. Problem dimensions stay small (<= ~26 in every experiment), so
// matrices are refactored per use instead of maintaining incremental
// factorizations.

namespace mnlvql {

using RealVector = Eigen::VectorXd;
using SymMatrix = Eigen::MatrixXd;

struct NotPositiveDefinite : std::runtime_error {
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

struct NoConvergence : std::runtime_error {
  explicit NoConvergence(const std::string& what) : std::runtime_error(what) {}
};

struct BadBracket : std::runtime_error {
  explicit BadBracket(const std::string& what) : std::runtime_error(what) {}
};

// Factor once when several solves against the same metric follow.
inline Eigen::LLT<SymMatrix> cholesky(const SymMatrix& m) {
  Eigen::LLT<SymMatrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("cholesky: matrix is not positive definite");
  }
  return llt;
}

inline RealVector cholesky_solve(const SymMatrix& m, const RealVector& b) {
  return cholesky(m).solve(b);
}

inline double metric_norm(const SymMatrix& m, const RealVector& x) {
  const double q = x.dot(m * x);
  if (q < 0.0) {
    // A PSD metric can go epsilon-negative through rounding; anything beyond
    // that is a genuinely indefinite input.
    const double scale = x.squaredNorm() * (m.cwiseAbs().maxCoeff() + 1.0);
    if (q < -1e-9 * scale) {
      throw NotPositiveDefinite("metric_norm: quadratic form is negative");
    }
    return 0.0;
  }
  return std::sqrt(q);
}

inline double inverse_metric_norm(const Eigen::LLT<SymMatrix>& factor, const RealVector& x) {
  const double q = x.dot(factor.solve(x));
  return q > 0.0 ? std::sqrt(q) : 0.0;
}

inline double inverse_metric_norm(const SymMatrix& m, const RealVector& x) {
  return inverse_metric_norm(cholesky(m), x);
}

// Columnwise |x_j|_{A^{-1}} for every column of cols in one forward
// triangular solve (|x|^2_{A^{-1}} = |L^{-1}x|^2 for A = L L^T). scratch and
// out are caller-owned so repeated calls with stable shapes do not allocate.
inline void inverse_metric_norms(const Eigen::LLT<SymMatrix>& factor,
                                 const Eigen::MatrixXd& cols,
                                 Eigen::MatrixXd& scratch, RealVector& out) {
  scratch = cols;
  factor.matrixL().solveInPlace(scratch);
  out = scratch.colwise().squaredNorm().transpose();
  out = out.cwiseSqrt();
}

// argmin over { theta : ||theta||_2 <= radius } of ||theta - center||_metric.
// The KKT system gives theta(mu) = (metric + mu I)^-1 metric center with a
// Lagrange multiplier mu >= 0; ||theta(mu)||_2 decreases monotonically in mu,
// so the multiplier is found by bisection.
inline RealVector project_to_ball_in_metric(const RealVector& center, const SymMatrix& metric,
                                            double radius) {
  if (radius <= 0.0) throw BadBracket("project_to_ball_in_metric: radius must be positive");
  if (center.norm() <= radius) return center;

  const RealVector mc = metric * center;
  const int d = static_cast<int>(center.size());
  const SymMatrix eye = SymMatrix::Identity(d, d);

  // ||theta(mu)|| <= ||metric*center|| / mu, so this upper end is feasible.
  double lo = 0.0;
  double hi = std::max(1.0, mc.norm() / radius);
  while (cholesky(metric + hi * eye).solve(mc).norm() > radius) {
    hi *= 2.0;
    lo = hi / 2.0;
  }

  for (int iter = 0; iter < tol::kBallProjectionIterCap; ++iter) {
    const double mu = 0.5 * (lo + hi);
    const RealVector theta = cholesky(metric + mu * eye).solve(mc);
    const double gap = theta.norm() - radius;
    if (std::abs(gap) <= tol::kBallProjection) return theta;
    if (gap > 0.0) {
      lo = mu;
    } else {
      hi = mu;
    }
  }
  throw NoConvergence("project_to_ball_in_metric: multiplier bisection did not converge");
}

// Root of a sign-changing function, bracketed to width <= tol.
template <class F>
double bisect(F&& f, double lo, double hi, double tol) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw BadBracket("bisect: f(lo) and f(hi) have the same sign");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // hit floating-point resolution
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace mnlvql

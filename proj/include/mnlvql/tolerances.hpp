#pragma once

// Every numeric tolerance and guard used across the library, in one place.
// Tests pin against these same constants, so changing one here changes the
// contract everywhere at once.

namespace mnlvql::tol {

// Symmetry check for matrices used as metrics (relative).
inline constexpr double kSymmetryRel = 1e-12;

// cholesky_solve residual: ||m*x - b|| <= kCholSolveRel * ||b||.
inline constexpr double kCholSolveRel = 1e-10;

// Ball projection: bisection stops when | ||theta||_2 - radius | <= this.
inline constexpr double kBallProjection = 1e-9;
inline constexpr int kBallProjectionIterCap = 200;

// Choice probabilities must sum to 1 within this.
inline constexpr double kProbSum = 1e-12;

// Utility exponent clamp; with B = O(1) and ||phi|| <= 1 plus bonus terms
// this is never active in-distribution.
inline constexpr double kUtilityClamp = 30.0;

// Assortment solvers.
inline constexpr double kAssortBisection = 1e-10;   // width of the t-bracket
inline constexpr double kAssortValueRecompute = 1e-10;
inline constexpr double kAssortSolverAgreement = 1e-7;   // CC/bisection vs brute
inline constexpr double kAssortBisectionAgreement = 1e-8;
inline constexpr double kLpInclude = 1e-9;          // y_a > this => item chosen
inline constexpr double kValueTie = 1e-12;          // argmax tie band

// Linear-MDP construction checks.
inline constexpr double kFactorizationResidual = 1e-9;
inline constexpr double kRowStochastic = 1e-12;

// Weight-scale invariance of the assortment objective.
inline constexpr double kWeightScaleInvariance = 1e-10;

}  // namespace mnlvql::tol

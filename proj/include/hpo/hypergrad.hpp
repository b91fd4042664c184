#pragma once

// Hypergradient estimators: unrolled (ITD), truncated unrolled (T-RHG) and
// implicit (AID with fixed-point or CG linear solves).

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hpo/data.hpp"
#include "hpo/errors.hpp"
#include "hpo/linalg.hpp"
#include "hpo/problems.hpp"

namespace hpo {

struct InnerTrajectory {
  std::vector<Vec> thetas;  // theta_0 .. theta_K
  double alpha_in = 0.0;

  std::size_t K() const { return thetas.empty() ? 0 : thetas.size() - 1; }
  const Vec& last() const { return thetas.back(); }
};

enum class MethodKind { itd, trhg, aid_fp, aid_cg };

inline const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::itd: return "itd";
    case MethodKind::trhg: return "trhg";
    case MethodKind::aid_fp: return "aid_fp";
    case MethodKind::aid_cg: return "aid_cg";
  }
  return "?";
}

inline MethodKind parse_method_kind(const std::string& s) {
  for (MethodKind k : {MethodKind::itd, MethodKind::trhg, MethodKind::aid_fp, MethodKind::aid_cg})
    if (s == to_string(k)) return k;
  throw ConfigError("method.kind", "unknown method '" + s + "'");
}

struct HypergradMethod {
  MethodKind kind = MethodKind::itd;
  std::size_t K = 100;
  std::size_t Z = 10;      // linear-solver iterations (AID)
  std::size_t h = 1;       // truncation window (T-RHG)
  double alpha_in = 0.1;
  double fp_step = 0.0;    // AID-FP step; 0 means reuse alpha_in
  double solver_tol = 1e-14;

  double fixed_point_step() const { return fp_step > 0.0 ? fp_step : alpha_in; }

  void validate() const {
    if (!(alpha_in > 0.0)) throw ConfigError("method.alpha_in", "must be > 0");
    if (kind == MethodKind::trhg && (h < 1 || h > K))
      throw ConfigError("method.h", "T-RHG needs 1 <= h <= K");
    if ((kind == MethodKind::aid_fp || kind == MethodKind::aid_cg) && Z < 1)
      throw ConfigError("method.Z", "AID needs Z >= 1");
    if (fp_step < 0.0) throw ConfigError("method.fp_step", "must be >= 0");
    if (solver_tol < 0.0) throw ConfigError("method.solver_tol", "must be >= 0");
  }
};

struct HypergradResult {
  Vec grad;  // raw hyper coordinates
  Vec inner_final;
  std::optional<double> system_residual;  // AID only: ||H v - grad_theta F||
  std::size_t solver_iterations = 0;
  double trajectory_norm = 0.0;            // ||theta_K - theta_0||
};

// K steps of full-batch gradient descent on the inner objective.
inline InnerTrajectory inner_solve(const BilevelProblem& problem, const Vec& lambda, const Vec& theta0,
                                   const DataView& train, std::size_t K, double alpha_in) {
  HPO_REQUIRE(alpha_in > 0.0, "alpha_in must be positive");
  HPO_REQUIRE(theta0.size() == problem.param_dim(), "theta0 has wrong length");
  InnerTrajectory traj;
  traj.alpha_in = alpha_in;
  traj.thetas.reserve(K + 1);
  traj.thetas.push_back(theta0);
  for (std::size_t k = 0; k < K; ++k) {
    const Vec g = problem.inner_grad_theta(lambda, traj.thetas.back(), train);
    if (!all_finite(g)) throw NumericalError("inner_solve: non-finite gradient", k);
    Vec next = traj.thetas.back();
    axpy(-alpha_in, g, next);
    if (!all_finite(next)) throw NumericalError("inner_solve: non-finite iterate", k + 1);
    traj.thetas.push_back(std::move(next));
  }
  return traj;
}

namespace detail {

// Reverse sweep over the last `steps` inner steps (K-1 down to K-steps).
inline HypergradResult reverse_accumulate(const BilevelProblem& problem, const Vec& lambda,
                                          const InnerTrajectory& traj, const DataView& train,
                                          const DataView& val, std::size_t steps) {
  HPO_REQUIRE(!traj.thetas.empty(), "empty trajectory");
  HPO_REQUIRE(lambda.size() == problem.hyper_dim(), "lambda has wrong length");
  for (const Vec& th : traj.thetas) HPO_REQUIRE(th.size() == problem.param_dim(), "trajectory/problem mismatch");
  const std::size_t K = traj.K();
  const Vec& thK = traj.last();
  HypergradResult res;
  res.grad = problem.outer_grad_lambda(lambda, thK, val);
  Vec adj = problem.outer_grad_theta(lambda, thK, val);
  const double a = traj.alpha_in;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t k = K - 1 - s;
    const Vec& th = traj.thetas[k];
    axpy(-a, problem.inner_mixed_vp(lambda, th, train, adj), res.grad);
    if (s + 1 < steps) axpy(-a, problem.inner_hvp(lambda, th, train, adj), adj);
  }
  if (!all_finite(res.grad)) throw NumericalError("reverse accumulation: non-finite hypergradient", K);
  res.inner_final = thK;
  res.trajectory_norm = norm(sub(thK, traj.thetas.front()));
  return res;
}

}  // namespace detail

// Exact derivative of lambda -> F(lambda, theta_K(lambda)) through the unrolled
// inner loop, by reverse accumulation with Hessian- and mixed-vector products.
inline HypergradResult itd_hypergrad(const BilevelProblem& problem, const Vec& lambda,
                                     const InnerTrajectory& traj, const DataView& train, const DataView& val) {
  return detail::reverse_accumulate(problem, lambda, traj, train, val, traj.K());
}

// Keeps mixed-product contributions only from the last h inner steps.
inline HypergradResult trhg_hypergrad(const BilevelProblem& problem, const Vec& lambda,
                                      const InnerTrajectory& traj, const DataView& train, const DataView& val,
                                      std::size_t h) {
  HPO_REQUIRE(h >= 1 && h <= traj.K(), "T-RHG needs 1 <= h <= K");
  return detail::reverse_accumulate(problem, lambda, traj, train, val, h);
}

enum class LinearSolver { fixed_point, conjugate_gradient };

// grad = grad_lambda F - mixed(theta_K, v) with v ~ H^{-1} grad_theta F from Z solver steps.
inline HypergradResult aid_hypergrad(const BilevelProblem& problem, const Vec& lambda, const Vec& thetaK,
                                     const DataView& train, const DataView& val, LinearSolver solver,
                                     std::size_t Z, double fp_step = 0.0, double tol = 1e-14) {
  HPO_REQUIRE(Z >= 1, "AID needs Z >= 1");
  HPO_REQUIRE(lambda.size() == problem.hyper_dim(), "lambda has wrong length");
  HPO_REQUIRE(thetaK.size() == problem.param_dim(), "theta has wrong length");
  const Vec rhs = problem.outer_grad_theta(lambda, thetaK, val);
  const LinearOperator hess{problem.param_dim(),
                            [&](const Vec& v) { return problem.inner_hvp(lambda, thetaK, train, v); }};
  SolveResult sol;
  if (solver == LinearSolver::conjugate_gradient) {
    sol = cg_solve(hess, rhs, Z, tol);
  } else {
    HPO_REQUIRE(fp_step > 0.0, "AID-FP needs a positive step");
    sol = fixed_point_solve(hess, rhs, fp_step, Z, tol);
  }
  HypergradResult res;
  res.grad = problem.outer_grad_lambda(lambda, thetaK, val);
  axpy(-1.0, problem.inner_mixed_vp(lambda, thetaK, train, sol.x), res.grad);
  if (!all_finite(res.grad)) throw NumericalError("aid_hypergrad: non-finite hypergradient", sol.iterations);
  res.inner_final = thetaK;
  res.system_residual = sol.residual;
  res.solver_iterations = sol.iterations;
  return res;
}

// Inner solve followed by the configured estimator.
inline HypergradResult compute_hypergrad(const BilevelProblem& problem, const Vec& lambda, const Vec& theta0,
                                         const DataView& train, const DataView& val, const HypergradMethod& m) {
  m.validate();
  const InnerTrajectory traj = inner_solve(problem, lambda, theta0, train, m.K, m.alpha_in);
  switch (m.kind) {
    case MethodKind::itd: return itd_hypergrad(problem, lambda, traj, train, val);
    case MethodKind::trhg: return trhg_hypergrad(problem, lambda, traj, train, val, m.h);
    case MethodKind::aid_fp:
    case MethodKind::aid_cg: {
      if (!problem.supports_implicit())
        throw ConfigError("method.kind", "implicit differentiation is not offered for " + problem.name());
      const auto solver = m.kind == MethodKind::aid_cg ? LinearSolver::conjugate_gradient : LinearSolver::fixed_point;
      HypergradResult r =
          aid_hypergrad(problem, lambda, traj.last(), train, val, solver, m.Z, m.fixed_point_step(), m.solver_tol);
      r.trajectory_norm = norm(sub(traj.last(), theta0));
      return r;
    }
  }
  throw ConfigError("method.kind", "unknown method");
}

// Central differences of lambda -> F(lambda, theta_K(lambda)), re-running the
// inner loop for every perturbation. Test oracle for the unrolled estimators.
inline Vec finite_diff_hypergrad(const BilevelProblem& problem, const Vec& lambda, const Vec& theta0,
                                 const DataView& train, const DataView& val, std::size_t K, double alpha_in,
                                 double eps) {
  HPO_REQUIRE(eps > 0.0, "eps must be positive");
  auto objective = [&](const Vec& l) {
    const InnerTrajectory t = inner_solve(problem, l, theta0, train, K, alpha_in);
    return problem.outer_loss(l, t.last(), val);
  };
  Vec g(lambda.size());
  Vec lp = lambda;
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    const double orig = lp[j];
    lp[j] = orig + eps;
    const double fp = objective(lp);
    lp[j] = orig - eps;
    const double fm = objective(lp);
    lp[j] = orig;
    g[j] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Contraction constant of theta -> theta - alpha_in * grad for an L-smooth,
// mu-strongly convex inner objective.
inline double contraction_params(double L, double mu, double alpha_in) {
  HPO_REQUIRE(mu > 0.0 && L >= mu, "need L >= mu > 0");
  HPO_REQUIRE(alpha_in > 0.0, "alpha_in must be positive");
  if (alpha_in > 2.0 / L) throw NonContractiveError("alpha_in > 2/L: inner gradient step is not a contraction");
  const double balanced = 2.0 / (L + mu);
  if (std::abs(alpha_in - balanced) <= 1e-15 * balanced) return (L - mu) / (L + mu);
  return std::max(1.0 - alpha_in * mu, alpha_in * L - 1.0);
}

struct InnerCurvature {
  double L = 0.0;   // largest Hessian eigenvalue at the probe point (power iteration)
  double mu = 0.0;  // strong-convexity modulus guaranteed by the penalty
  double alpha_in = 0.0;
  double q = 1.0;
};

// Step size 2/(L+mu) with L estimated by power iteration on the inner Hessian
// at theta. Falls back to 1/L when the penalty gives no strong convexity.
inline InnerCurvature estimate_curvature(const BilevelProblem& problem, const Vec& lambda, const Vec& theta,
                                         const DataView& train, std::size_t iters = 100) {
  const std::size_t r = problem.param_dim();
  Vec v(r);
  for (std::size_t i = 0; i < r; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  double L = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    const double n = norm(v);
    for (double& x : v) x /= n;
    Vec hv = problem.inner_hvp(lambda, theta, train, v);
    L = dot(v, hv);
    v = std::move(hv);
    if (norm(v) == 0.0) break;
  }
  InnerCurvature c;
  // Power iteration approaches the top eigenvalue from below; pad by 1%.
  c.L = 1.01 * L;
  c.mu = std::min(problem.strong_convexity(lambda), c.L);
  if (c.mu > 0.0) {
    c.alpha_in = 2.0 / (c.L + c.mu);
    c.q = contraction_params(c.L, c.mu, c.alpha_in);
  } else {
    c.alpha_in = 1.0 / c.L;
    c.q = 1.0;
  }
  return c;
}

}  // namespace hpo

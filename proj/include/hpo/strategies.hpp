#pragma once

// Outer loops: single split, ensemble over U splits (EHG) and the online
// ensemble (OEHG) that interleaves one inner step per split with each
// hyperparameter update.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hpo/data.hpp"
#include "hpo/errors.hpp"
#include "hpo/hypergrad.hpp"
#include "hpo/linalg.hpp"
#include "hpo/parallel.hpp"
#include "hpo/problems.hpp"

namespace hpo {

enum class OptimizerKind { gd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::gd ? "gd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "gd") return OptimizerKind::gd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("strategy.outer.kind", "unknown optimizer '" + s + "'");
}

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class OuterOptimizer {
 public:
  OuterOptimizer(OptimizerKind kind, double alpha_out, AdamParams adam = {})
      : kind_(kind), alpha_(alpha_out), adam_(adam) {
    if (!(alpha_out > 0.0)) throw ConfigError("strategy.outer.alpha_out", "must be > 0");
  }

  OptimizerKind kind() const { return kind_; }
  double alpha_out() const { return alpha_; }
  std::size_t steps_taken() const { return t_; }

  Vec step(const Vec& lambda, const Vec& g) {
    HPO_REQUIRE(lambda.size() == g.size(), "optimizer_step dimension mismatch");
    Vec out = lambda;
    if (kind_ == OptimizerKind::gd) {
      axpy(-alpha_, g, out);
      ++t_;
      return out;
    }
    if (m_.empty()) {
      m_.assign(g.size(), 0.0);
      v_.assign(g.size(), 0.0);
    }
    HPO_REQUIRE(m_.size() == g.size(), "adam state dimension changed");
    ++t_;
    const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < g.size(); ++i) {
      m_[i] = adam_.beta1 * m_[i] + (1.0 - adam_.beta1) * g[i];
      v_[i] = adam_.beta2 * v_[i] + (1.0 - adam_.beta2) * g[i] * g[i];
      out[i] -= alpha_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + adam_.eps);
    }
    return out;
  }

 private:
  OptimizerKind kind_;
  double alpha_;
  AdamParams adam_;
  Vec m_, v_;
  std::size_t t_ = 0;
};

struct SplitRecord {
  Vec hypergrad;
  double train_loss = 0.0;  // inner objective at the split's current theta
  double val_loss = 0.0;
  std::optional<double> test_loss;
};

struct TraceStep {
  std::size_t step = 0;
  Vec lambda;     // raw, before the update
  Vec hypergrad;  // ensemble mean
  std::vector<SplitRecord> splits;
  std::optional<double> deployed_test_loss;  // OEHG deployed model after the update
};

struct HPOTrace {
  std::vector<Vec> lambdas;  // lambda_0 .. lambda_T
  std::vector<TraceStep> steps;
  std::vector<Vec> split_thetas;  // final theta per split
  Vec deployed_theta;             // OEHG only

  const Vec& final_lambda() const { return lambdas.back(); }
};

struct RunOptions {
  std::size_t workers = 1;
  bool warm_start = false;  // start each inner solve from the previous theta_K
  std::optional<DataView> test;
};

// (1/U) * sum_i g_i with index-ascending summation.
inline Vec ensemble_mean(const std::vector<Vec>& grads) {
  HPO_REQUIRE(!grads.empty(), "ensemble_mean of nothing");
  Vec sum(grads.front().size(), 0.0);
  for (const Vec& g : grads) {
    HPO_REQUIRE(g.size() == sum.size(), "hypergradient dimensions differ");
    for (std::size_t j = 0; j < g.size(); ++j) sum[j] += g[j];
  }
  const double U = static_cast<double>(grads.size());
  for (double& v : sum) v /= U;
  return sum;
}

namespace detail {

inline void check_finite_step(const Vec& v, const char* what, std::size_t step) {
  if (!all_finite(v)) throw NumericalError(std::string(what) + " became non-finite", step);
}

}  // namespace detail

// Algorithm-3 style loop: each outer step recomputes the configured
// hypergradient on every split and moves lambda along their mean.
inline HPOTrace run_ehg(const BilevelProblem& problem, const Dataset& ds, const std::vector<Split>& splits,
                        const HypergradMethod& method, OuterOptimizer& opt, std::size_t T, const Vec& lambda0,
                        const Vec& theta0, const RunOptions& options = {}) {
  HPO_REQUIRE(T >= 1, "T must be >= 1");
  HPO_REQUIRE(!splits.empty(), "need at least one split");
  HPO_REQUIRE(lambda0.size() == problem.hyper_dim(), "lambda0 has wrong length");
  HPO_REQUIRE(theta0.size() == problem.param_dim(), "theta0 has wrong length");
  method.validate();

  const std::size_t U = splits.size();
  HPOTrace trace;
  trace.lambdas.push_back(lambda0);
  trace.split_thetas.assign(U, theta0);
  Vec lambda = lambda0;

  for (std::size_t t = 0; t < T; ++t) {
    TraceStep rec;
    rec.step = t;
    rec.lambda = lambda;
    rec.splits.resize(U);
    std::vector<Vec> grads(U);
    std::vector<Vec> finals(U);
    parallel_for(U, options.workers, [&](std::size_t i) {
      const DataView train = splits[i].train(ds);
      const DataView val = splits[i].val(ds);
      const Vec& start = options.warm_start ? trace.split_thetas[i] : theta0;
      HypergradResult r;
      try {
        r = compute_hypergrad(problem, lambda, start, train, val, method);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("outer step: ") + e.what(), t);
      }
      SplitRecord& s = rec.splits[i];
      s.hypergrad = r.grad;
      s.train_loss = problem.inner_loss(lambda, r.inner_final, train);
      s.val_loss = problem.outer_loss(lambda, r.inner_final, val);
      if (options.test) s.test_loss = problem.outer_loss(lambda, r.inner_final, *options.test);
      grads[i] = std::move(r.grad);
      finals[i] = std::move(r.inner_final);
    });
    rec.hypergrad = ensemble_mean(grads);
    lambda = opt.step(lambda, rec.hypergrad);
    detail::check_finite_step(lambda, "lambda", t);
    trace.split_thetas = std::move(finals);
    trace.lambdas.push_back(lambda);
    trace.steps.push_back(std::move(rec));
  }
  return trace;
}

// Algorithms 1-2: one split.
inline HPOTrace run_single(const BilevelProblem& problem, const Dataset& ds, const Split& split,
                           const HypergradMethod& method, OuterOptimizer& opt, std::size_t T, const Vec& lambda0,
                           const Vec& theta0, const RunOptions& options = {}) {
  return run_ehg(problem, ds, std::vector<Split>{split}, method, opt, T, lambda0, theta0, options);
}

struct OnlineStep {
  Vec hypergrad;
  Vec next_theta;  // shadow after one inner step
};

// One inner GD step on a shadow model and the derivative of the validation
// loss through that step, lambda treated as a variable inside the step.
inline OnlineStep oehg_split_hypergrad(const BilevelProblem& problem, const Vec& lambda, const Vec& shadow,
                                       const DataView& train, const DataView& val, double alpha_in) {
  OnlineStep out;
  out.next_theta = shadow;
  axpy(-alpha_in, problem.inner_grad_theta(lambda, shadow, train), out.next_theta);
  const Vec adj = problem.outer_grad_theta(lambda, out.next_theta, val);
  out.hypergrad = problem.outer_grad_lambda(lambda, out.next_theta, val);
  axpy(-alpha_in, problem.inner_mixed_vp(lambda, shadow, train, adj), out.hypergrad);
  return out;
}

struct OnlineOptions : RunOptions {
  // Rows the deployed model trains on; empty means every row of the dataset.
  IndexSet deploy_rows;
};

inline HPOTrace run_oehg(const BilevelProblem& problem, const Dataset& ds, const std::vector<Split>& splits,
                         std::size_t T, double alpha_in, OuterOptimizer& opt, double alpha_deploy,
                         const Vec& lambda0, const Vec& theta0, const OnlineOptions& options = {}) {
  HPO_REQUIRE(T >= 1, "T must be >= 1");
  HPO_REQUIRE(!splits.empty(), "need at least one split");
  HPO_REQUIRE(alpha_in > 0.0, "alpha_in must be > 0");
  HPO_REQUIRE(alpha_deploy > 0.0, "alpha_deploy must be > 0");
  HPO_REQUIRE(lambda0.size() == problem.hyper_dim(), "lambda0 has wrong length");
  HPO_REQUIRE(theta0.size() == problem.param_dim(), "theta0 has wrong length");

  const std::size_t U = splits.size();
  const IndexSet all_rows = options.deploy_rows.empty() ? iota_indices(ds.size()) : options.deploy_rows;
  const DataView deploy_view(ds, all_rows);

  HPOTrace trace;
  trace.lambdas.push_back(lambda0);
  trace.split_thetas.assign(U, theta0);
  trace.deployed_theta = theta0;
  Vec lambda = lambda0;

  for (std::size_t t = 0; t < T; ++t) {
    TraceStep rec;
    rec.step = t;
    rec.lambda = lambda;
    rec.splits.resize(U);
    std::vector<Vec> grads(U);
    std::vector<Vec> shadows(U);
    parallel_for(U, options.workers, [&](std::size_t i) {
      const DataView train = splits[i].train(ds);
      const DataView val = splits[i].val(ds);
      OnlineStep s = oehg_split_hypergrad(problem, lambda, trace.split_thetas[i], train, val, alpha_in);
      if (!all_finite(s.next_theta) || !all_finite(s.hypergrad))
        throw NumericalError("oehg: non-finite shadow update", t);
      SplitRecord& sr = rec.splits[i];
      sr.hypergrad = s.hypergrad;
      sr.train_loss = problem.inner_loss(lambda, s.next_theta, train);
      sr.val_loss = problem.outer_loss(lambda, s.next_theta, val);
      if (options.test) sr.test_loss = problem.outer_loss(lambda, s.next_theta, *options.test);
      grads[i] = std::move(s.hypergrad);
      shadows[i] = std::move(s.next_theta);
    });
    rec.hypergrad = ensemble_mean(grads);
    lambda = opt.step(lambda, rec.hypergrad);
    detail::check_finite_step(lambda, "lambda", t);
    trace.split_thetas = std::move(shadows);

    axpy(-alpha_deploy, problem.inner_grad_theta(lambda, trace.deployed_theta, deploy_view), trace.deployed_theta);
    detail::check_finite_step(trace.deployed_theta, "deployed theta", t);
    if (options.test) rec.deployed_test_loss = problem.outer_loss(lambda, trace.deployed_theta, *options.test);

    trace.lambdas.push_back(lambda);
    trace.steps.push_back(std::move(rec));
  }
  return trace;
}

// Retrains from theta0 on `rows` at a fixed lambda; used to score a tuned
// lambda on held-out data.
inline Vec refit(const BilevelProblem& problem, const Vec& lambda, const Vec& theta0, const DataView& rows,
                 std::size_t K, double alpha_in) {
  return inner_solve(problem, lambda, theta0, rows, K, alpha_in).last();
}

}  // namespace hpo

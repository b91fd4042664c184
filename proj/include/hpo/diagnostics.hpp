#pragma once

// Closed-form ridge oracle, Monte-Carlo bias/variance of hypergradient
// estimators, and the finite-population check for ensembles of splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hpo/data.hpp"
#include "hpo/errors.hpp"
#include "hpo/hypergrad.hpp"
#include "hpo/linalg.hpp"
#include "hpo/parallel.hpp"
#include "hpo/problems.hpp"
#include "hpo/rng.hpp"
#include "hpo/strategies.hpp"

namespace hpo {

// Ridge with mean-normalised loss (1/m)||X theta - y||^2 + lambda ||theta||^2.
class RidgeOracle {
 public:
  RidgeOracle(const DataView& train, const DataView& val) : train_(train), val_(val) {
    HPO_REQUIRE(train.size() >= 1 && val.size() >= 1, "ridge oracle needs nonempty train and val");
    HPO_REQUIRE(train.dim() == val.dim(), "train/val feature dims differ");
    const std::size_t d = train.dim();
    const double inv_m = 1.0 / static_cast<double>(train.size());
    gram_ = Mat(d, d);
    xty_.assign(d, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto x = train.x(i);
      for (std::size_t a = 0; a < d; ++a) {
        xty_[a] += x[a] * train.y(i) * inv_m;
        for (std::size_t b = 0; b < d; ++b) gram_(a, b) += x[a] * x[b] * inv_m;
      }
    }
  }

  std::size_t dim() const { return xty_.size(); }

  // (X'X/m + lambda I)^{-1} X'y/m
  Vec theta(double lambda_eff) const {
    HPO_REQUIRE(lambda_eff >= 0.0, "lambda_eff must be >= 0");
    return dense_solve(system(lambda_eff), xty_);
  }

  double val_loss(double lambda_eff) const { return loss_on(val_, theta(lambda_eff)); }

  // d val_loss / d lambda_eff
  double hypergrad(double lambda_eff) const {
    const Mat A = system(lambda_eff);
    const Vec th = dense_solve(A, xty_);
    const Vec dth = scale(-1.0, dense_solve(A, th));
    const double inv_m = 1.0 / static_cast<double>(val_.size());
    double g = 0.0;
    for (std::size_t i = 0; i < val_.size(); ++i) {
      const auto x = val_.x(i);
      g += 2.0 * inv_m * (dot(x, th) - val_.y(i)) * dot(x, dth);
    }
    return g;
  }

  // Derivative in the raw coordinate u with lambda_eff = e^u.
  double hypergrad_raw(double u) const {
    const double l = std::exp(u);
    return l * hypergrad(l);
  }

 private:
  Mat system(double lambda_eff) const {
    Mat A = gram_;
    for (std::size_t a = 0; a < dim(); ++a) A(a, a) += lambda_eff;
    return A;
  }

  static double loss_on(const DataView& d, const Vec& th) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double r = dot(d.x(i), th) - d.y(i);
      s += r * r;
    }
    return s / static_cast<double>(d.size());
  }

  DataView train_, val_;
  Mat gram_;
  Vec xty_;
};

inline Vec ridge_closed_form(const DataView& train, double lambda_eff) {
  return RidgeOracle(train, train).theta(lambda_eff);
}

inline double ridge_exact_hypergrad(const DataView& train, const DataView& val, double lambda_eff) {
  return RidgeOracle(train, val).hypergrad(lambda_eff);
}

// ---------------------------------------------------------------------------
// bias / variance sweep

struct LinearGenerator {
  std::size_t n = 100;
  std::size_t d = 1;
  double noise_sigma = 0.1;
  std::uint64_t beta_seed = 0;
};

struct BiasVarianceConfig {
  LinearGenerator data;
  ModelSpec model;
  std::optional<HypergradMethod> method;  // nullopt: the reference estimator itself
  Vec grid;                               // effective lambda values
  std::size_t R = 100;
  std::size_t U = 1;
  double gamma = 0.25;
  SplitMode mode = SplitMode::without_replacement;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t reference_K = 2000;  // non-ridge reference: long ITD
};

struct BiasVariancePoint {
  double lambda = 0.0;
  double error = 0.0;     // mean ||g_hat - g_bar||^2
  double variance = 0.0;  // mean ||g_hat - g_tilde||^2
  double bias_sq = 0.0;   // ||g_tilde - g_bar||^2
  double identity_residual = 0.0;
};

struct BiasVarianceReport {
  std::size_t R = 0;
  std::size_t U = 0;
  std::vector<BiasVariancePoint> points;
};

// Statistics of R estimates against the reference mean; g_tilde is the sample
// mean of the estimates so error = variance + bias_sq up to rounding.
inline BiasVariancePoint decompose(double lambda, const std::vector<Vec>& est, const std::vector<Vec>& ref) {
  HPO_REQUIRE(est.size() >= 2 && est.size() == ref.size(), "decompose needs R >= 2 matched replicates");
  const Vec g_tilde = ensemble_mean(est);
  const Vec g_bar = ensemble_mean(ref);
  BiasVariancePoint pt;
  pt.lambda = lambda;
  const double R = static_cast<double>(est.size());
  for (const Vec& g : est) {
    const Vec e = sub(g, g_bar);
    const Vec v = sub(g, g_tilde);
    pt.error += dot(e, e) / R;
    pt.variance += dot(v, v) / R;
  }
  const Vec b = sub(g_tilde, g_bar);
  pt.bias_sq = dot(b, b);
  pt.identity_residual = std::abs(pt.error - pt.variance - pt.bias_sq);
  return pt;
}

// Grid values are natural regularisation strengths; most models optimise
// log(lambda), per-parameter ridge optimises the multiplier itself.
inline double raw_from_effective(ModelKind kind, double lambda_eff) {
  return kind == ModelKind::ridge_per_param ? lambda_eff : std::log(lambda_eff);
}

namespace detail {

inline Vec reference_hypergrad(const BilevelProblem& problem, ModelKind kind, const Vec& lambda, const Vec& theta0,
                               const DataView& train, const DataView& val, std::size_t reference_K) {
  if (kind == ModelKind::ridge) return {RidgeOracle(train, val).hypergrad_raw(lambda[0])};
  const InnerCurvature c = estimate_curvature(problem, lambda, theta0, train);
  const InnerTrajectory traj = inner_solve(problem, lambda, theta0, train, reference_K, c.alpha_in);
  return itd_hypergrad(problem, lambda, traj, train, val).grad;
}

}  // namespace detail

// Replicate j draws a fresh dataset (beta fixed by beta_seed) and U splits;
// the same draws are reused at every grid point.
inline BiasVarianceReport bias_variance_sweep(const BiasVarianceConfig& cfg) {
  if (cfg.R < 2) throw ConfigError("biasvar.R", "must be >= 2");
  if (cfg.U < 1) throw ConfigError("split.U", "must be >= 1");
  if (cfg.grid.empty()) throw ConfigError("biasvar.grid", "empty grid");
  for (double l : cfg.grid)
    if (!(l > 0.0)) throw ConfigError("biasvar.grid", "lambda values must be > 0");
  if (cfg.method) cfg.method->validate();

  const ProblemPtr problem = build_problem(cfg.model, cfg.data.d);
  if (required_task(cfg.model.kind) != TaskKind::regression)
    throw ConfigError("problem.kind", "bias/variance sweep uses the linear generator; needs a regression model");

  std::vector<Dataset> datasets(cfg.R);
  std::vector<std::vector<Split>> split_sets(cfg.R);
  for (std::size_t j = 0; j < cfg.R; ++j) {
    datasets[j] = gen_linear(cfg.data.n, cfg.data.d, cfg.data.beta_seed, cfg.data.noise_sigma,
                             derive_seed(cfg.seed, 2 * j)).data;
    SplitPlan plan;
    plan.U = cfg.U;
    plan.gamma = cfg.gamma;
    plan.mode = cfg.mode;
    plan.master_seed = derive_seed(cfg.seed, 2 * j + 1);
    split_sets[j] = make_splits(cfg.data.n, plan);
  }

  const Vec theta0(problem->param_dim(), 0.0);
  BiasVarianceReport rep;
  rep.R = cfg.R;
  rep.U = cfg.U;
  for (double lam_eff : cfg.grid) {
    const Vec lambda(problem->hyper_dim(), raw_from_effective(cfg.model.kind, lam_eff));
    std::vector<Vec> est(cfg.R), ref(cfg.R);
    parallel_for(cfg.R, cfg.workers, [&](std::size_t j) {
      const Dataset& ds = datasets[j];
      std::vector<Vec> e, r;
      for (const Split& s : split_sets[j]) {
        const DataView tr = s.train(ds), va = s.val(ds);
        r.push_back(detail::reference_hypergrad(*problem, cfg.model.kind, lambda, theta0, tr, va, cfg.reference_K));
        if (cfg.method) e.push_back(compute_hypergrad(*problem, lambda, theta0, tr, va, *cfg.method).grad);
      }
      ref[j] = ensemble_mean(r);
      est[j] = cfg.method ? ensemble_mean(e) : ref[j];
    });
    rep.points.push_back(decompose(lam_eff, est, ref));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// finite-population correction

struct FpcReport {
  std::size_t V = 0;
  std::size_t U = 0;
  std::size_t samples = 0;
  double sigma_sq = 0.0;             // population variance, denominator V
  double mc_without = 0.0;           // Monte-Carlo E||x_bar - X_bar||^2, U-subsets without replacement
  double mc_with = 0.0;              // same, U draws with replacement
  double formula_without = 0.0;      // (V-U) sigma^2 / (U (V-1))
  double formula_with = 0.0;         // sigma^2 / U
  double rel_error_without = 0.0;    // |mc - formula| / formula, 0 when both are 0
  double rel_error_with = 0.0;
};

inline double relative_gap(double mc, double formula) {
  if (formula == 0.0) return mc == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(mc - formula) / formula;
}

// `population` holds one hypergradient per distinct split.
inline FpcReport fpc_from_population(const std::vector<Vec>& population, std::size_t U, std::size_t samples,
                                     std::uint64_t seed) {
  const std::size_t V = population.size();
  HPO_REQUIRE(V >= 2, "population needs at least two members");
  if (U < 1 || U > V) throw ConfigError("fpc.U", "must be in [1, V] with V = " + std::to_string(V));
  if (samples < 1) throw ConfigError("fpc.samples", "must be >= 1");

  const Vec mean = ensemble_mean(population);
  FpcReport rep;
  rep.V = V;
  rep.U = U;
  rep.samples = samples;
  for (const Vec& x : population) {
    const Vec e = sub(x, mean);
    rep.sigma_sq += dot(e, e);
  }
  rep.sigma_sq /= static_cast<double>(V);
  const double Ud = static_cast<double>(U), Vd = static_cast<double>(V);
  rep.formula_with = rep.sigma_sq / Ud;
  rep.formula_without = (Vd - Ud) * rep.sigma_sq / (Ud * (Vd - 1.0));

  Rng rng(seed);
  std::vector<Vec> pick(U);
  for (std::size_t s = 0; s < samples; ++s) {
    IndexSet idx = rng.sample_without_replacement(V, U);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < U; ++i) pick[i] = population[idx[i]];
    Vec e = sub(ensemble_mean(pick), mean);
    rep.mc_without += dot(e, e);
    for (std::size_t i = 0; i < U; ++i) pick[i] = population[rng.below(V)];
    e = sub(ensemble_mean(pick), mean);
    rep.mc_with += dot(e, e);
  }
  rep.mc_without /= static_cast<double>(samples);
  rep.mc_with /= static_cast<double>(samples);
  rep.rel_error_without = relative_gap(rep.mc_without, rep.formula_without);
  rep.rel_error_with = relative_gap(rep.mc_with, rep.formula_with);
  return rep;
}

struct FpcConfig {
  std::size_t n = 6;
  double gamma = 0.5;
  std::size_t U = 3;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  std::size_t d = 1;
  double noise_sigma = 0.1;
  std::uint64_t beta_seed = 0;
  double lambda_raw = 0.0;
  std::optional<HypergradMethod> method;  // nullopt: exact ridge hypergradient
};

// Population = hypergradient of the ridge problem on every distinct split of
// one seeded dataset.
inline FpcReport fpc_verify(const FpcConfig& cfg) {
  const std::vector<Split> all = enumerate_all_splits(cfg.n, cfg.gamma);
  const Dataset ds = gen_linear(cfg.n, cfg.d, cfg.beta_seed, cfg.noise_sigma, cfg.seed).data;
  const ProblemPtr problem = build_problem({ModelKind::ridge}, cfg.d);
  const Vec lambda{cfg.lambda_raw};
  const Vec theta0(cfg.d, 0.0);
  std::vector<Vec> population;
  population.reserve(all.size());
  for (const Split& s : all) {
    const DataView tr = s.train(ds), va = s.val(ds);
    if (cfg.method)
      population.push_back(compute_hypergrad(*problem, lambda, theta0, tr, va, *cfg.method).grad);
    else
      population.push_back({RidgeOracle(tr, va).hypergrad_raw(cfg.lambda_raw)});
  }
  return fpc_from_population(population, cfg.U, cfg.samples, derive_seed(cfg.seed, 1));
}

}  // namespace hpo

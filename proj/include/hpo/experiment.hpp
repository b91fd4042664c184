#pragma once

// The CLI commands as library calls: each takes a resolved config, runs the
// experiment and writes its output files atomically.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hpo/config.hpp"
#include "hpo/data.hpp"
#include "hpo/diagnostics.hpp"
#include "hpo/hypergrad.hpp"
#include "hpo/io.hpp"
#include "hpo/problems.hpp"
#include "hpo/rng.hpp"
#include "hpo/strategies.hpp"

namespace hpo {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

struct RunFlags {
  std::string out_dir;  // overrides output.dir when set
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;  // replaces data.seed and split.master_seed
  bool record_time = false;           // wall-clock in the manifest breaks byte-identity
  std::ostream* log = nullptr;        // human-readable summary
};

inline ExperimentConfig apply_flags(ExperimentConfig cfg, const RunFlags& flags) {
  if (!flags.out_dir.empty()) cfg.output.dir = flags.out_dir;
  if (flags.seed) {
    cfg.data.seed = *flags.seed;
    cfg.split.master_seed = *flags.seed;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// manifest

class Manifest {
 public:
  Manifest(std::filesystem::path dir, std::string command, Json config, Json seeds, bool record_time)
      : dir_(std::move(dir)), record_time_(record_time), start_(std::chrono::steady_clock::now()) {
    doc_["tool"] = "hpo";
    doc_["version"] = kVersion;
    doc_["command"] = std::move(command);
    doc_["status"] = "running";
    doc_["seeds"] = std::move(seeds);
    doc_["config"] = std::move(config);
    doc_["outputs"] = Json::array();
    write();
  }

  void add_output(const std::string& name) { doc_["outputs"].push_back(name); }

  void finish() {
    doc_["status"] = "complete";
    if (record_time_)
      doc_["wall_clock_seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
  }

 private:
  void write() const { io::write_atomic(dir_ / "manifest.json", doc_.dump(2) + "\n"); }

  std::filesystem::path dir_;
  bool record_time_;
  std::chrono::steady_clock::time_point start_;
  Json doc_ = Json::object();
};

inline Json config_seeds(const ExperimentConfig& c) {
  return Json{{"data.seed", c.data.seed}, {"data.beta_seed", c.data.beta_seed},
              {"split.master_seed", c.split.master_seed}};
}

// ---------------------------------------------------------------------------
// data and problem assembly

struct PreparedData {
  Dataset data;  // rows visible to HPO
  std::optional<Dataset> test;
  std::vector<bool> clean_mask;  // per row of `data`; empty when unknown
  std::size_t corruptible = 0;   // leading rows that went through corruption
  IndexSet val_candidates;       // empty: any row
};

namespace detail {

inline TaskHint task_hint(const std::string& s) {
  if (s == "regression") return TaskHint::regression;
  if (s == "binary") return TaskHint::binary;
  if (s == "multiclass") return TaskHint::multiclass;
  return TaskHint::automatic;
}

inline Dataset synthetic_rows(const ExperimentConfig& c, const std::string& gen, std::size_t n,
                              std::uint64_t seed) {
  const DataConfig& d = c.data;
  if (gen == "softmax") return gen_softmax(n, d.d, d.classes, d.beta_seed, seed).data;
  Dataset ds = gen_linear(n, d.d, d.beta_seed, d.noise_sigma, seed).data;
  if (gen == "binary") {
    ds.task = TaskKind::binary;
    ds.num_classes = 2;
    for (double& y : ds.y) y = y >= 0.0 ? 1.0 : -1.0;
  }
  return ds;
}

inline std::string resolve_generator(const ExperimentConfig& c) {
  if (c.data.generator != "auto") return c.data.generator;
  switch (required_task(c.problem.kind)) {
    case TaskKind::binary: return "binary";
    case TaskKind::multiclass: return "softmax";
    default: return "linear";
  }
}

}  // namespace detail

inline PreparedData prepare_data(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  PreparedData out;
  if (d.source == "libsvm") {
    out.data = read_libsvm(d.path, detail::task_hint(d.task));
  } else {
    const std::string gen = detail::resolve_generator(c);
    out.data = detail::synthetic_rows(c, gen, d.n, d.seed);
    if (d.test_size > 0) out.test = detail::synthetic_rows(c, gen, d.test_size, derive_seed(d.seed, 1));
  }

  if (d.corrupt_p > 0.0 || d.clean_pool > 0) {
    if (out.data.task != TaskKind::multiclass)
      throw ConfigError("data.corrupt.p", "label corruption needs a multiclass dataset");
    CorruptedData cd = corrupt_labels(out.data, d.corrupt_p, derive_seed(d.seed, 3));
    out.corruptible = cd.data.size();
    out.data = std::move(cd.data);
    out.clean_mask = std::move(cd.clean_mask);
    if (d.clean_pool > 0) {
      const Dataset pool = detail::synthetic_rows(c, "softmax", d.clean_pool, derive_seed(d.seed, 2));
      const std::size_t start = out.data.size();
      out.data = concat(out.data, pool);
      out.clean_mask.resize(out.data.size(), true);
      for (std::size_t i = 0; i < d.clean_pool; ++i) out.val_candidates.push_back(start + i);
    }
  }

  if (d.test_fraction > 0.0) {
    if (!out.clean_mask.empty())
      throw ConfigError("data.test_fraction", "cannot carve a holdout from corrupted data; use test_size");
    Holdout h = carve_holdout(out.data, d.test_fraction, derive_seed(d.seed, 4));
    out.data = std::move(h.rest);
    out.test = std::move(h.test);
  }
  return out;
}

inline ProblemPtr problem_for(const ExperimentConfig& c, const Dataset& ds) {
  const TaskKind need = required_task(c.problem.kind);
  if (need != TaskKind::regression && ds.task != need)
    throw ConfigError("problem.kind", std::string(to_string(c.problem.kind)) + " needs " + to_string(need) +
                                          " labels, data is " + to_string(ds.task));
  ModelSpec spec;
  spec.kind = c.problem.kind;
  spec.smoothing_delta = c.problem.smoothing_delta;
  spec.num_classes = c.problem.num_classes > 0 ? c.problem.num_classes : std::max<std::size_t>(ds.num_classes, 2);
  if (need == TaskKind::multiclass && spec.num_classes < ds.num_classes)
    throw ConfigError("problem.num_classes", "fewer classes than the data has");
  spec.num_samples = ds.size();
  return build_problem(spec, ds.dim());
}

inline Vec resolve_lambda0(const ExperimentConfig& c, std::size_t p) {
  const Vec& l = c.strategy.lambda0;
  if (l.empty()) return Vec(p, 0.0);
  if (l.size() == 1) return Vec(p, l[0]);
  if (l.size() != p)
    throw ConfigError("strategy.lambda0", "has " + std::to_string(l.size()) + " entries, problem needs " +
                                              std::to_string(p));
  return l;
}

inline std::vector<Split> splits_for(const ExperimentConfig& c, const PreparedData& pd) {
  SplitPlan plan;
  plan.U = c.strategy.kind == StrategyKind::single ? 1 : c.split.U;
  plan.gamma = c.split.gamma;
  plan.mode = c.split.mode;
  plan.master_seed = c.split.master_seed;
  plan.val_candidates = pd.val_candidates;
  return make_splits(pd.data.size(), plan);
}

struct StrategyOutcome {
  HPOTrace trace;
  Vec final_theta;  // deployed model (oehg) or refit on all HPO rows
};

// Runs the configured strategy. Single and EHG refit the model on every HPO
// row at the final lambda with the inner budget (K, alpha_in); OEHG's
// deployed model is already trained on those rows.
inline StrategyOutcome run_strategy(const ExperimentConfig& c, const BilevelProblem& problem, const PreparedData& pd,
                                    const std::vector<Split>& splits, std::size_t workers) {
  const Vec lambda0 = resolve_lambda0(c, problem.hyper_dim());
  const Vec theta0(problem.param_dim(), 0.0);
  OuterOptimizer opt(c.strategy.outer, c.strategy.alpha_out);
  std::optional<DataView> test;
  const IndexSet test_rows = pd.test ? iota_indices(pd.test->size()) : IndexSet{};
  if (pd.test) test = DataView(*pd.test, test_rows);
  const IndexSet all_rows = iota_indices(pd.data.size());

  StrategyOutcome out;
  if (c.strategy.kind == StrategyKind::oehg) {
    OnlineOptions opts;
    opts.workers = workers;
    opts.test = test;
    opts.deploy_rows = all_rows;
    out.trace = run_oehg(problem, pd.data, splits, c.strategy.T, c.method.alpha_in, opt, c.strategy.alpha_deploy,
                         lambda0, theta0, opts);
    out.final_theta = out.trace.deployed_theta;
  } else {
    RunOptions opts;
    opts.workers = workers;
    opts.test = test;
    opts.warm_start = c.strategy.warm_start;
    out.trace = run_ehg(problem, pd.data, splits, c.method.resolve(), opt, c.strategy.T, lambda0, theta0, opts);
    out.final_theta = refit(problem, out.trace.final_lambda(), theta0, DataView(pd.data, all_rows), c.method.K,
                            c.method.alpha_in);
  }
  return out;
}

// ---------------------------------------------------------------------------
// tune

inline std::string trace_csv(const HPOTrace& trace) {
  std::string s = "step,split_id,lambda_norm,raw_lambda_json,hypergrad_norm,train_loss,val_loss,test_loss\n";
  for (const TraceStep& st : trace.steps) {
    const std::string lam_norm = io::format_double(norm(st.lambda));
    const std::string lam_json = "\"" + io::json_array(st.lambda) + "\"";
    for (std::size_t i = 0; i < st.splits.size(); ++i) {
      const SplitRecord& r = st.splits[i];
      s += std::to_string(st.step) + ',' + std::to_string(i) + ',' + lam_norm + ',' + lam_json + ',' +
           io::format_double(norm(r.hypergrad)) + ',' + io::format_double(r.train_loss) + ',' +
           io::format_double(r.val_loss) + ',' + (r.test_loss ? io::format_double(*r.test_loss) : "") + '\n';
    }
  }
  return s;
}

inline Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

struct TuneResult {
  Vec final_lambda;
  Vec final_theta;
  std::optional<double> test_loss;
  double initial_val_loss = 0.0;  // mean over splits at step 0
  double final_val_loss = 0.0;    // mean over splits at the last step
};

inline TuneResult cmd_tune(ExperimentConfig cfg, const RunFlags& flags) {
  cfg = apply_flags(std::move(cfg), flags);
  validate(cfg);
  const std::filesystem::path dir = cfg.output.dir;
  Manifest manifest(dir, "tune", to_config_text(cfg), config_seeds(cfg), flags.record_time);

  const PreparedData pd = prepare_data(cfg);
  const ProblemPtr problem = problem_for(cfg, pd.data);
  const std::vector<Split> splits = splits_for(cfg, pd);
  const StrategyOutcome run = run_strategy(cfg, *problem, pd, splits, flags.workers);

  TuneResult res;
  res.final_lambda = run.trace.final_lambda();
  res.final_theta = run.final_theta;
  const auto mean_val = [](const TraceStep& st) {
    double s = 0.0;
    for (const auto& r : st.splits) s += r.val_loss;
    return s / static_cast<double>(st.splits.size());
  };
  res.initial_val_loss = mean_val(run.trace.steps.front());
  res.final_val_loss = mean_val(run.trace.steps.back());
  if (pd.test) {
    const IndexSet rows = iota_indices(pd.test->size());
    res.test_loss = problem->outer_loss(res.final_lambda, res.final_theta, DataView(*pd.test, rows));
  }

  if (cfg.output.has("csv")) {
    io::write_atomic(dir / "trace.csv", trace_csv(run.trace));
    manifest.add_output("trace.csv");
  }
  if (cfg.output.has("json")) {
    Json f;
    f["strategy"] = to_string(cfg.strategy.kind);
    f["problem"] = problem->name();
    f["T"] = cfg.strategy.T;
    f["U"] = splits.size();
    f["lambda_raw"] = vec_json(res.final_lambda);
    f["lambda_effective"] = vec_json(problem->effective_hyper(res.final_lambda));
    f["theta"] = vec_json(res.final_theta);
    f["theta_source"] = cfg.strategy.kind == StrategyKind::oehg ? "deployed" : "refit";
    Json per_split = Json::array();
    for (const Vec& t : run.trace.split_thetas) per_split.push_back(vec_json(t));
    f["theta_per_split"] = per_split;
    f["val_loss_initial"] = res.initial_val_loss;
    f["val_loss_final"] = res.final_val_loss;
    f["test_loss"] = res.test_loss ? Json(*res.test_loss) : Json(nullptr);
    f["config"] = to_config_text(cfg);
    io::write_atomic(dir / "final.json", f.dump(2) + "\n");
    manifest.add_output("final.json");
  }
  manifest.finish();
  if (flags.log) {
    *flags.log << "tune: " << to_string(cfg.strategy.kind) << " on " << problem->name() << ", T = "
               << cfg.strategy.T << ", U = " << splits.size() << "\n"
               << "  val loss " << io::format_shortest(res.initial_val_loss) << " -> "
               << io::format_shortest(res.final_val_loss) << "\n";
    if (res.test_loss) *flags.log << "  test loss " << io::format_shortest(*res.test_loss) << "\n";
    *flags.log << "  wrote " << dir.string() << "\n";
  }
  return res;
}

// ---------------------------------------------------------------------------
// biasvar

inline std::string biasvar_csv(const BiasVarianceReport& rep) {
  std::string s = "lambda,error,variance,bias_sq,identity_residual,R,U\n";
  for (const auto& p : rep.points)
    s += io::format_double(p.lambda) + ',' + io::format_double(p.error) + ',' + io::format_double(p.variance) + ',' +
         io::format_double(p.bias_sq) + ',' + io::format_double(p.identity_residual) + ',' + std::to_string(rep.R) +
         ',' + std::to_string(rep.U) + '\n';
  return s;
}

inline BiasVarianceConfig biasvar_setup(const ExperimentConfig& cfg, std::size_t workers) {
  if (cfg.data.source != "synthetic")
    throw ConfigError("data.source", "biasvar redraws datasets and needs synthetic data");
  if (cfg.biasvar.grid.empty()) throw ConfigError("biasvar.grid", "required");
  BiasVarianceConfig b;
  b.data = {cfg.data.n, cfg.data.d, cfg.data.noise_sigma, cfg.data.beta_seed};
  b.model.kind = cfg.problem.kind;
  b.model.smoothing_delta = cfg.problem.smoothing_delta;
  if (cfg.biasvar.estimator == "method") b.method = cfg.method.resolve();
  b.grid = cfg.biasvar.grid;
  b.R = cfg.biasvar.R;
  b.U = cfg.split.U;
  b.gamma = cfg.split.gamma;
  b.mode = cfg.split.mode;
  b.seed = derive_seed(cfg.data.seed, cfg.split.master_seed);
  b.workers = workers;
  b.reference_K = cfg.biasvar.reference_K;
  return b;
}

inline BiasVarianceReport cmd_biasvar(ExperimentConfig cfg, const RunFlags& flags) {
  cfg = apply_flags(std::move(cfg), flags);
  validate(cfg);
  const std::filesystem::path dir = cfg.output.dir;
  Manifest manifest(dir, "biasvar", to_config_text(cfg), config_seeds(cfg), flags.record_time);
  const BiasVarianceReport rep = bias_variance_sweep(biasvar_setup(cfg, flags.workers));
  io::write_atomic(dir / "biasvar.csv", biasvar_csv(rep));
  manifest.add_output("biasvar.csv");
  manifest.finish();
  if (flags.log) {
    double worst = 0.0;
    std::size_t var_dominates = 0;
    for (const auto& p : rep.points) {
      worst = std::max(worst, p.identity_residual);
      if (p.variance >= p.bias_sq) ++var_dominates;
    }
    *flags.log << "biasvar: " << rep.points.size() << " grid points, R = " << rep.R << ", U = " << rep.U << "\n"
               << "  max identity residual " << io::format_shortest(worst) << "\n"
               << "  variance >= bias^2 at " << var_dominates << "/" << rep.points.size() << " points\n";
  }
  return rep;
}

// ---------------------------------------------------------------------------
// clean

struct CleanReport {
  std::optional<double> f1;  // positive class = corrupted sample
  std::optional<double> precision;
  std::optional<double> recall;
  std::string f1_note;
  std::optional<double> test_accuracy;
  std::optional<double> baseline_test_accuracy;
  double mean_weight_clean = 0.0;
  double mean_weight_corrupted = 0.0;
  std::size_t corrupted = 0;
  Vec raw_weights;
};

// Share of rows whose arg-max score matches the label.
inline double accuracy(const Dataset& ds, const Vec& theta) {
  const std::size_t k = theta.size() / ds.dim();
  HPO_REQUIRE(k >= 2 && k * ds.dim() == theta.size(), "accuracy needs a multiclass parameter layout");
  std::size_t hit = 0;
  Vec z(k);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t j = 0; j < ds.dim(); ++j)
      for (std::size_t c = 0; c < k; ++c) z[c] += ds.X(i, j) * theta[j * k + c];
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (static_cast<double>(best) == ds.y[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

// Baseline: the same training budget with the weights frozen at lambda0.
inline Vec train_without_cleaning(const ExperimentConfig& c, const BilevelProblem& problem, const Dataset& ds) {
  const Vec lambda0 = resolve_lambda0(c, problem.hyper_dim());
  Vec theta(problem.param_dim(), 0.0);
  const IndexSet rows = iota_indices(ds.size());
  const DataView all(ds, rows);
  if (c.strategy.kind == StrategyKind::oehg) {
    for (std::size_t t = 0; t < c.strategy.T; ++t)
      axpy(-c.strategy.alpha_deploy, problem.inner_grad_theta(lambda0, theta, all), theta);
    return theta;
  }
  return refit(problem, lambda0, theta, all, c.method.K, c.method.alpha_in);
}

inline CleanReport cmd_clean(ExperimentConfig cfg, const RunFlags& flags) {
  cfg = apply_flags(std::move(cfg), flags);
  validate(cfg);
  if (cfg.problem.kind != ModelKind::hyperclean_softmax)
    throw ConfigError("problem.kind", "clean needs hyperclean_softmax");
  const std::filesystem::path dir = cfg.output.dir;
  Manifest manifest(dir, "clean", to_config_text(cfg), config_seeds(cfg), flags.record_time);

  const PreparedData pd = prepare_data(cfg);
  const ProblemPtr problem = problem_for(cfg, pd.data);
  const std::vector<Split> splits = splits_for(cfg, pd);
  const StrategyOutcome run = run_strategy(cfg, *problem, pd, splits, flags.workers);

  CleanReport rep;
  rep.raw_weights = run.trace.final_lambda();
  const std::size_t n = pd.data.size();
  const bool have_mask = !pd.clean_mask.empty();
  if (have_mask) {
    std::size_t tp = 0, fp = 0, fn = 0, n_clean = 0;
    double w_clean = 0.0, w_bad = 0.0;
    for (std::size_t i = 0; i < pd.corruptible; ++i) {
      const double w = loss::sigmoid(rep.raw_weights[i]);
      const bool corrupted = !pd.clean_mask[i];
      const bool flagged = w < 0.5;
      if (corrupted) {
        ++rep.corrupted;
        w_bad += w;
      } else {
        ++n_clean;
        w_clean += w;
      }
      tp += corrupted && flagged;
      fp += !corrupted && flagged;
      fn += corrupted && !flagged;
    }
    rep.mean_weight_clean = n_clean ? w_clean / static_cast<double>(n_clean) : 0.0;
    rep.mean_weight_corrupted = rep.corrupted ? w_bad / static_cast<double>(rep.corrupted) : 0.0;
    if (rep.corrupted == 0) {
      rep.f1_note = "not applicable: no corrupted samples";
    } else {
      const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
      rep.precision = prec;
      rep.recall = rec;
      rep.f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
  } else {
    rep.f1_note = "omitted: no corruption mask for this data";
    if (flags.log) *flags.log << "warning: " << rep.f1_note << "\n";
  }
  if (pd.test) {
    rep.test_accuracy = accuracy(*pd.test, run.final_theta);
    rep.baseline_test_accuracy = accuracy(*pd.test, train_without_cleaning(cfg, *problem, pd.data));
  }

  std::string w = "sample_id,raw_weight,sigmoid_weight,is_clean_truth\n";
  for (std::size_t i = 0; i < n; ++i)
    w += std::to_string(i) + ',' + io::format_double(rep.raw_weights[i]) + ',' +
         io::format_double(loss::sigmoid(rep.raw_weights[i])) + ',' +
         (have_mask ? (pd.clean_mask[i] ? "1" : "0") : "") + '\n';
  io::write_atomic(dir / "weights.csv", w);
  manifest.add_output("weights.csv");

  const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["strategy"] = to_string(cfg.strategy.kind);
  j["samples"] = n;
  j["corruptible_samples"] = pd.corruptible;
  j["corrupted_samples"] = rep.corrupted;
  j["f1"] = opt(rep.f1);
  j["precision"] = opt(rep.precision);
  j["recall"] = opt(rep.recall);
  j["f1_note"] = rep.f1_note;
  j["mean_weight_clean"] = rep.mean_weight_clean;
  j["mean_weight_corrupted"] = rep.mean_weight_corrupted;
  j["test_accuracy"] = opt(rep.test_accuracy);
  j["baseline_test_accuracy"] = opt(rep.baseline_test_accuracy);
  io::write_atomic(dir / "clean.json", j.dump(2) + "\n");
  manifest.add_output("clean.json");
  manifest.finish();

  if (flags.log) {
    *flags.log << "clean: " << n << " samples, " << rep.corrupted << " corrupted\n";
    if (rep.f1) *flags.log << "  F1 " << io::format_shortest(*rep.f1) << "\n";
    else *flags.log << "  F1 " << rep.f1_note << "\n";
    if (rep.test_accuracy)
      *flags.log << "  test accuracy " << io::format_shortest(*rep.test_accuracy) << " (uncleaned "
                 << io::format_shortest(*rep.baseline_test_accuracy) << ")\n";
  }
  return rep;
}

// ---------------------------------------------------------------------------
// fpc

struct FpcArgs {
  std::size_t n = 6;
  double gamma = 0.5;
  std::size_t U = 3;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

inline FpcReport cmd_fpc(const FpcArgs& a, const std::string& out_dir, std::ostream* log, bool record_time = false) {
  if (a.samples < 1) throw ConfigError("fpc.samples", "must be >= 1");
  if (!(a.gamma > 0.0 && a.gamma <= 1.0)) throw ConfigError("fpc.gamma", "must be in (0, 1]");
  if (a.n < 2) throw ConfigError("fpc.n", "must be >= 2");
  const std::filesystem::path dir = out_dir;
  Json args{{"n", a.n}, {"gamma", a.gamma}, {"U", a.U}, {"samples", a.samples}, {"seed", a.seed}};
  Manifest manifest(dir, "fpc", args, Json{{"seed", a.seed}}, record_time);

  FpcConfig cfg;
  cfg.n = a.n;
  cfg.gamma = a.gamma;
  cfg.U = a.U;
  cfg.samples = a.samples;
  cfg.seed = a.seed;
  const FpcReport r = fpc_verify(cfg);

  std::string csv =
      "V,U,samples,sigma_sq,mc_without,formula_without,rel_error_without,mc_with,formula_with,rel_error_with\n";
  csv += std::to_string(r.V) + ',' + std::to_string(r.U) + ',' + std::to_string(r.samples) + ',' +
         io::format_double(r.sigma_sq) + ',' + io::format_double(r.mc_without) + ',' +
         io::format_double(r.formula_without) + ',' + io::format_double(r.rel_error_without) + ',' +
         io::format_double(r.mc_with) + ',' + io::format_double(r.formula_with) + ',' +
         io::format_double(r.rel_error_with) + '\n';
  io::write_atomic(dir / "fpc.csv", csv);
  manifest.add_output("fpc.csv");
  manifest.finish();
  if (log) {
    *log << "fpc: V = " << r.V << " splits, U = " << r.U << ", " << r.samples << " draws\n"
         << "  population variance      " << io::format_shortest(r.sigma_sq) << "\n"
         << "  without replacement  mc  " << io::format_shortest(r.mc_without) << "  formula "
         << io::format_shortest(r.formula_without) << "  rel.err " << io::format_shortest(r.rel_error_without)
         << "\n"
         << "  with replacement     mc  " << io::format_shortest(r.mc_with) << "  formula "
         << io::format_shortest(r.formula_with) << "  rel.err " << io::format_shortest(r.rel_error_with) << "\n";
  }
  return r;
}

// ---------------------------------------------------------------------------
// check

struct CheckCase {
  std::string name;
  ProblemPtr problem;
  Dataset data;
  Split split;
  bool ridge_oracle = false;
};

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return error < tolerance; }
};

struct CheckReport {
  std::vector<CheckResult> checks;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass(); });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (!c.pass()) out.push_back(c.name);
    return out;
  }
};

// Problem and data for every model kind at check scale.
inline std::vector<CheckCase> default_check_cases(const CheckConfig& cc) {
  std::vector<CheckCase> out;
  const std::size_t n = cc.n, d = cc.d;
  for (ModelKind kind : kAllModelKinds) {
    CheckCase c;
    c.name = to_string(kind);
    const std::uint64_t seed = derive_seed(cc.seed, static_cast<std::uint64_t>(kind));
    switch (required_task(kind)) {
      case TaskKind::multiclass: c.data = gen_softmax(n, d, 3, seed, derive_seed(seed, 1)).data; break;
      case TaskKind::binary: {
        c.data = gen_linear(n, d, seed, 0.5, derive_seed(seed, 1)).data;
        c.data.task = TaskKind::binary;
        c.data.num_classes = 2;
        for (double& y : c.data.y) y = y >= 0.0 ? 1.0 : -1.0;
        break;
      }
      default: c.data = gen_linear(n, d, seed, 0.1, derive_seed(seed, 1)).data;
    }
    ModelSpec spec;
    spec.kind = kind;
    spec.smoothing_delta = 0.1;
    spec.num_classes = 3;
    spec.num_samples = n;
    c.problem = build_problem(spec, d);
    SplitPlan plan;
    plan.U = 1;
    plan.gamma = 0.5;
    plan.master_seed = derive_seed(seed, 2);
    c.split = make_splits(n, plan).front();
    c.ridge_oracle = kind == ModelKind::ridge;
    out.push_back(std::move(c));
  }
  return out;
}

// Gaussian probe of the given spread.
inline Vec random_vec(Rng& rng, std::size_t n, double sigma) {
  Vec v(n);
  for (double& x : v) x = sigma * rng.normal();
  return v;
}

// Max over probes of ||ITD - finite differences|| / max(1, ||FD||) for the
// unrolled objective with K inner steps. Step size comes from the curvature
// at the probe's starting point, halved.
inline double itd_fd_error(const BilevelProblem& problem, const DataView& train, const DataView& val, std::size_t K,
                           std::size_t probes, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < probes; ++t) {
    const Vec lambda = random_vec(rng, problem.hyper_dim(), 0.5);
    const Vec theta0 = random_vec(rng, problem.param_dim(), 0.5);
    const double alpha = std::min(0.1, 0.5 * estimate_curvature(problem, lambda, theta0, train).alpha_in);
    const InnerTrajectory traj = inner_solve(problem, lambda, theta0, train, K, alpha);
    const Vec itd = itd_hypergrad(problem, lambda, traj, train, val).grad;
    const Vec fd = finite_diff_hypergrad(problem, lambda, theta0, train, val, K, alpha, 1e-5);
    worst = std::max(worst, relative_error(itd, fd));
  }
  return worst;
}

// Max over probes of the gap between the online per-split hypergradient and
// one-step ITD from the same shadow state.
inline double oehg_one_step_error(const BilevelProblem& problem, const DataView& train, const DataView& val,
                                  std::size_t probes, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < probes; ++t) {
    const Vec lambda = random_vec(rng, problem.hyper_dim(), 0.5);
    const Vec shadow = random_vec(rng, problem.param_dim(), 0.5);
    const double alpha = 0.05;
    const Vec online = oehg_split_hypergrad(problem, lambda, shadow, train, val, alpha).hypergrad;
    const Vec itd = itd_hypergrad(problem, lambda, inner_solve(problem, lambda, shadow, train, 1, alpha), train, val).grad;
    worst = std::max(worst, relative_error(online, itd));
  }
  return worst;
}

// AID-CG at the closed-form ridge optimum against the exact hypergradient.
inline double aid_oracle_error(const BilevelProblem& problem, const DataView& train, const DataView& val,
                               std::size_t probes, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < probes; ++t) {
    const Vec lambda{0.5 * rng.normal()};
    const RidgeOracle oracle(train, val);
    const Vec theta = oracle.theta(std::exp(lambda[0]));
    const Vec aid = aid_hypergrad(problem, lambda, theta, train, val, LinearSolver::conjugate_gradient,
                                  problem.param_dim(), 0.0, 0.0)
                        .grad;
    worst = std::max(worst, relative_error(aid, Vec{oracle.hypergrad_raw(lambda[0])}));
  }
  return worst;
}

// FNV-1a, stable across platforms.
inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline CheckReport run_checks(const std::vector<CheckCase>& cases, const CheckConfig& cc) {
  CheckReport rep;
  for (const CheckCase& c : cases) {
    const DataView train = c.split.train(c.data), val = c.split.val(c.data);
    const std::uint64_t seed = derive_seed(cc.seed, name_hash(c.name));
    const DerivativeReport dr = verify_derivatives(*c.problem, train, val, cc.trials, seed);
    for (const auto& ch : dr.checks)
      rep.checks.push_back({c.name + "/derivative/" + ch.name, ch.max_rel_error, dr.tolerance});
    for (std::size_t K : {1, 5, 20})
      rep.checks.push_back({c.name + "/itd_vs_fd/K=" + std::to_string(K),
                            itd_fd_error(*c.problem, train, val, K, 3, derive_seed(seed, K)), 1e-4});
    rep.checks.push_back(
        {c.name + "/oehg_one_step", oehg_one_step_error(*c.problem, train, val, 5, derive_seed(seed, 100)), 1e-10});
    if (c.ridge_oracle)
      rep.checks.push_back(
          {c.name + "/aid_vs_oracle", aid_oracle_error(*c.problem, train, val, 5, derive_seed(seed, 101)), 1e-6});
  }
  return rep;
}

inline Json check_json(const CheckReport& rep) {
  Json j;
  j["pass"] = rep.pass();
  j["failures"] = rep.failures();
  Json arr = Json::array();
  for (const auto& c : rep.checks)
    arr.push_back(Json{{"name", c.name}, {"error", c.error}, {"tolerance", c.tolerance}, {"pass", c.pass()}});
  j["checks"] = arr;
  return j;
}

inline CheckReport cmd_check(ExperimentConfig cfg, const RunFlags& flags,
                             const std::vector<CheckCase>* cases_override = nullptr) {
  cfg = apply_flags(std::move(cfg), flags);
  if (flags.seed) cfg.check.seed = *flags.seed;
  validate(cfg);
  const std::filesystem::path dir = cfg.output.dir;
  Manifest manifest(dir, "check", to_config_text(cfg), Json{{"check.seed", cfg.check.seed}}, flags.record_time);
  const std::vector<CheckCase> cases = cases_override ? *cases_override : default_check_cases(cfg.check);
  const CheckReport rep = run_checks(cases, cfg.check);
  io::write_atomic(dir / "check.json", check_json(rep).dump(2) + "\n");
  manifest.add_output("check.json");
  manifest.finish();
  if (flags.log) {
    for (const auto& c : rep.checks)
      *flags.log << (c.pass() ? "  ok    " : "  FAIL  ") << c.name << "  " << io::format_shortest(c.error) << " (< "
                 << io::format_shortest(c.tolerance) << ")\n";
    *flags.log << (rep.pass() ? "check: all passed\n" : "check: failures\n");
  }
  return rep;
}

}  // namespace hpo

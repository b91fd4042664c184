#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "hpo/experiment.hpp"
#include "hpo/parallel.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3 };

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const hpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const hpo::ParseError& e) {
    std::cerr << "config parse error: " << e.what() << "\n";
    return kConfig;
  } catch (const hpo::NumericalError& e) {
    std::cerr << "numerical error at step " << e.step() << ": " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based hyperparameter optimisation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::size_t workers = hpo::default_workers();
  std::optional<std::uint64_t> seed;
  bool record_time = false;

  const auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "Experiment config file");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--workers", workers, "Worker threads (default: HPO_WORKERS or 1)")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Replace data.seed and split.master_seed");
    sub->add_flag("--record-time", record_time, "Record wall-clock time in manifest.json");
  };

  auto* tune = app.add_subcommand("tune", "Run the configured HPO strategy");
  common(tune, true);
  auto* biasvar = app.add_subcommand("biasvar", "Bias/variance sweep of a hypergradient estimator");
  common(biasvar, true);
  auto* clean = app.add_subcommand("clean", "Data hyper-cleaning with per-sample weights");
  common(clean, true);
  auto* check = app.add_subcommand("check", "Derivative and estimator self-checks");
  common(check, false);

  hpo::FpcArgs fpc_args;
  auto* fpc = app.add_subcommand("fpc", "Finite-population check of ensemble sampling error");
  fpc->add_option("--n", fpc_args.n, "Dataset size")->capture_default_str();
  fpc->add_option("--gamma", fpc_args.gamma, "Validation/train ratio")->capture_default_str();
  fpc->add_option("-U,--U", fpc_args.U, "Splits per ensemble")->capture_default_str();
  fpc->add_option("--samples", fpc_args.samples, "Monte-Carlo draws")->capture_default_str();
  fpc->add_option("--seed", fpc_args.seed, "Seed")->capture_default_str();
  fpc->add_option("--out", out_dir, "Output directory")->required();
  fpc->add_flag("--record-time", record_time, "Record wall-clock time in manifest.json");

  CLI11_PARSE(app, argc, argv);

  return guarded([&]() -> int {
    hpo::RunFlags flags;
    flags.out_dir = out_dir;
    flags.workers = workers;
    flags.seed = seed;
    flags.record_time = record_time;
    flags.log = &std::cout;

    if (fpc->parsed()) {
      hpo::cmd_fpc(fpc_args, out_dir, &std::cout, record_time);
      return kOk;
    }
    hpo::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = hpo::load_experiment_config(config_path);
    if (tune->parsed()) {
      hpo::cmd_tune(cfg, flags);
    } else if (biasvar->parsed()) {
      hpo::cmd_biasvar(cfg, flags);
    } else if (clean->parsed()) {
      hpo::cmd_clean(cfg, flags);
    } else if (check->parsed()) {
      const hpo::CheckReport rep = hpo::cmd_check(cfg, flags);
      if (!rep.pass()) {
        std::cerr << "failed checks:\n";
        for (const auto& f : rep.failures()) std::cerr << "  " << f << "\n";
        return kFailure;
      }
    }
    return kOk;
  });
}

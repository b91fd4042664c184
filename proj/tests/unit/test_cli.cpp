#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "hpo/experiment.hpp"

using namespace hpo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hpo_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

RunFlags flags_for(const fs::path& dir) {
  RunFlags f;
  f.out_dir = dir.string();
  return f;
}

ExperimentConfig small_tune() {
  return parse_experiment_config(
      "[data]\nn = 60\nd = 3\nseed = 2\ntest_size = 40\n"
      "[split]\nU = 3\ngamma = 0.5\n"
      "[method]\nK = 20\nalpha_in = 0.1\n"
      "[strategy]\nkind = ehg\nT = 5\n[strategy.outer]\nalpha_out = 0.1\n");
}

ExperimentConfig small_clean() {
  return parse_experiment_config(
      "[data]\nn = 60\nd = 3\nclasses = 3\nseed = 1\ntest_size = 50\n"
      "[data.corrupt]\np = 0.4\nclean_pool = 20\n"
      "[split]\nU = 2\ngamma = 0.25\n"
      "[problem]\nkind = hyperclean_softmax\n"
      "[method]\nK = 20\nalpha_in = 0.5\n"
      "[strategy]\nkind = ehg\nT = 5\n[strategy.outer]\nalpha_out = 1.0\n");
}

#ifdef HPO_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(HPO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(Tune, WritesOutputsAndManifest) {
  const fs::path dir = scratch("tune");
  const TuneResult r = cmd_tune(small_tune(), flags_for(dir));
  EXPECT_TRUE(fs::exists(dir / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "final.json"));
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["command"], "tune");
  EXPECT_FALSE(manifest.contains("wall_clock_seconds"));
  const auto fin = nlohmann::json::parse(io::read_file(dir / "final.json"));
  EXPECT_EQ(fin["theta_source"], "refit");
  EXPECT_EQ(fin["U"], 3);
  ASSERT_TRUE(r.test_loss.has_value());
  // header + T * U rows
  std::istringstream csv(io::read_file(dir / "trace.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 1u + 5u * 3u);
}

TEST(Tune, ByteIdenticalReruns) {
  const fs::path dir = scratch("tune_rerun");
  cmd_tune(small_tune(), flags_for(dir));
  std::map<std::string, std::string> first;
  for (const char* f : {"trace.csv", "final.json", "manifest.json"}) first[f] = io::read_file(dir / f);
  RunFlags again = flags_for(dir);
  again.workers = 3;
  cmd_tune(small_tune(), again);
  for (const auto& [f, text] : first) EXPECT_EQ(io::read_file(dir / f), text) << f;
}

TEST(Tune, SeedFlagChangesData) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  cmd_tune(small_tune(), flags_for(a));
  RunFlags fb = flags_for(b);
  fb.seed = 99;
  cmd_tune(small_tune(), fb);
  EXPECT_NE(io::read_file(a / "trace.csv"), io::read_file(b / "trace.csv"));
}

TEST(Tune, RecordTimeAddsWallClock) {
  const fs::path dir = scratch("tune_time");
  RunFlags f = flags_for(dir);
  f.record_time = true;
  cmd_tune(small_tune(), f);
  EXPECT_TRUE(nlohmann::json::parse(io::read_file(dir / "manifest.json")).contains("wall_clock_seconds"));
}

TEST(Tune, OnlineStrategyReportsDeployedTheta) {
  ExperimentConfig c = small_tune();
  c.strategy.kind = StrategyKind::oehg;
  c.strategy.T = 20;
  const fs::path dir = scratch("tune_oehg");
  cmd_tune(c, flags_for(dir));
  EXPECT_EQ(nlohmann::json::parse(io::read_file(dir / "final.json"))["theta_source"], "deployed");
}

TEST(Tune, FormatsSelectOutputs) {
  ExperimentConfig c = small_tune();
  c.output.formats = {"json"};
  const fs::path dir = scratch("tune_fmt");
  cmd_tune(c, flags_for(dir));
  EXPECT_FALSE(fs::exists(dir / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "final.json"));
}

TEST(Tune, LibsvmInput) {
  const fs::path dir = scratch("tune_libsvm");
  fs::create_directories(dir);
  std::ofstream(dir / "data.txt") << "1.0 1:1 2:0.5\n2.1 1:2 2:0.1\n0.4 1:0.5 2:-1\n1.6 1:1.5\n"
                                     "0.9 1:1 2:0.2\n2.4 1:2.5 2:1\n";
  ExperimentConfig c = small_tune();
  c.data.source = "libsvm";
  c.data.path = (dir / "data.txt").string();
  c.data.test_size = 0;
  c.split.U = 2;
  const TuneResult r = cmd_tune(c, flags_for(dir / "out"));
  EXPECT_EQ(r.final_theta.size(), 2u);
}

TEST(Biasvar, WritesOneRowPerGridPointAndRepeats) {
  ExperimentConfig c = parse_experiment_config(
      "[data]\nn = 30\nd = 2\n[split]\nU = 2\n[method]\nK = 10\n[biasvar]\ngrid = \"0.1:1:3\"\nR = 5\n");
  const fs::path dir = scratch("bv");
  const BiasVarianceReport rep = cmd_biasvar(c, flags_for(dir));
  EXPECT_EQ(rep.points.size(), 3u);
  const std::string first = io::read_file(dir / "biasvar.csv");
  RunFlags again = flags_for(dir);
  again.workers = 2;
  cmd_biasvar(c, again);
  EXPECT_EQ(io::read_file(dir / "biasvar.csv"), first);
}

TEST(Biasvar, NeedsGrid) {
  EXPECT_THROW(cmd_biasvar(ExperimentConfig{}, flags_for(scratch("bv_nogrid"))), ConfigError);
}

TEST(Clean, ReportsF1AndWeights) {
  const fs::path dir = scratch("clean");
  const CleanReport rep = cmd_clean(small_clean(), flags_for(dir));
  EXPECT_TRUE(rep.f1.has_value());
  EXPECT_GT(rep.corrupted, 0u);
  EXPECT_TRUE(rep.test_accuracy.has_value());
  EXPECT_TRUE(fs::exists(dir / "weights.csv"));
  const auto j = nlohmann::json::parse(io::read_file(dir / "clean.json"));
  EXPECT_EQ(j["samples"], 80);
  EXPECT_EQ(j["corruptible_samples"], 60);
}

TEST(Clean, NoCorruptionMeansF1NotApplicable) {
  ExperimentConfig c = small_clean();
  c.data.corrupt_p = 0.0;
  const CleanReport rep = cmd_clean(c, flags_for(scratch("clean_nocorrupt")));
  EXPECT_FALSE(rep.f1.has_value());
  EXPECT_NE(rep.f1_note.find("not applicable"), std::string::npos);
}

TEST(Clean, RequiresWeightedModel) {
  EXPECT_THROW(cmd_clean(small_tune(), flags_for(scratch("clean_wrong"))), ConfigError);
}

TEST(Fpc, WritesCsv) {
  const fs::path dir = scratch("fpc");
  FpcArgs a;
  a.samples = 2000;
  const FpcReport r = cmd_fpc(a, dir.string(), nullptr);
  EXPECT_EQ(r.V, 15u);
  EXPECT_TRUE(fs::exists(dir / "fpc.csv"));
}

TEST(Fpc, LargePopulationRefused) {
  FpcArgs a;
  a.n = 40;
  EXPECT_THROW(cmd_fpc(a, scratch("fpc_big").string(), nullptr), TooLargeError);
}

TEST(Check, DefaultSuitePasses) {
  ExperimentConfig c;
  c.check.trials = 5;
  const CheckReport rep = cmd_check(c, flags_for(scratch("check")));
  EXPECT_TRUE(rep.pass()) << (rep.failures().empty() ? "" : rep.failures().front());
  EXPECT_GT(rep.checks.size(), 40u);
}

TEST(Check, CorruptedGradientIsNamed) {
  struct Scaled final : BilevelProblem {
    ProblemPtr base = build_problem({ModelKind::ridge}, 3);
    std::string name() const override { return "scaled"; }
    std::size_t hyper_dim() const override { return 1; }
    std::size_t param_dim() const override { return 3; }
    double inner_loss(const Vec& l, const Vec& t, const DataView& d) const override { return base->inner_loss(l, t, d); }
    Vec inner_grad_theta(const Vec& l, const Vec& t, const DataView& d) const override {
      return scale(1.05, base->inner_grad_theta(l, t, d));
    }
    Vec inner_hvp(const Vec& l, const Vec& t, const DataView& d, const Vec& v) const override {
      return base->inner_hvp(l, t, d, v);
    }
    Vec inner_mixed_vp(const Vec& l, const Vec& t, const DataView& d, const Vec& v) const override {
      return base->inner_mixed_vp(l, t, d, v);
    }
    double outer_loss(const Vec& l, const Vec& t, const DataView& d) const override { return base->outer_loss(l, t, d); }
    Vec outer_grad_theta(const Vec& l, const Vec& t, const DataView& d) const override {
      return base->outer_grad_theta(l, t, d);
    }
    Vec outer_grad_lambda(const Vec& l, const Vec& t, const DataView& d) const override {
      return base->outer_grad_lambda(l, t, d);
    }
  };
  CheckConfig cc;
  std::vector<CheckCase> cases = default_check_cases(cc);
  cases.resize(1);
  cases[0].name = "scaled_ridge";
  cases[0].problem = std::make_shared<Scaled>();
  ExperimentConfig c;
  c.check.trials = 5;
  const CheckReport rep = cmd_check(c, flags_for(scratch("check_bad")), &cases);
  EXPECT_FALSE(rep.pass());
  const auto f = rep.failures();
  EXPECT_NE(std::find(f.begin(), f.end(), "scaled_ridge/derivative/inner_grad_theta"), f.end());
}

#ifdef HPO_CLI_PATH
TEST(Binary, ExitCodes) {
  const fs::path dir = scratch("bin");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.toml") << "[method]\nK = \n";
  std::ofstream(dir / "unknown.toml") << "[method]\nspeed = 3\n";
  std::ofstream(dir / "invalid.toml") << "[strategy]\nT = 0\n";
  std::ofstream(dir / "ok.toml") << "[data]\nn = 30\nd = 2\n[method]\nK = 5\n[strategy]\nT = 2\n";
  std::ofstream(dir / "blowup.toml")
      << "[data]\nn = 30\nd = 2\n[method]\nK = 400\nalpha_in = 20.0\n[strategy]\nT = 2\n";
  const std::string out = " --out " + (dir / "out").string();
  EXPECT_EQ(run_cli("tune --config " + (dir / "ok.toml").string() + out), 0);
  EXPECT_EQ(run_cli("tune --config " + (dir / "bad.toml").string() + out), 2);
  EXPECT_EQ(run_cli("tune --config " + (dir / "unknown.toml").string() + out), 2);
  EXPECT_EQ(run_cli("tune --config " + (dir / "invalid.toml").string() + out), 2);
  EXPECT_EQ(run_cli("tune --config " + (dir / "blowup.toml").string() + out), 3);
  EXPECT_NE(run_cli("tune"), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_EQ(run_cli("fpc --n 6 --gamma 0.5 -U 3 --samples 100" + out), 0);
  EXPECT_EQ(run_cli("fpc --n 40 --gamma 0.5 -U 3" + out), 1);
  EXPECT_EQ(run_cli("check --out " + (dir / "check").string()), 0);
}
#endif

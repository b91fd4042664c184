#include <gtest/gtest.h>

#include <cmath>

#include "hpo/data.hpp"
#include "hpo/strategies.hpp"

using namespace hpo;

namespace {

struct RidgeRun {
  Dataset ds;
  std::vector<Split> splits;
  ProblemPtr problem;
};

RidgeRun ridge_setup(std::size_t U, std::uint64_t seed) {
  RidgeRun s;
  s.ds = gen_linear(60, 3, seed, 0.3, seed + 1).data;
  SplitPlan plan;
  plan.U = U;
  plan.master_seed = seed;
  s.splits = make_splits(60, plan);
  s.problem = build_problem({ModelKind::ridge}, 3);
  return s;
}

HypergradMethod itd(std::size_t K) {
  HypergradMethod m;
  m.kind = MethodKind::itd;
  m.K = K;
  m.alpha_in = 0.1;
  return m;
}

}  // namespace

TEST(OuterOptimizerTest, GradientDescentStep) {
  OuterOptimizer opt(OptimizerKind::gd, 0.5);
  EXPECT_EQ(opt.step({1.0, 2.0}, {2.0, -2.0}), (Vec{0.0, 3.0}));
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(OuterOptimizerTest, AdamFirstStepHasMagnitudeAlpha) {
  OuterOptimizer opt(OptimizerKind::adam, 0.1);
  const Vec next = opt.step({0.0, 0.0}, {3.0, -0.002});
  EXPECT_NEAR(next[0], -0.1, 1e-8);
  EXPECT_NEAR(next[1], 0.1, 1e-5);
}

TEST(OuterOptimizerTest, AdamHandSecondStep) {
  OuterOptimizer opt(OptimizerKind::adam, 0.01);
  Vec l = opt.step({0.0}, {1.0});
  l = opt.step(l, {-1.0});
  // m = 0.9*0.1 - 0.1 = -0.01, mhat = -0.01/0.19; v = 0.999*0.001 + 0.001, vhat = v/(1 - 0.999^2)
  const double mhat = -0.01 / (1.0 - 0.81);
  const double vhat = (0.999 * 0.001 + 0.001) / (1.0 - 0.999 * 0.999);
  const double first = -0.01 / (1.0 + 1e-8);
  EXPECT_NEAR(l[0], first - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(OuterOptimizerTest, NonPositiveRateIsConfigError) {
  EXPECT_THROW(OuterOptimizer(OptimizerKind::gd, 0.0), ConfigError);
  EXPECT_THROW(parse_optimizer_kind("sgd"), ConfigError);
  EXPECT_EQ(parse_optimizer_kind("adam"), OptimizerKind::adam);
}

TEST(EnsembleMean, Examples) {
  EXPECT_EQ(ensemble_mean({{1, 2}, {3, 4}}), (Vec{2, 3}));
  EXPECT_EQ(ensemble_mean({{5}}), (Vec{5}));
  EXPECT_THROW(ensemble_mean({}), ContractViolation);
}

TEST(RunSingle, ShapesOfTrace) {
  const RidgeRun s = ridge_setup(1, 1);
  OuterOptimizer opt(OptimizerKind::gd, 0.1);
  const HPOTrace tr = run_single(*s.problem, s.ds, s.splits[0], itd(10), opt, 4, {0.0}, Vec(3, 0.0));
  EXPECT_EQ(tr.lambdas.size(), 5u);
  EXPECT_EQ(tr.steps.size(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(tr.steps[t].lambda, tr.lambdas[t]);
    EXPECT_NEAR(tr.lambdas[t + 1][0], tr.lambdas[t][0] - 0.1 * tr.steps[t].hypergrad[0], 1e-15);
  }
}

TEST(RunSingle, ZeroStepsRejected) {
  const RidgeRun s = ridge_setup(1, 1);
  OuterOptimizer opt(OptimizerKind::gd, 0.1);
  EXPECT_THROW(run_single(*s.problem, s.ds, s.splits[0], itd(10), opt, 0, {0.0}, Vec(3, 0.0)), ContractViolation);
}

TEST(RunSingle, MovesTowardLowerValidationLoss) {
  const RidgeRun s = ridge_setup(1, 2);
  OuterOptimizer opt(OptimizerKind::gd, 0.5);
  const HPOTrace tr = run_single(*s.problem, s.ds, s.splits[0], itd(100), opt, 30, {2.0}, Vec(3, 0.0));
  EXPECT_LT(tr.steps.back().splits[0].val_loss, tr.steps.front().splits[0].val_loss);
}

TEST(Ehg, OneSplitEqualsSingle) {
  const RidgeRun s = ridge_setup(1, 3);
  OuterOptimizer a(OptimizerKind::gd, 0.2), b(OptimizerKind::gd, 0.2);
  const HPOTrace x = run_ehg(*s.problem, s.ds, s.splits, itd(20), a, 5, {0.0}, Vec(3, 0.0));
  const HPOTrace y = run_single(*s.problem, s.ds, s.splits[0], itd(20), b, 5, {0.0}, Vec(3, 0.0));
  EXPECT_EQ(x.lambdas, y.lambdas);
}

TEST(Ehg, IdenticalCopiesEqualSingle) {
  const RidgeRun s = ridge_setup(1, 4);
  const std::vector<Split> copies(4, s.splits[0]);
  OuterOptimizer a(OptimizerKind::gd, 0.2), b(OptimizerKind::gd, 0.2);
  const HPOTrace x = run_ehg(*s.problem, s.ds, copies, itd(20), a, 5, {0.0}, Vec(3, 0.0));
  const HPOTrace y = run_single(*s.problem, s.ds, s.splits[0], itd(20), b, 5, {0.0}, Vec(3, 0.0));
  for (std::size_t t = 0; t <= 5; ++t) EXPECT_NEAR(x.lambdas[t][0], y.lambdas[t][0], 1e-14);
}

TEST(Ehg, StepUsesMeanOfSplitHypergradients) {
  const RidgeRun s = ridge_setup(3, 5);
  OuterOptimizer opt(OptimizerKind::gd, 0.2);
  const HPOTrace tr = run_ehg(*s.problem, s.ds, s.splits, itd(20), opt, 2, {0.0}, Vec(3, 0.0));
  for (const TraceStep& st : tr.steps) {
    double mean = 0.0;
    for (const auto& r : st.splits) mean += r.hypergrad[0] / 3.0;
    EXPECT_NEAR(st.hypergrad[0], mean, 1e-15);
  }
}

TEST(Ehg, DeterministicAcrossWorkerCounts) {
  const RidgeRun s = ridge_setup(4, 6);
  OuterOptimizer a(OptimizerKind::adam, 0.05), b(OptimizerKind::adam, 0.05);
  RunOptions one, four;
  four.workers = 4;
  const HPOTrace x = run_ehg(*s.problem, s.ds, s.splits, itd(15), a, 6, {0.0}, Vec(3, 0.0), one);
  const HPOTrace y = run_ehg(*s.problem, s.ds, s.splits, itd(15), b, 6, {0.0}, Vec(3, 0.0), four);
  EXPECT_EQ(x.lambdas, y.lambdas);
}

TEST(Ehg, WarmStartContinuesFromPreviousSolution) {
  const RidgeRun s = ridge_setup(2, 7);
  OuterOptimizer a(OptimizerKind::gd, 1e-12), b(OptimizerKind::gd, 1e-12);
  RunOptions warm;
  warm.warm_start = true;
  const HPOTrace cold = run_ehg(*s.problem, s.ds, s.splits, itd(5), a, 3, {0.0}, Vec(3, 0.0));
  const HPOTrace hot = run_ehg(*s.problem, s.ds, s.splits, itd(5), b, 3, {0.0}, Vec(3, 0.0), warm);
  // three chained 5-step solves land near a 15-step solve
  const Vec direct = inner_solve(*s.problem, {0.0}, Vec(3, 0.0), s.splits[0].train(s.ds), 15, 0.1).last();
  EXPECT_LT(norm(sub(hot.split_thetas[0], direct)), 1e-9);
  EXPECT_GT(norm(sub(cold.split_thetas[0], direct)), 1e-6);
}

TEST(Ehg, TestLossRecordedWhenProvided) {
  const RidgeRun s = ridge_setup(2, 8);
  const IndexSet rows = iota_indices(10);
  RunOptions o;
  o.test = DataView(s.ds, rows);
  OuterOptimizer opt(OptimizerKind::gd, 0.1);
  const HPOTrace tr = run_ehg(*s.problem, s.ds, s.splits, itd(5), opt, 1, {0.0}, Vec(3, 0.0), o);
  EXPECT_TRUE(tr.steps[0].splits[1].test_loss.has_value());
}

TEST(Ehg, DivergentInnerLoopRaisesNumericalError) {
  const RidgeRun s = ridge_setup(1, 9);
  HypergradMethod m = itd(2000);
  m.alpha_in = 50.0;
  OuterOptimizer opt(OptimizerKind::gd, 0.1);
  EXPECT_THROW(run_ehg(*s.problem, s.ds, s.splits, m, opt, 3, {0.0}, Vec(3, 0.0)), NumericalError);
}

TEST(Oehg, OneStepHypergradientMatchesUnrolledK1) {
  const RidgeRun s = ridge_setup(1, 10);
  const Vec shadow{0.3, -0.2, 0.1};
  const DataView tr = s.splits[0].train(s.ds), va = s.splits[0].val(s.ds);
  const OnlineStep o = oehg_split_hypergrad(*s.problem, {0.4}, shadow, tr, va, 0.1);
  const auto traj = inner_solve(*s.problem, {0.4}, shadow, tr, 1, 0.1);
  EXPECT_EQ(o.next_theta, traj.last());
  EXPECT_NEAR(o.hypergrad[0], itd_hypergrad(*s.problem, {0.4}, traj, tr, va).grad[0], 1e-15);
}

TEST(Oehg, DeployedModelStepsOnAllRows) {
  const RidgeRun s = ridge_setup(2, 11);
  OuterOptimizer opt(OptimizerKind::gd, 0.05);
  const HPOTrace tr = run_oehg(*s.problem, s.ds, s.splits, 1, 0.1, opt, 0.2, {0.0}, Vec(3, 0.0));
  const IndexSet all = iota_indices(s.ds.size());
  Vec expect(3, 0.0);
  axpy(-0.2, s.problem->inner_grad_theta(tr.lambdas[1], Vec(3, 0.0), DataView(s.ds, all)), expect);
  EXPECT_EQ(tr.deployed_theta, expect);
}

TEST(Oehg, ShadowsAdvanceOneStepPerUpdate) {
  const RidgeRun s = ridge_setup(2, 12);
  OuterOptimizer opt(OptimizerKind::gd, 1e-12);
  const HPOTrace tr = run_oehg(*s.problem, s.ds, s.splits, 7, 0.1, opt, 0.1, {0.0}, Vec(3, 0.0));
  const Vec direct = inner_solve(*s.problem, {0.0}, Vec(3, 0.0), s.splits[1].train(s.ds), 7, 0.1).last();
  EXPECT_LT(norm(sub(tr.split_thetas[1], direct)), 1e-9);
}

TEST(Oehg, ReducesValidationLoss) {
  const RidgeRun s = ridge_setup(3, 13);
  OuterOptimizer opt(OptimizerKind::gd, 0.5);
  const HPOTrace tr = run_oehg(*s.problem, s.ds, s.splits, 200, 0.1, opt, 0.1, {2.0}, Vec(3, 0.0));
  EXPECT_LT(tr.lambdas.back()[0], 2.0);
}

TEST(Refit, EqualsInnerSolveEndpoint) {
  const RidgeRun s = ridge_setup(1, 14);
  const IndexSet all = iota_indices(s.ds.size());
  const DataView v(s.ds, all);
  EXPECT_EQ(refit(*s.problem, {0.0}, Vec(3, 0.0), v, 30, 0.1),
            inner_solve(*s.problem, {0.0}, Vec(3, 0.0), v, 30, 0.1).last());
}

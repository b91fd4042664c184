#include <gtest/gtest.h>

#include <cmath>

#include "hpo/data.hpp"
#include "hpo/problems.hpp"

using namespace hpo;

namespace {

struct Fixture {
  Dataset ds;
  IndexSet tr, va;
  DataView train() const { return {ds, tr}; }
  DataView val() const { return {ds, va}; }
};

Fixture regression(std::size_t n, std::size_t d, std::uint64_t seed) {
  Fixture f;
  f.ds = gen_linear(n, d, seed, 0.1, seed + 1).data;
  for (std::size_t i = 0; i < n; ++i) (i % 3 == 0 ? f.va : f.tr).push_back(i);
  return f;
}

Fixture binary(std::size_t n, std::size_t d, std::uint64_t seed) {
  Fixture f = regression(n, d, seed);
  f.ds.task = TaskKind::binary;
  for (double& y : f.ds.y) y = y >= 0 ? 1.0 : -1.0;
  return f;
}

Fixture multiclass(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
  Fixture f;
  f.ds = gen_softmax(n, d, k, seed, seed + 1).data;
  for (std::size_t i = 0; i < n; ++i) (i % 3 == 0 ? f.va : f.tr).push_back(i);
  return f;
}

Fixture fixture_for(ModelKind k) {
  switch (required_task(k)) {
    case TaskKind::binary: return binary(30, 3, 7);
    case TaskKind::multiclass: return multiclass(30, 3, 3, 7);
    default: return regression(30, 3, 7);
  }
}

ProblemPtr make(ModelKind k, std::size_t d = 3, double delta = 1e-3) {
  ModelSpec s;
  s.kind = k;
  s.smoothing_delta = delta;
  s.num_classes = 3;
  s.num_samples = 30;
  return build_problem(s, d);
}

}  // namespace

TEST(Ridge, GradientAtZeroIsPureDataTerm) {
  const Fixture f = regression(12, 3, 1);
  const auto p = make(ModelKind::ridge);
  const Vec g = p->inner_grad_theta({0.7}, Vec(3, 0.0), f.train());
  Vec expect(3, 0.0);
  const double m = static_cast<double>(f.tr.size());
  for (std::size_t i : f.tr)
    for (std::size_t j = 0; j < 3; ++j) expect[j] -= 2.0 / m * f.ds.X(i, j) * f.ds.y[i];
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(g[j], expect[j], 1e-14);
}

TEST(Ridge, OneFeatureHandGradient) {
  // (2/2) * sum (0.5 - 1) * 1 + 2 * 2 * 0.5 = -1 + 2
  Dataset ds;
  ds.X = Mat(2, 1, {1, 1});
  ds.y = {1, 1};
  const IndexSet rows{0, 1};
  const auto p = make(ModelKind::ridge, 1);
  const Vec g = p->inner_grad_theta({std::log(2.0)}, {0.5}, DataView(ds, rows));
  EXPECT_NEAR(g[0], 1.0, 1e-14);
}

TEST(Ridge, HessianMatchesHandAssembly) {
  const Fixture f = regression(15, 4, 3);
  const auto p = make(ModelKind::ridge, 4);
  const double u = -0.3;
  const double m = static_cast<double>(f.tr.size());
  Mat H(4, 4);
  for (std::size_t i : f.tr)
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) H(a, b) += 2.0 / m * f.ds.X(i, a) * f.ds.X(i, b);
  for (std::size_t a = 0; a < 4; ++a) H(a, a) += 2.0 * std::exp(u);
  const Vec v{1, -2, 0.5, 3};
  const Vec hv = p->inner_hvp({u}, {0.1, 0.2, 0.3, 0.4}, f.train(), v);
  const Vec ref = gemv(H, v);
  EXPECT_LT(relative_error(hv, ref), 1e-12);
}

TEST(Ridge, StrongConvexityInequality) {
  const Fixture f = regression(20, 3, 5);
  const auto p = make(ModelKind::ridge);
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const Vec lam{rng.normal()};
    Vec a(3), b(3);
    for (double& x : a) x = rng.normal();
    for (double& x : b) x = rng.normal();
    const double lhs = p->inner_loss(lam, a, f.train());
    const Vec d = sub(a, b);
    const double rhs = p->inner_loss(lam, b, f.train()) + dot(p->inner_grad_theta(lam, b, f.train()), d) +
                       std::exp(lam[0]) * dot(d, d);
    EXPECT_GE(lhs, rhs - 1e-12);
  }
  EXPECT_DOUBLE_EQ(p->strong_convexity({0.0}), 2.0);
}

TEST(Hyperclean, ZeroWeightsHalveTheLoss) {
  const Fixture f = multiclass(30, 3, 3, 2);
  const auto p = make(ModelKind::hyperclean_softmax);
  const auto plain = make(ModelKind::softmax_l2);
  Rng rng(1);
  Vec th(9);
  for (double& x : th) x = rng.normal();
  const double weighted = p->inner_loss(Vec(30, 0.0), th, f.train());
  // softmax_l2 at a vanishing penalty is the plain mean cross-entropy
  const double ce = plain->outer_loss({0.0}, th, f.train());
  EXPECT_NEAR(weighted, 0.5 * ce, 1e-14);
}

TEST(Hyperclean, WeightsStrictlyInsideUnitInterval) {
  const auto p = make(ModelKind::hyperclean_softmax);
  Vec raw(30);
  for (std::size_t i = 0; i < 30; ++i) raw[i] = -30.0 + 2.0 * static_cast<double>(i);
  for (double w : p->effective_hyper(raw)) {
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, 1.0);
  }
}

TEST(Hyperclean, OuterLossIgnoresWeightsAndAcceptsForeignRows) {
  const auto p = make(ModelKind::hyperclean_softmax);
  const Fixture f = multiclass(30, 3, 3, 2);
  const Dataset big = gen_softmax(50, 3, 3, 2, 99).data;
  const IndexSet rows = iota_indices(50);
  const Vec th(9, 0.1);
  EXPECT_NO_THROW(p->outer_loss(Vec(30, 1.0), th, DataView(big, rows)));
  EXPECT_THROW(p->inner_loss(Vec(30, 1.0), th, DataView(big, rows)), ContractViolation);
}

TEST(Zoo, DimensionsAndNames) {
  EXPECT_EQ(make(ModelKind::ridge)->hyper_dim(), 1u);
  EXPECT_EQ(make(ModelKind::elastic_net)->hyper_dim(), 2u);
  EXPECT_EQ(make(ModelKind::ridge_per_param)->hyper_dim(), 3u);
  EXPECT_EQ(make(ModelKind::softmax_l2)->param_dim(), 9u);
  EXPECT_EQ(make(ModelKind::hyperclean_softmax)->hyper_dim(), 30u);
  for (ModelKind k : kAllModelKinds) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_FALSE(make(ModelKind::svm_sqhinge)->supports_implicit());
  EXPECT_TRUE(make(ModelKind::logistic_l2)->supports_implicit());
}

TEST(Zoo, UnknownKindIsConfigError) {
  try {
    parse_model_kind("kernel_svm");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "problem.kind");
  }
}

TEST(Zoo, NonPositiveSmoothingRejected) {
  ModelSpec s;
  s.kind = ModelKind::lasso_smooth;
  s.smoothing_delta = 0.0;
  EXPECT_THROW(build_problem(s, 2), ConfigError);
}

TEST(Zoo, EffectiveHyperparameters) {
  EXPECT_NEAR(make(ModelKind::ridge)->effective_hyper({std::log(3.0)})[0], 3.0, 1e-14);
  const Vec en = make(ModelKind::elastic_net)->effective_hyper({0.0, std::log(2.0)});
  EXPECT_NEAR(en[0], 1.0, 1e-14);
  EXPECT_NEAR(en[1], 2.0, 1e-14);
}

TEST(Zoo, HvpIsLinear) {
  for (ModelKind k : kAllModelKinds) {
    const Fixture f = fixture_for(k);
    const auto p = make(k);
    Rng rng(4);
    const auto rv = [&](std::size_t n) {
      Vec v(n);
      for (double& x : v) x = rng.normal();
      return v;
    };
    const Vec lam = rv(p->hyper_dim()), th = rv(p->param_dim()), u = rv(p->param_dim()), w = rv(p->param_dim());
    Vec comb = scale(2.0, u);
    axpy(-3.0, w, comb);
    Vec expect = scale(2.0, p->inner_hvp(lam, th, f.train(), u));
    axpy(-3.0, p->inner_hvp(lam, th, f.train(), w), expect);
    EXPECT_LT(relative_error(p->inner_hvp(lam, th, f.train(), comb), expect), 1e-8) << to_string(k);
  }
}

TEST(VerifyDerivatives, RidgeIsTight) {
  const Fixture f = regression(30, 3, 7);
  const auto rep = verify_derivatives(*make(ModelKind::ridge), f.train(), f.val(), 10, 1);
  EXPECT_TRUE(rep.pass());
  for (const auto& c : rep.checks) EXPECT_LT(c.max_rel_error, 1e-6) << c.name;
}

TEST(VerifyDerivatives, WholeZooPasses) {
  for (ModelKind k : kAllModelKinds) {
    const Fixture f = fixture_for(k);
    const auto rep = verify_derivatives(*make(k), f.train(), f.val(), 10, 2);
    EXPECT_TRUE(rep.pass()) << to_string(k) << ": " << (rep.failures().empty() ? "" : rep.failures().front());
  }
}

TEST(VerifyDerivatives, SvmAwayFromKink) {
  const Fixture f = binary(40, 3, 11);
  const auto rep = verify_derivatives(*make(ModelKind::svm_sqhinge), f.train(), f.val(), 10, 3);
  EXPECT_TRUE(rep.pass());
}

TEST(VerifyDerivatives, CatchesWrongGradient) {
  // A ridge whose data gradient is off by a constant factor.
  struct Broken final : BilevelProblem {
    ProblemPtr base = build_problem({ModelKind::ridge}, 3);
    std::string name() const override { return "broken"; }
    std::size_t hyper_dim() const override { return 1; }
    std::size_t param_dim() const override { return 3; }
    double inner_loss(const Vec& l, const Vec& t, const DataView& d) const override { return base->inner_loss(l, t, d); }
    Vec inner_grad_theta(const Vec& l, const Vec& t, const DataView& d) const override {
      return scale(1.1, base->inner_grad_theta(l, t, d));
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
  } broken;
  const Fixture f = regression(30, 3, 7);
  const auto rep = verify_derivatives(broken, f.train(), f.val(), 3, 1);
  EXPECT_FALSE(rep.pass());
  ASSERT_FALSE(rep.failures().empty());
  EXPECT_EQ(rep.failures().front(), "inner_grad_theta");
}

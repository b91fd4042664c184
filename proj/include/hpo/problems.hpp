#pragma once

// Bilevel problem contract and the linear-model zoo.
//
// Every model scores a sample as z = W' x with W a d x k parameter block
// (k = 1 for scalar models), stored row-major in theta as theta[j*k + c].
// The inner objective is the (optionally sample-weighted) mean loss over the
// training view plus a hyperparameter-controlled penalty; the outer objective
// is the unweighted mean loss over the validation view.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hpo/data.hpp"
#include "hpo/errors.hpp"
#include "hpo/linalg.hpp"
#include "hpo/rng.hpp"

namespace hpo {

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t hyper_dim() const = 0;
  virtual std::size_t param_dim() const = 0;

  virtual double inner_loss(const Vec& lambda, const Vec& theta, const DataView& d) const = 0;
  virtual Vec inner_grad_theta(const Vec& lambda, const Vec& theta, const DataView& d) const = 0;
  // Hessian (in theta) times v.
  virtual Vec inner_hvp(const Vec& lambda, const Vec& theta, const DataView& d, const Vec& v) const = 0;
  // Mixed second derivative d/dlambda of <grad_theta, v>; result has hyper_dim entries.
  virtual Vec inner_mixed_vp(const Vec& lambda, const Vec& theta, const DataView& d,
                             const Vec& v) const = 0;

  virtual double outer_loss(const Vec& lambda, const Vec& theta, const DataView& d) const = 0;
  virtual Vec outer_grad_theta(const Vec& lambda, const Vec& theta, const DataView& d) const = 0;
  virtual Vec outer_grad_lambda(const Vec& lambda, const Vec& theta, const DataView& d) const = 0;

  virtual std::vector<Interval> hyper_domain() const {
    return std::vector<Interval>(hyper_dim());
  }
  // Lower bound on the inner strong-convexity modulus that holds for any data.
  virtual double strong_convexity(const Vec& /*lambda*/) const { return 0.0; }
  // False where the inner Hessian is not reliably invertible.
  virtual bool supports_implicit() const { return true; }
  // Raw optimisation coordinates mapped to the model's natural hyperparameters.
  virtual Vec effective_hyper(const Vec& raw) const { return raw; }
};

using ProblemPtr = std::shared_ptr<const BilevelProblem>;

// ---------------------------------------------------------------------------
// per-sample losses on the score vector z

namespace loss {

inline double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

struct Squared {
  std::size_t outputs() const { return 1; }
  double value(std::span<const double> z, double y) const {
    const double r = z[0] - y;
    return r * r;
  }
  void gradient(std::span<const double> z, double y, std::span<double> g) const { g[0] = 2.0 * (z[0] - y); }
  void hess_vec(std::span<const double>, double, std::span<const double> dz, std::span<double> out) const {
    out[0] = 2.0 * dz[0];
  }
};

// Binary cross-entropy with labels in {-1, +1}: log(1 + exp(-y z)).
struct Logistic {
  std::size_t outputs() const { return 1; }
  double value(std::span<const double> z, double y) const { return softplus(-y * z[0]); }
  void gradient(std::span<const double> z, double y, std::span<double> g) const {
    g[0] = -y * sigmoid(-y * z[0]);
  }
  void hess_vec(std::span<const double> z, double y, std::span<const double> dz, std::span<double> out) const {
    const double s = sigmoid(y * z[0]);
    out[0] = s * (1.0 - s) * dz[0];
  }
};

// max(0, 1 - y z)^2, labels in {-1, +1}. Second derivative taken a.e.
struct SquaredHinge {
  std::size_t outputs() const { return 1; }
  double value(std::span<const double> z, double y) const {
    const double m = std::max(0.0, 1.0 - y * z[0]);
    return m * m;
  }
  void gradient(std::span<const double> z, double y, std::span<double> g) const {
    g[0] = -2.0 * y * std::max(0.0, 1.0 - y * z[0]);
  }
  void hess_vec(std::span<const double> z, double y, std::span<const double> dz, std::span<double> out) const {
    out[0] = (1.0 - y * z[0] > 0.0) ? 2.0 * dz[0] : 0.0;
  }
};

// Multiclass cross-entropy, label = class index.
struct Softmax {
  std::size_t classes = 2;

  std::size_t outputs() const { return classes; }
  static void probabilities(std::span<const double> z, std::span<double> p) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - zmax);
      s += p[c];
    }
    for (double& v : p) v /= s;
  }
  double value(std::span<const double> z, double y) const {
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - zmax);
    return zmax + std::log(s) - z[static_cast<std::size_t>(y)];
  }
  void gradient(std::span<const double> z, double y, std::span<double> g) const {
    probabilities(z, g);
    g[static_cast<std::size_t>(y)] -= 1.0;
  }
  void hess_vec(std::span<const double> z, double, std::span<const double> dz, std::span<double> out) const {
    probabilities(z, out);
    double pdz = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) pdz += out[c] * dz[c];
    for (std::size_t c = 0; c < z.size(); ++c) out[c] *= dz[c] - pdz;
  }
};

}  // namespace loss

// ---------------------------------------------------------------------------
// penalties; each reads its own slice of the raw hyperparameter vector

namespace penalty {

struct None {
  std::size_t dim() const { return 0; }
  double value(std::span<const double>, const Vec&) const { return 0.0; }
  void grad(std::span<const double>, const Vec&, Vec&) const {}
  void hvp(std::span<const double>, const Vec&, const Vec&, Vec&) const {}
  void mixed_vp(std::span<const double>, const Vec&, const Vec&, std::span<double>) const {}
  double strong_convexity(std::span<const double>) const { return 0.0; }
  void effective(std::span<const double>, std::span<double>) const {}
};

// e^u * ||theta||^2
struct ExpL2 {
  std::size_t dim() const { return 1; }
  double value(std::span<const double> lam, const Vec& th) const { return std::exp(lam[0]) * dot(th, th); }
  void grad(std::span<const double> lam, const Vec& th, Vec& g) const { axpy(2.0 * std::exp(lam[0]), th, g); }
  void hvp(std::span<const double> lam, const Vec&, const Vec& v, Vec& out) const {
    axpy(2.0 * std::exp(lam[0]), v, out);
  }
  void mixed_vp(std::span<const double> lam, const Vec& th, const Vec& v, std::span<double> out) const {
    out[0] += 2.0 * std::exp(lam[0]) * dot(th, v);
  }
  double strong_convexity(std::span<const double> lam) const { return 2.0 * std::exp(lam[0]); }
  void effective(std::span<const double> lam, std::span<double> out) const { out[0] = std::exp(lam[0]); }
};

// e^u * sum_j (sqrt(theta_j^2 + delta^2) - delta), a smooth stand-in for ||theta||_1.
struct ExpSmoothL1 {
  double delta = 1e-6;

  std::size_t dim() const { return 1; }
  double value(std::span<const double> lam, const Vec& th) const {
    double s = 0.0;
    for (double t : th) s += std::sqrt(t * t + delta * delta) - delta;
    return std::exp(lam[0]) * s;
  }
  void grad(std::span<const double> lam, const Vec& th, Vec& g) const {
    const double c = std::exp(lam[0]);
    for (std::size_t j = 0; j < th.size(); ++j) g[j] += c * th[j] / std::sqrt(th[j] * th[j] + delta * delta);
  }
  void hvp(std::span<const double> lam, const Vec& th, const Vec& v, Vec& out) const {
    const double c = std::exp(lam[0]);
    const double d2 = delta * delta;
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double q = th[j] * th[j] + d2;
      out[j] += c * d2 / (q * std::sqrt(q)) * v[j];
    }
  }
  void mixed_vp(std::span<const double> lam, const Vec& th, const Vec& v, std::span<double> out) const {
    const double c = std::exp(lam[0]);
    double s = 0.0;
    for (std::size_t j = 0; j < th.size(); ++j) s += th[j] / std::sqrt(th[j] * th[j] + delta * delta) * v[j];
    out[0] += c * s;
  }
  double strong_convexity(std::span<const double>) const { return 0.0; }
  void effective(std::span<const double> lam, std::span<double> out) const { out[0] = std::exp(lam[0]); }
};

// lambda[0] weights the smooth L1 term, lambda[1] the squared L2 term.
struct ElasticNet {
  ExpSmoothL1 l1;
  ExpL2 l2;

  std::size_t dim() const { return 2; }
  double value(std::span<const double> lam, const Vec& th) const {
    return l1.value(lam.subspan(0, 1), th) + l2.value(lam.subspan(1, 1), th);
  }
  void grad(std::span<const double> lam, const Vec& th, Vec& g) const {
    l1.grad(lam.subspan(0, 1), th, g);
    l2.grad(lam.subspan(1, 1), th, g);
  }
  void hvp(std::span<const double> lam, const Vec& th, const Vec& v, Vec& out) const {
    l1.hvp(lam.subspan(0, 1), th, v, out);
    l2.hvp(lam.subspan(1, 1), th, v, out);
  }
  void mixed_vp(std::span<const double> lam, const Vec& th, const Vec& v, std::span<double> out) const {
    l1.mixed_vp(lam.subspan(0, 1), th, v, out.subspan(0, 1));
    l2.mixed_vp(lam.subspan(1, 1), th, v, out.subspan(1, 1));
  }
  double strong_convexity(std::span<const double> lam) const { return l2.strong_convexity(lam.subspan(1, 1)); }
  void effective(std::span<const double> lam, std::span<double> out) const {
    l1.effective(lam.subspan(0, 1), out.subspan(0, 1));
    l2.effective(lam.subspan(1, 1), out.subspan(1, 1));
  }
};

// sum_j (lambda_j * theta_j)^2, one coefficient per parameter.
struct PerParamL2 {
  std::size_t params = 1;

  std::size_t dim() const { return params; }
  double value(std::span<const double> lam, const Vec& th) const {
    double s = 0.0;
    for (std::size_t j = 0; j < params; ++j) s += lam[j] * lam[j] * th[j] * th[j];
    return s;
  }
  void grad(std::span<const double> lam, const Vec& th, Vec& g) const {
    for (std::size_t j = 0; j < params; ++j) g[j] += 2.0 * lam[j] * lam[j] * th[j];
  }
  void hvp(std::span<const double> lam, const Vec&, const Vec& v, Vec& out) const {
    for (std::size_t j = 0; j < params; ++j) out[j] += 2.0 * lam[j] * lam[j] * v[j];
  }
  void mixed_vp(std::span<const double> lam, const Vec& th, const Vec& v, std::span<double> out) const {
    for (std::size_t j = 0; j < params; ++j) out[j] += 4.0 * lam[j] * th[j] * v[j];
  }
  double strong_convexity(std::span<const double> lam) const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < params; ++j) m = std::min(m, 2.0 * lam[j] * lam[j]);
    return params == 0 ? 0.0 : m;
  }
  void effective(std::span<const double> lam, std::span<double> out) const {
    std::copy(lam.begin(), lam.begin() + static_cast<std::ptrdiff_t>(params), out.begin());
  }
};

}  // namespace penalty

// ---------------------------------------------------------------------------
// sample weighting of the inner data term

namespace weighting {

struct Uniform {
  std::size_t dim() const { return 0; }
  double weight(std::span<const double>, std::size_t) const { return 1.0; }
  double weight_derivative(std::span<const double>, std::size_t) const { return 0.0; }
  void effective(std::span<const double>, std::span<double>) const {}
};

// Weight of sample i is sigmoid(lambda_i); lambda is indexed by dataset row.
struct Sigmoid {
  std::size_t samples = 0;

  std::size_t dim() const { return samples; }
  double weight(std::span<const double> lam, std::size_t row) const { return loss::sigmoid(lam[row]); }
  double weight_derivative(std::span<const double> lam, std::size_t row) const {
    const double s = loss::sigmoid(lam[row]);
    return s * (1.0 - s);
  }
  void effective(std::span<const double> lam, std::span<double> out) const {
    for (std::size_t i = 0; i < samples; ++i) out[i] = loss::sigmoid(lam[i]);
  }
};

}  // namespace weighting

template <class Loss, class Penalty, class Weighting = weighting::Uniform>
class LinearModelProblem final : public BilevelProblem {
 public:
  LinearModelProblem(std::string name, std::size_t features, Loss loss, Penalty pen,
                     Weighting weights = {}, bool implicit_ok = true)
      : name_(std::move(name)),
        d_(features),
        loss_(loss),
        pen_(pen),
        wts_(weights),
        implicit_ok_(implicit_ok) {
    HPO_REQUIRE(d_ >= 1, "feature_dim must be >= 1");
  }

  std::string name() const override { return name_; }
  std::size_t hyper_dim() const override { return pen_.dim() + wts_.dim(); }
  std::size_t param_dim() const override { return d_ * loss_.outputs(); }
  bool supports_implicit() const override { return implicit_ok_; }

  double strong_convexity(const Vec& lambda) const override {
    return pen_.strong_convexity(pen_slice(lambda));
  }

  Vec effective_hyper(const Vec& raw) const override {
    check_hyper(raw);
    Vec out(raw.size());
    pen_.effective(pen_slice(raw), std::span<double>(out).subspan(0, pen_.dim()));
    wts_.effective(wts_slice(raw), std::span<double>(out).subspan(pen_.dim()));
    return out;
  }

  double inner_loss(const Vec& lambda, const Vec& theta, const DataView& d) const override {
    check(lambda, theta, d);
    const std::size_t k = loss_.outputs();
    Vec z(k);
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      scores(d.x(i), theta, z);
      s += wts_.weight(wts_slice(lambda), d.global_index(i)) * loss_.value(z, d.y(i));
    }
    return s / static_cast<double>(d.size()) + pen_.value(pen_slice(lambda), theta);
  }

  Vec inner_grad_theta(const Vec& lambda, const Vec& theta, const DataView& d) const override {
    check(lambda, theta, d);
    Vec g = data_gradient(lambda, theta, d, true);
    pen_.grad(pen_slice(lambda), theta, g);
    return g;
  }

  Vec inner_hvp(const Vec& lambda, const Vec& theta, const DataView& d, const Vec& v) const override {
    check(lambda, theta, d);
    HPO_REQUIRE(v.size() == param_dim(), "hvp direction has wrong length");
    const std::size_t k = loss_.outputs();
    Vec out(param_dim(), 0.0), z(k), dz(k), hz(k);
    const double inv_m = 1.0 / static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto x = d.x(i);
      scores(x, theta, z);
      scores(x, v, dz);
      loss_.hess_vec(z, d.y(i), dz, hz);
      const double w = wts_.weight(wts_slice(lambda), d.global_index(i)) * inv_m;
      scatter(x, hz, w, out);
    }
    pen_.hvp(pen_slice(lambda), theta, v, out);
    return out;
  }

  Vec inner_mixed_vp(const Vec& lambda, const Vec& theta, const DataView& d,
                     const Vec& v) const override {
    check(lambda, theta, d);
    HPO_REQUIRE(v.size() == param_dim(), "mixed product direction has wrong length");
    Vec out(hyper_dim(), 0.0);
    pen_.mixed_vp(pen_slice(lambda), theta, v, std::span<double>(out).subspan(0, pen_.dim()));
    if (wts_.dim() > 0) {
      const std::size_t k = loss_.outputs();
      Vec z(k), dz(k), gz(k);
      const double inv_m = 1.0 / static_cast<double>(d.size());
      const std::size_t off = pen_.dim();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const auto x = d.x(i);
        scores(x, theta, z);
        scores(x, v, dz);
        loss_.gradient(z, d.y(i), gz);
        const std::size_t row = d.global_index(i);
        out[off + row] += inv_m * wts_.weight_derivative(wts_slice(lambda), row) * dot(gz, dz);
      }
    }
    return out;
  }

  double outer_loss(const Vec& lambda, const Vec& theta, const DataView& d) const override {
    check(lambda, theta, d, false);
    Vec z(loss_.outputs());
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      scores(d.x(i), theta, z);
      s += loss_.value(z, d.y(i));
    }
    return s / static_cast<double>(d.size());
  }

  Vec outer_grad_theta(const Vec& lambda, const Vec& theta, const DataView& d) const override {
    check(lambda, theta, d, false);
    return data_gradient(lambda, theta, d, false);
  }

  Vec outer_grad_lambda(const Vec& lambda, const Vec& theta, const DataView& d) const override {
    check(lambda, theta, d, false);
    return Vec(hyper_dim(), 0.0);
  }

 private:
  std::span<const double> pen_slice(const Vec& lam) const {
    return std::span<const double>(lam).subspan(0, pen_.dim());
  }
  std::span<const double> wts_slice(const Vec& lam) const {
    return std::span<const double>(lam).subspan(pen_.dim());
  }

  void check_hyper(const Vec& lambda) const {
    HPO_REQUIRE(lambda.size() == hyper_dim(), name_ + ": lambda has " + std::to_string(lambda.size()) +
                                                  " entries, expected " + std::to_string(hyper_dim()));
  }

  // Outer losses ignore sample weights, so they may see rows (e.g. a test set)
  // that carry no weight.
  void check(const Vec& lambda, const Vec& theta, const DataView& d, bool weighted = true) const {
    check_hyper(lambda);
    HPO_REQUIRE(theta.size() == param_dim(), name_ + ": theta has wrong length");
    HPO_REQUIRE(d.data != nullptr && d.size() > 0, name_ + ": empty data view");
    HPO_REQUIRE(d.dim() == d_, name_ + ": data dimension does not match the model");
    if (weighted && wts_.dim() > 0)
      HPO_REQUIRE(d.data->size() <= wts_.dim(), name_ + ": more rows than sample weights");
  }

  // z_c = sum_j x_j * W[j, c]
  void scores(std::span<const double> x, const Vec& W, Vec& z) const {
    const std::size_t k = z.size();
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t j = 0; j < d_; ++j) {
      const double xj = x[j];
      if (xj == 0.0) continue;
      const double* wr = W.data() + j * k;
      for (std::size_t c = 0; c < k; ++c) z[c] += xj * wr[c];
    }
  }

  // out[j, c] += w * x_j * g_c
  void scatter(std::span<const double> x, const Vec& g, double w, Vec& out) const {
    const std::size_t k = g.size();
    for (std::size_t j = 0; j < d_; ++j) {
      const double xj = w * x[j];
      if (xj == 0.0) continue;
      double* o = out.data() + j * k;
      for (std::size_t c = 0; c < k; ++c) o[c] += xj * g[c];
    }
  }

  Vec data_gradient(const Vec& lambda, const Vec& theta, const DataView& d, bool weighted) const {
    const std::size_t k = loss_.outputs();
    Vec g(param_dim(), 0.0), z(k), gz(k);
    const double inv_m = 1.0 / static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto x = d.x(i);
      scores(x, theta, z);
      loss_.gradient(z, d.y(i), gz);
      const double w = weighted ? wts_.weight(wts_slice(lambda), d.global_index(i)) : 1.0;
      scatter(x, gz, w * inv_m, g);
    }
    return g;
  }

  std::string name_;
  std::size_t d_;
  Loss loss_;
  Penalty pen_;
  Weighting wts_;
  bool implicit_ok_;
};

// ---------------------------------------------------------------------------
// zoo

enum class ModelKind {
  ridge,
  lasso_smooth,
  elastic_net,
  logistic_l2,
  svm_sqhinge,
  softmax_l2,
  ridge_per_param,
  hyperclean_softmax,
};

inline constexpr ModelKind kAllModelKinds[] = {
    ModelKind::ridge,        ModelKind::lasso_smooth, ModelKind::elastic_net,     ModelKind::logistic_l2,
    ModelKind::svm_sqhinge,  ModelKind::softmax_l2,   ModelKind::ridge_per_param, ModelKind::hyperclean_softmax,
};

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ridge: return "ridge";
    case ModelKind::lasso_smooth: return "lasso_smooth";
    case ModelKind::elastic_net: return "elastic_net";
    case ModelKind::logistic_l2: return "logistic_l2";
    case ModelKind::svm_sqhinge: return "svm_sqhinge";
    case ModelKind::softmax_l2: return "softmax_l2";
    case ModelKind::ridge_per_param: return "ridge_per_param";
    case ModelKind::hyperclean_softmax: return "hyperclean_softmax";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (ModelKind k : kAllModelKinds)
    if (s == to_string(k)) return k;
  throw ConfigError("problem.kind", "unknown model kind '" + s + "'");
}

// Which label encoding a model expects.
inline TaskKind required_task(ModelKind k) {
  switch (k) {
    case ModelKind::logistic_l2:
    case ModelKind::svm_sqhinge: return TaskKind::binary;
    case ModelKind::softmax_l2:
    case ModelKind::hyperclean_softmax: return TaskKind::multiclass;
    default: return TaskKind::regression;
  }
}

struct ModelSpec {
  ModelKind kind = ModelKind::ridge;
  double smoothing_delta = 1e-6;  // lasso_smooth, elastic_net
  std::size_t num_classes = 2;    // softmax variants
  std::size_t num_samples = 0;    // hyperclean: one weight per dataset row
};

inline ProblemPtr build_problem(const ModelSpec& spec, std::size_t feature_dim) {
  HPO_REQUIRE(feature_dim >= 1, "feature_dim must be >= 1");
  const std::size_t d = feature_dim;
  switch (spec.kind) {
    case ModelKind::ridge:
      return std::make_shared<LinearModelProblem<loss::Squared, penalty::ExpL2>>("ridge", d, loss::Squared{},
                                                                                 penalty::ExpL2{});
    case ModelKind::lasso_smooth:
      if (!(spec.smoothing_delta > 0.0)) throw ConfigError("problem.smoothing_delta", "must be > 0");
      return std::make_shared<LinearModelProblem<loss::Squared, penalty::ExpSmoothL1>>(
          "lasso_smooth", d, loss::Squared{}, penalty::ExpSmoothL1{spec.smoothing_delta});
    case ModelKind::elastic_net:
      if (!(spec.smoothing_delta > 0.0)) throw ConfigError("problem.smoothing_delta", "must be > 0");
      return std::make_shared<LinearModelProblem<loss::Squared, penalty::ElasticNet>>(
          "elastic_net", d, loss::Squared{},
          penalty::ElasticNet{penalty::ExpSmoothL1{spec.smoothing_delta}, penalty::ExpL2{}});
    case ModelKind::logistic_l2:
      return std::make_shared<LinearModelProblem<loss::Logistic, penalty::ExpL2>>("logistic_l2", d, loss::Logistic{},
                                                                                  penalty::ExpL2{});
    case ModelKind::svm_sqhinge:
      return std::make_shared<LinearModelProblem<loss::SquaredHinge, penalty::ExpL2>>(
          "svm_sqhinge", d, loss::SquaredHinge{}, penalty::ExpL2{}, weighting::Uniform{}, false);
    case ModelKind::softmax_l2:
      if (spec.num_classes < 2) throw ConfigError("problem.num_classes", "must be >= 2");
      return std::make_shared<LinearModelProblem<loss::Softmax, penalty::ExpL2>>(
          "softmax_l2", d, loss::Softmax{spec.num_classes}, penalty::ExpL2{});
    case ModelKind::ridge_per_param:
      return std::make_shared<LinearModelProblem<loss::Squared, penalty::PerParamL2>>(
          "ridge_per_param", d, loss::Squared{}, penalty::PerParamL2{d});
    case ModelKind::hyperclean_softmax:
      if (spec.num_classes < 2) throw ConfigError("problem.num_classes", "must be >= 2");
      if (spec.num_samples < 1) throw ConfigError("problem.num_samples", "hyperclean needs one weight per sample");
      return std::make_shared<LinearModelProblem<loss::Softmax, penalty::None, weighting::Sigmoid>>(
          "hyperclean_softmax", d, loss::Softmax{spec.num_classes}, penalty::None{},
          weighting::Sigmoid{spec.num_samples});
  }
  throw ConfigError("problem.kind", "unknown model kind");
}

// ---------------------------------------------------------------------------
// finite-difference verification of the analytic derivatives

struct DerivativeCheck {
  std::string name;
  double max_rel_error = 0.0;
};

struct DerivativeReport {
  std::string problem;
  std::size_t trials = 0;
  std::vector<DerivativeCheck> checks;
  double tolerance = 1e-4;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [&](const DerivativeCheck& c) { return c.max_rel_error < tolerance; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (!(c.max_rel_error < tolerance)) out.push_back(c.name);
    return out;
  }
};

// ||a - b|| / max(1, ||b||)
inline double relative_error(const Vec& a, const Vec& b) {
  return norm(sub(a, b)) / std::max(1.0, norm(b));
}

namespace detail {

inline double fd_step(const Vec& x) { return 1e-5 * (1.0 + norm(x)); }

template <class F>
Vec fd_gradient(const Vec& x, F&& f) {
  const double h = fd_step(x);
  Vec g(x.size());
  Vec xp = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = xp[j];
    xp[j] = orig + h;
    const double fp = f(xp);
    xp[j] = orig - h;
    const double fm = f(xp);
    xp[j] = orig;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace detail

// Probes each analytic derivative against central differences at `trials`
// random (lambda, theta, v). Raw lambda ~ N(0, 0.5^2), theta and v ~ N(0, 1).
inline DerivativeReport verify_derivatives(const BilevelProblem& problem, const DataView& train,
                                           const DataView& val, std::size_t trials, std::uint64_t seed) {
  HPO_REQUIRE(trials >= 1, "trials must be >= 1");
  DerivativeReport rep;
  rep.problem = problem.name();
  rep.trials = trials;
  rep.checks = {{"inner_grad_theta", 0.0}, {"inner_hvp", 0.0}, {"inner_mixed_vp", 0.0},
                {"outer_grad_theta", 0.0}, {"outer_grad_lambda", 0.0}};
  Rng rng(seed);
  const std::size_t p = problem.hyper_dim();
  const std::size_t r = problem.param_dim();
  for (std::size_t t = 0; t < trials; ++t) {
    Vec lam(p), th(r), v(r);
    for (double& x : lam) x = 0.5 * rng.normal();
    for (double& x : th) x = rng.normal();
    for (double& x : v) x = rng.normal();

    const Vec g = problem.inner_grad_theta(lam, th, train);
    const Vec g_fd = detail::fd_gradient(th, [&](const Vec& x) { return problem.inner_loss(lam, x, train); });
    rep.checks[0].max_rel_error = std::max(rep.checks[0].max_rel_error, relative_error(g, g_fd));

    const double vn = norm(v);
    const double h = detail::fd_step(th);
    Vec tp = th, tm = th;
    axpy(h / vn, v, tp);
    axpy(-h / vn, v, tm);
    Vec hv_fd = sub(problem.inner_grad_theta(lam, tp, train), problem.inner_grad_theta(lam, tm, train));
    hv_fd = scale(vn / (2.0 * h), std::move(hv_fd));
    const Vec hv = problem.inner_hvp(lam, th, train, v);
    rep.checks[1].max_rel_error = std::max(rep.checks[1].max_rel_error, relative_error(hv, hv_fd));

    const Vec mv = problem.inner_mixed_vp(lam, th, train, v);
    const Vec mv_fd =
        detail::fd_gradient(lam, [&](const Vec& l) { return dot(problem.inner_grad_theta(l, th, train), v); });
    rep.checks[2].max_rel_error = std::max(rep.checks[2].max_rel_error, relative_error(mv, mv_fd));

    const Vec og = problem.outer_grad_theta(lam, th, val);
    const Vec og_fd = detail::fd_gradient(th, [&](const Vec& x) { return problem.outer_loss(lam, x, val); });
    rep.checks[3].max_rel_error = std::max(rep.checks[3].max_rel_error, relative_error(og, og_fd));

    const Vec ol = problem.outer_grad_lambda(lam, th, val);
    const Vec ol_fd = detail::fd_gradient(lam, [&](const Vec& l) { return problem.outer_loss(l, th, val); });
    rep.checks[4].max_rel_error = std::max(rep.checks[4].max_rel_error, relative_error(ol, ol_fd));
  }
  return rep;
}

}  // namespace hpo

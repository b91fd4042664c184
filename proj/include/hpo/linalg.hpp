#pragma once

// Dense vector/matrix kernel plus matrix-free SPD solvers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpo/errors.hpp"

namespace hpo {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> entries)
      : rows(r), cols(c), data(std::move(entries)) {
    HPO_REQUIRE(data.size() == rows * cols, "entry count must equal rows*cols");
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

// A square map Vec(dim) -> Vec(dim). Used for Hessians applied matrix-free.
struct LinearOperator {
  std::size_t dim = 0;
  std::function<Vec(const Vec&)> apply;

  Vec operator()(const Vec& x) const {
    HPO_REQUIRE(x.size() == dim, "operator input has wrong dimension");
    Vec y = apply(x);
    HPO_REQUIRE(y.size() == dim, "operator changed the dimension");
    return y;
  }
};

struct SolveResult {
  Vec x;
  std::size_t iterations = 0;
  double residual = 0.0;  // ||op(x) - b||
  bool converged = false;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  HPO_REQUIRE(a.size() == b.size(), "dot of mismatched lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  HPO_REQUIRE(x.size() == y.size(), "axpy of mismatched lengths");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec add(const Vec& a, const Vec& b) {
  HPO_REQUIRE(a.size() == b.size(), "add of mismatched lengths");
  Vec out(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += b[i];
  return out;
}

inline Vec sub(const Vec& a, const Vec& b) {
  HPO_REQUIRE(a.size() == b.size(), "sub of mismatched lengths");
  Vec out(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

inline Vec scale(double s, Vec a) {
  for (double& v : a) v *= s;
  return a;
}

inline Vec gemv(const Mat& A, std::span<const double> x) {
  HPO_REQUIRE(A.cols == x.size(), "gemv dimension mismatch: A.cols=" + std::to_string(A.cols) +
                                      " x.len=" + std::to_string(x.size()));
  Vec y(A.rows, 0.0);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const auto r = A.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols; ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

// Partial-pivot LU. Throws SingularMatrixError when a pivot falls below
// 1e-12 * max|A_ij|.
inline Vec dense_solve(const Mat& A, const Vec& b) {
  HPO_REQUIRE(A.rows == A.cols, "dense_solve needs a square matrix");
  HPO_REQUIRE(A.rows == b.size(), "dense_solve rhs has wrong length");
  const std::size_t n = A.rows;
  Mat lu = A;
  Vec x = b;
  const double amax = max_abs(A.data);
  const double pivot_tol = 1e-12 * amax;
  if (n > 0 && amax == 0.0) throw SingularMatrixError("dense_solve: zero matrix");

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(p, k))) p = i;
    if (!(std::abs(lu(p, k)) > pivot_tol))
      throw SingularMatrixError("dense_solve: pivot " + std::to_string(k) + " below tolerance");
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
      std::swap(x[k], x[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
      x[i] -= f * x[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = x[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= lu(k, j) * x[j];
    x[k] = s / lu(k, k);
  }
  return x;
}

inline double residual_norm(const LinearOperator& op, const Vec& x, const Vec& b) {
  return norm(sub(op(x), b));
}

// Conjugate gradients from x0 = 0. Stops once ||op(x) - b|| <= tol * max(1, ||b||)
// or after max_iters iterations.
inline SolveResult cg_solve(const LinearOperator& op, const Vec& b, std::size_t max_iters,
                            double tol) {
  HPO_REQUIRE(b.size() == op.dim, "cg_solve rhs has wrong length");
  HPO_REQUIRE(tol >= 0.0, "tol must be non-negative");
  const double target = tol * std::max(1.0, norm(b));

  SolveResult out;
  out.x.assign(op.dim, 0.0);
  Vec r = b;
  Vec p = r;
  double rr = dot(r, r);
  std::size_t it = 0;
  while (it < max_iters && std::sqrt(rr) > target && rr > 0.0) {
    const Vec Ap = op(p);
    const double pAp = dot(p, Ap);
    if (!std::isfinite(pAp) || pAp <= 0.0)
      throw NumericalError("cg_solve: breakdown, p'Ap = " + std::to_string(pAp), it + 1);
    const double alpha = rr / pAp;
    axpy(alpha, p, out.x);
    axpy(-alpha, Ap, r);
    const double rr_next = dot(r, r);
    if (!std::isfinite(rr_next) || !all_finite(out.x))
      throw NumericalError("cg_solve: non-finite iterate", it + 1);
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    rr = rr_next;
    ++it;
  }
  out.iterations = it;
  out.residual = residual_norm(op, out.x, b);
  out.converged = out.residual <= target;
  return out;
}

// Richardson iteration x <- x - step * (op(x) - b) from x0 = 0. Same stopping
// rule as cg_solve; ten consecutive residual increases count as divergence.
inline SolveResult fixed_point_solve(const LinearOperator& op, const Vec& b, double step,
                                     std::size_t max_iters, double tol) {
  HPO_REQUIRE(b.size() == op.dim, "fixed_point_solve rhs has wrong length");
  HPO_REQUIRE(step > 0.0, "step must be positive");
  HPO_REQUIRE(tol >= 0.0, "tol must be non-negative");
  const double target = tol * std::max(1.0, norm(b));

  SolveResult out;
  out.x.assign(op.dim, 0.0);
  Vec r = sub(op(out.x), b);
  double rnorm = norm(r);
  double prev = rnorm;
  int growth = 0;
  std::size_t it = 0;
  while (it < max_iters && rnorm > target) {
    axpy(-step, r, out.x);
    ++it;
    r = sub(op(out.x), b);
    rnorm = norm(r);
    if (!std::isfinite(rnorm)) throw NumericalError("fixed_point_solve: non-finite residual", it);
    growth = rnorm > prev ? growth + 1 : 0;
    if (growth >= 10)
      throw DivergenceError("fixed_point_solve: residual grew for 10 consecutive iterations", it);
    prev = rnorm;
  }
  out.iterations = it;
  out.residual = rnorm;
  out.converged = rnorm <= target;
  return out;
}

}  // namespace hpo

#pragma once

// Datasets, libsvm ingestion, synthetic generators, label corruption and the
// seeded train/validation splitting process.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hpo/errors.hpp"
#include "hpo/linalg.hpp"
#include "hpo/rng.hpp"

namespace hpo {

using IndexSet = std::vector<std::size_t>;

enum class TaskKind { regression, binary, multiclass };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::regression: return "regression";
    case TaskKind::binary: return "binary";
    case TaskKind::multiclass: return "multiclass";
  }
  return "?";
}

struct Dataset {
  Mat X;  // n x d
  Vec y;  // binary labels are -1/+1, multiclass labels are 0..k-1
  TaskKind task = TaskKind::regression;
  std::size_t num_classes = 0;

  std::size_t size() const { return X.rows; }
  std::size_t dim() const { return X.cols; }
};

inline IndexSet iota_indices(std::size_t n) {
  IndexSet idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Read-only window onto a subset of rows. Does not own the index storage.
struct DataView {
  const Dataset* data = nullptr;
  std::span<const std::size_t> rows;

  DataView() = default;
  DataView(const Dataset& ds, std::span<const std::size_t> idx) : data(&ds), rows(idx) {
    for (std::size_t i : idx) HPO_REQUIRE(i < ds.size(), "view index out of range");
  }

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return data->dim(); }
  std::size_t global_index(std::size_t i) const { return rows[i]; }
  std::span<const double> x(std::size_t i) const { return data->X.row(rows[i]); }
  double y(std::size_t i) const { return data->y[rows[i]]; }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.task = ds.task;
  out.num_classes = ds.num_classes;
  out.X = Mat(idx.size(), ds.dim());
  out.y.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    HPO_REQUIRE(idx[i] < ds.size(), "subset index out of range");
    std::copy_n(ds.X.row(idx[i]).begin(), ds.dim(), out.X.row(i).begin());
    out.y[i] = ds.y[idx[i]];
  }
  return out;
}

// Row-wise concatenation; both parts must share dimension and task.
inline Dataset concat(const Dataset& a, const Dataset& b) {
  HPO_REQUIRE(a.dim() == b.dim(), "concat of datasets with different dimension");
  Dataset out;
  out.task = a.task;
  out.num_classes = std::max(a.num_classes, b.num_classes);
  out.X = Mat(a.size() + b.size(), a.dim());
  std::copy(a.X.data.begin(), a.X.data.end(), out.X.data.begin());
  std::copy(b.X.data.begin(), b.X.data.end(), out.X.data.begin() + a.X.data.size());
  out.y = a.y;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

// ---------------------------------------------------------------------------
// libsvm

enum class TaskHint { automatic, regression, binary, multiclass };

inline Dataset parse_libsvm(std::istream& in, TaskHint hint = TaskHint::automatic) {
  std::vector<double> labels;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  std::size_t max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line
    double label = 0.0;
    try {
      std::size_t used = 0;
      label = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("bad label '" + tok + "'", lineno);
    }
    std::vector<std::pair<std::size_t, double>> feats;
    std::size_t last = 0;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw ParseError("expected idx:val, got '" + tok + "'", lineno);
      std::size_t idx = 0;
      double val = 0.0;
      try {
        std::size_t used = 0;
        const long long raw = std::stoll(tok.substr(0, colon), &used);
        if (used != colon || raw < 1) throw std::invalid_argument(tok);
        idx = static_cast<std::size_t>(raw);
        const std::string vs = tok.substr(colon + 1);
        val = std::stod(vs, &used);
        if (used != vs.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("malformed feature '" + tok + "'", lineno);
      }
      if (idx <= last) throw ParseError("feature indices must be ascending", lineno);
      if (!std::isfinite(val)) throw ParseError("non-finite feature value", lineno);
      last = idx;
      max_index = std::max(max_index, idx);
      feats.emplace_back(idx - 1, val);
    }
    labels.push_back(label);
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw ParseError("no samples", lineno);

  Dataset ds;
  ds.X = Mat(rows.size(), std::max<std::size_t>(max_index, 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (auto [j, v] : rows[i]) ds.X(i, j) = v;
  ds.y = labels;

  const std::set<double> distinct(labels.begin(), labels.end());
  const bool pm_one = distinct == std::set<double>{-1.0, 1.0};
  const bool zero_one = distinct == std::set<double>{0.0, 1.0};
  TaskKind task = TaskKind::regression;
  switch (hint) {
    case TaskHint::automatic: task = (pm_one || zero_one) ? TaskKind::binary : TaskKind::regression; break;
    case TaskHint::regression: task = TaskKind::regression; break;
    case TaskHint::binary: task = TaskKind::binary; break;
    case TaskHint::multiclass: task = TaskKind::multiclass; break;
  }
  ds.task = task;
  if (task == TaskKind::binary) {
    for (double& v : ds.y) {
      if (v == 0.0) v = -1.0;
      if (v != -1.0 && v != 1.0) throw ParseError("binary task needs labels in {-1,+1} or {0,1}", 0);
    }
    ds.num_classes = 2;
  } else if (task == TaskKind::multiclass) {
    double top = 0.0;
    for (double v : ds.y) {
      if (v < 0.0 || v != std::floor(v))
        throw ParseError("multiclass labels must be non-negative integers", 0);
      top = std::max(top, v);
    }
    ds.num_classes = static_cast<std::size_t>(top) + 1;
  }
  return ds;
}

inline Dataset parse_libsvm(const std::string& text, TaskHint hint = TaskHint::automatic) {
  std::istringstream in(text);
  return parse_libsvm(in, hint);
}

inline Dataset read_libsvm(const std::string& path, TaskHint hint = TaskHint::automatic) {
  std::ifstream in(path);
  if (!in) throw Error("read_libsvm: cannot open '" + path + "'");
  return parse_libsvm(in, hint);
}

// ---------------------------------------------------------------------------
// synthetic data

struct LinearData {
  Dataset data;
  Vec beta;
};

// y = X beta + eps with X_ij ~ N(0,1), beta_j ~ N(0,1) drawn from beta_seed and
// eps_i ~ N(0, noise_sigma^2).
inline LinearData gen_linear(std::size_t n, std::size_t d, std::uint64_t beta_seed,
                             double noise_sigma, std::uint64_t seed) {
  HPO_REQUIRE(n >= 2, "gen_linear needs n >= 2");
  HPO_REQUIRE(d >= 1, "gen_linear needs d >= 1");
  HPO_REQUIRE(noise_sigma >= 0.0, "noise_sigma must be non-negative");
  LinearData out;
  Rng brng(beta_seed);
  out.beta.resize(d);
  for (double& b : out.beta) b = brng.normal();

  Rng rng(seed);
  Dataset& ds = out.data;
  ds.task = TaskKind::regression;
  ds.X = Mat(n, d);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.X(i, j) = rng.normal();
    ds.y[i] = dot(ds.X.row(i), out.beta) + noise_sigma * rng.normal();
  }
  return out;
}

struct SoftmaxData {
  Dataset data;
  Mat weights;  // d x k generating weights
};

// Multiclass task with labels argmax_c (x' W)_c, X_ij ~ N(0,1), W ~ N(0,1)
// drawn from weight_seed. Labels are noise-free so corruption is the only
// label noise.
inline SoftmaxData gen_softmax(std::size_t n, std::size_t d, std::size_t k,
                               std::uint64_t weight_seed, std::uint64_t seed) {
  HPO_REQUIRE(n >= 1 && d >= 1, "gen_softmax needs n, d >= 1");
  HPO_REQUIRE(k >= 2, "gen_softmax needs k >= 2");
  SoftmaxData out;
  Rng wrng(weight_seed);
  out.weights = Mat(d, k);
  for (double& w : out.weights.data) w = wrng.normal();

  Rng rng(seed);
  Dataset& ds = out.data;
  ds.task = TaskKind::multiclass;
  ds.num_classes = k;
  ds.X = Mat(n, d);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.X(i, j) = rng.normal();
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += ds.X(i, j) * out.weights(j, c);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    ds.y[i] = static_cast<double>(best);
  }
  return out;
}

struct CorruptedData {
  Dataset data;
  std::vector<bool> clean_mask;  // true = label untouched
};

// Each label is replaced with probability p by a uniformly drawn different class.
inline CorruptedData corrupt_labels(const Dataset& ds, double p, std::uint64_t seed) {
  HPO_REQUIRE(p >= 0.0 && p <= 1.0, "corruption probability must be in [0,1]");
  HPO_REQUIRE(ds.task == TaskKind::multiclass && ds.num_classes >= 2,
              "corrupt_labels needs a multiclass dataset with k >= 2");
  CorruptedData out{ds, std::vector<bool>(ds.size(), true)};
  Rng rng(seed);
  const std::size_t k = ds.num_classes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double u = rng.uniform();
    if (u < p) {
      const auto orig = static_cast<std::size_t>(ds.y[i]);
      std::size_t wrong = static_cast<std::size_t>(rng.below(k - 1));
      if (wrong >= orig) ++wrong;
      out.data.y[i] = static_cast<double>(wrong);
      out.clean_mask[i] = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// splitting

struct Split {
  IndexSet train_idx;  // ascending
  IndexSet val_idx;    // ascending
  std::uint64_t seed = 0;

  DataView train(const Dataset& ds) const { return {ds, train_idx}; }
  DataView val(const Dataset& ds) const { return {ds, val_idx}; }
};

enum class SplitMode { with_replacement, without_replacement };

struct SplitPlan {
  std::size_t U = 5;
  double gamma = 0.25;  // |val| / |train|
  SplitMode mode = SplitMode::without_replacement;
  std::uint64_t master_seed = 0;
  // When non-empty, validation rows are drawn only from these indices.
  IndexSet val_candidates;
};

// Saturating binomial coefficient.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > UINT64_MAX) return UINT64_MAX;
  }
  return static_cast<std::uint64_t>(c);
}

// m_val = round(n * gamma / (1 + gamma)) so that m_val / m_tr matches gamma.
inline std::size_t validation_count(std::size_t n, double gamma) {
  HPO_REQUIRE(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  const double exact = static_cast<double>(n) * gamma / (1.0 + gamma);
  HPO_REQUIRE(std::floor(exact + 1e-9) >= 1.0,
              "n*gamma/(1+gamma) < 1 leaves no validation sample");
  const auto m = static_cast<std::size_t>(std::llround(exact));
  HPO_REQUIRE(m >= 1 && m + 1 <= n, "split would leave an empty train or validation set");
  return m;
}

inline Split split_from_val(std::size_t n, IndexSet val, std::uint64_t seed) {
  std::sort(val.begin(), val.end());
  Split s;
  s.seed = seed;
  s.train_idx.reserve(n - val.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (j < val.size() && val[j] == i) {
      ++j;
      continue;
    }
    s.train_idx.push_back(i);
  }
  s.val_idx = std::move(val);
  return s;
}

inline std::vector<Split> make_splits(std::size_t n, const SplitPlan& plan) {
  HPO_REQUIRE(plan.U >= 1, "U must be >= 1");
  const std::size_t m_val = validation_count(n, plan.gamma);
  const IndexSet candidates = plan.val_candidates.empty() ? iota_indices(n) : plan.val_candidates;
  for (std::size_t c : candidates) HPO_REQUIRE(c < n, "validation candidate out of range");
  if (candidates.size() < m_val)
    throw InfeasiblePlanError("make_splits: only " + std::to_string(candidates.size()) +
                              " validation candidates for m_val = " + std::to_string(m_val));
  if (plan.mode == SplitMode::without_replacement) {
    const std::uint64_t distinct = binomial(candidates.size(), m_val);
    if (plan.U > distinct)
      throw InfeasiblePlanError("make_splits: U = " + std::to_string(plan.U) + " exceeds the " +
                                std::to_string(distinct) + " distinct partitions");
  }

  std::vector<Split> splits;
  splits.reserve(plan.U);
  std::set<IndexSet> seen;
  for (std::size_t i = 0; i < plan.U; ++i) {
    const std::uint64_t base = derive_seed(plan.master_seed, i);
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t seed = attempt == 0 ? base : derive_seed(base, attempt);
      Rng rng(seed);
      IndexSet val;
      for (std::size_t pos : rng.sample_without_replacement(candidates.size(), m_val))
        val.push_back(candidates[pos]);
      std::sort(val.begin(), val.end());
      if (plan.mode == SplitMode::without_replacement && !seen.insert(val).second) continue;
      splits.push_back(split_from_val(n, std::move(val), seed));
      break;
    }
  }
  return splits;
}

inline constexpr std::uint64_t kMaxEnumeratedSplits = 1'000'000;

// Every partition with m_val = validation_count(n, gamma), val sets in
// lexicographic order. Split::seed holds the enumeration index.
inline std::vector<Split> enumerate_all_splits(std::size_t n, double gamma) {
  const std::size_t m = validation_count(n, gamma);
  const std::uint64_t count = binomial(n, m);
  if (count > kMaxEnumeratedSplits)
    throw TooLargeError("enumerate_all_splits: C(" + std::to_string(n) + ", " + std::to_string(m) +
                        ") exceeds " + std::to_string(kMaxEnumeratedSplits));
  std::vector<Split> out;
  out.reserve(count);
  IndexSet comb = iota_indices(m);
  for (std::uint64_t v = 0;; ++v) {
    out.push_back(split_from_val(n, comb, v));
    std::size_t i = m;
    while (i > 0 && comb[i - 1] == n - m + (i - 1)) --i;
    if (i == 0) break;
    ++comb[i - 1];
    for (std::size_t j = i; j < m; ++j) comb[j] = comb[j - 1] + 1;
  }
  return out;
}

struct Holdout {
  Dataset rest;
  Dataset test;
};

// Carves a test set of round(fraction * n) rows before any HPO splitting.
inline Holdout carve_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
  HPO_REQUIRE(fraction > 0.0 && fraction < 1.0, "holdout fraction must be in (0,1)");
  const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  HPO_REQUIRE(m >= 1 && m < ds.size(), "holdout leaves an empty part");
  Rng rng(seed);
  IndexSet test = rng.sample_without_replacement(ds.size(), m);
  std::sort(test.begin(), test.end());
  const Split s = split_from_val(ds.size(), test, seed);
  return {subset(ds, s.train_idx), subset(ds, s.val_idx)};
}

}  // namespace hpo

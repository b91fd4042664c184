#pragma once

// Experiment configuration: a small sectioned key/value format (grammar in
// docs/config.md) and the typed, validated ExperimentConfig built from it.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hpo/data.hpp"
#include "hpo/errors.hpp"
#include "hpo/hypergrad.hpp"
#include "hpo/io.hpp"
#include "hpo/problems.hpp"
#include "hpo/strategies.hpp"

namespace hpo {

// ---------------------------------------------------------------------------
// raw document

struct Integer {
  bool negative = false;
  std::uint64_t magnitude = 0;
};

using Scalar = std::variant<bool, Integer, double, std::string>;

struct ConfigValue {
  std::vector<Scalar> items;
  bool is_array = false;
  std::size_t line = 0;
};

class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text) {
    ConfigDoc doc;
    std::set<std::string> sections;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      const std::string stripped = strip_comment(raw, lineno);
      std::string_view line = trim(stripped);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError("unterminated section header", lineno);
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (!valid_path(section)) throw ParseError("bad section name '" + section + "'", lineno);
        if (!sections.insert(section).second) throw ParseError("duplicate section [" + section + "]", lineno);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
      const std::string key(trim(line.substr(0, eq)));
      if (!valid_name(key)) throw ParseError("bad key '" + key + "'", lineno);
      const std::string path = section.empty() ? key : section + "." + key;
      ConfigValue v = parse_value(trim(line.substr(eq + 1)), lineno);
      if (!doc.entries_.emplace(path, std::move(v)).second) throw ParseError("duplicate key '" + path + "'", lineno);
    }
    return doc;
  }

  bool has(const std::string& path) const { return entries_.count(path) != 0; }

  bool has_section(const std::string& prefix) const {
    const std::string p = prefix + ".";
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& kv) { return kv.first.compare(0, p.size(), p) == 0; });
  }

  std::string get_string(const std::string& path, const std::string& def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    return as_string(path, scalar(path, *v));
  }

  double get_double(const std::string& path, double def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    return as_double(path, scalar(path, *v));
  }

  std::uint64_t get_u64(const std::string& path, std::uint64_t def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    const Scalar& s = scalar(path, *v);
    const auto* i = std::get_if<Integer>(&s);
    if (!i || i->negative) throw ConfigError(path, "expected a non-negative integer");
    return i->magnitude;
  }

  std::size_t get_size(const std::string& path, std::size_t def) const {
    return static_cast<std::size_t>(get_u64(path, def));
  }

  bool get_bool(const std::string& path, bool def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    const Scalar& s = scalar(path, *v);
    const auto* b = std::get_if<bool>(&s);
    if (!b) throw ConfigError(path, "expected true or false");
    return *b;
  }

  // Accepts a single number or an array of numbers.
  Vec get_doubles(const std::string& path, const Vec& def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    Vec out;
    for (const Scalar& s : v->items) out.push_back(as_double(path, s));
    return out;
  }

  std::vector<std::string> get_strings(const std::string& path, const std::vector<std::string>& def) const {
    const ConfigValue* v = find(path);
    if (!v) return def;
    std::vector<std::string> out;
    for (const Scalar& s : v->items) out.push_back(as_string(path, s));
    return out;
  }

  bool is_string(const std::string& path) const {
    const ConfigValue* v = find_raw(path);
    return v && !v->is_array && std::holds_alternative<std::string>(v->items.front());
  }

  // Keys present in the document that no getter asked for.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& kv : entries_)
      if (!used_.count(kv.first)) out.push_back(kv.first);
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  static std::string strip_comment(const std::string& line, std::size_t lineno) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (in_str && c == '\\') {
        ++i;
        continue;
      }
      if (c == '"') in_str = !in_str;
      if (c == '#' && !in_str) return line.substr(0, i);
    }
    if (in_str) throw ParseError("unterminated string", lineno);
    return line;
  }

  static bool valid_name(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
      return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
  }

  static bool valid_path(std::string_view s) {
    std::size_t start = 0;
    while (true) {
      const auto dot = s.find('.', start);
      if (!valid_name(s.substr(start, dot - start))) return false;
      if (dot == std::string_view::npos) return true;
      start = dot + 1;
    }
  }

  static ConfigValue parse_value(std::string_view s, std::size_t lineno) {
    ConfigValue v;
    v.line = lineno;
    if (s.empty()) throw ParseError("missing value", lineno);
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated array", lineno);
      v.is_array = true;
      std::string_view body = trim(s.substr(1, s.size() - 2));
      while (!body.empty()) {
        std::size_t end = 0;
        if (body.front() == '"') {
          end = 1;
          while (end < body.size() && body[end] != '"') end += body[end] == '\\' ? 2 : 1;
          ++end;
        }
        end = body.find(',', std::min(end, body.size()));
        const std::string_view item = trim(body.substr(0, end));
        if (item.empty()) throw ParseError("empty array element", lineno);
        v.items.push_back(parse_scalar(item, lineno));
        if (end == std::string_view::npos) break;
        body = trim(body.substr(end + 1));
        if (body.empty()) throw ParseError("trailing comma in array", lineno);
      }
      return v;
    }
    v.items.push_back(parse_scalar(s, lineno));
    return v;
  }

  static Scalar parse_scalar(std::string_view s, std::size_t lineno) {
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.front() == '"') {
      if (s.size() < 2 || s.back() != '"') throw ParseError("bad string literal", lineno);
      std::string out;
      for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (c == '\\') {
          if (i + 2 >= s.size()) throw ParseError("dangling escape", lineno);
          switch (s[++i]) {
            case 'n': c = '\n'; break;
            case 't': c = '\t'; break;
            case '"': c = '"'; break;
            case '\\': c = '\\'; break;
            default: throw ParseError("unknown escape", lineno);
          }
        } else if (c == '"') {
          throw ParseError("unescaped quote in string", lineno);
        }
        out += c;
      }
      return out;
    }
    const bool looks_numeric = (s.front() >= '0' && s.front() <= '9') || s.front() == '-' || s.front() == '+' ||
                               s.front() == '.';
    if (looks_numeric) {
      std::string_view body = s;
      const bool neg = body.front() == '-';
      if (body.front() == '-' || body.front() == '+') body.remove_prefix(1);
      std::uint64_t mag = 0;
      auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), mag);
      if (ec == std::errc() && p == body.data() + body.size()) return Integer{neg, mag};
      double d = 0.0;
      std::string_view fs = s.front() == '+' ? s.substr(1) : s;
      auto [q, ec2] = std::from_chars(fs.data(), fs.data() + fs.size(), d);
      if (ec2 == std::errc() && q == fs.data() + fs.size() && std::isfinite(d)) return d;
      throw ParseError("bad number '" + std::string(s) + "'", lineno);
    }
    // Bare words are strings.
    if (!valid_name(s)) throw ParseError("bad value '" + std::string(s) + "'", lineno);
    return std::string(s);
  }

  const ConfigValue* find_raw(const std::string& path) const {
    const auto it = entries_.find(path);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const ConfigValue* find(const std::string& path) const {
    const ConfigValue* v = find_raw(path);
    if (v) used_.insert(path);
    return v;
  }

  static const Scalar& scalar(const std::string& path, const ConfigValue& v) {
    if (v.is_array) throw ConfigError(path, "expected a single value, got an array");
    return v.items.front();
  }

  static double as_double(const std::string& path, const Scalar& s) {
    if (const auto* d = std::get_if<double>(&s)) return *d;
    if (const auto* i = std::get_if<Integer>(&s)) {
      const double m = static_cast<double>(i->magnitude);
      return i->negative ? -m : m;
    }
    throw ConfigError(path, "expected a number");
  }

  static std::string as_string(const std::string& path, const Scalar& s) {
    if (const auto* str = std::get_if<std::string>(&s)) return *str;
    throw ConfigError(path, "expected a string");
  }

  std::map<std::string, ConfigValue> entries_;
  mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// typed configuration

struct DataConfig {
  std::string source = "synthetic";  // synthetic | libsvm
  std::string path;                  // libsvm
  std::string task = "auto";         // libsvm label interpretation: auto | regression | binary | multiclass
  std::string generator = "auto";    // synthetic: auto | linear | binary | softmax
  std::size_t n = 100;
  std::size_t d = 5;
  std::size_t classes = 4;  // softmax generator
  double noise_sigma = 0.1;
  std::uint64_t beta_seed = 0;
  std::uint64_t seed = 0;
  std::size_t test_size = 0;   // synthetic: extra rows from the same generator
  double test_fraction = 0.0;  // holdout carved before splitting
  double corrupt_p = 0.0;      // label corruption of the training pool
  std::size_t clean_pool = 0;  // synthetic: uncorrupted rows that alone may serve as validation

  bool operator==(const DataConfig&) const = default;
};

struct SplitConfig {
  std::size_t U = 5;
  double gamma = 0.25;
  SplitMode mode = SplitMode::without_replacement;
  std::uint64_t master_seed = 0;

  bool operator==(const SplitConfig&) const = default;
};

struct ProblemConfig {
  ModelKind kind = ModelKind::ridge;
  double smoothing_delta = 1e-6;
  std::size_t num_classes = 0;  // 0: taken from the data

  bool operator==(const ProblemConfig&) const = default;
};

struct MethodConfig {
  MethodKind kind = MethodKind::itd;
  std::size_t K = 100;
  std::size_t Z = 10;
  std::size_t h = 1;
  double alpha_in = 0.1;
  double fp_step = 0.0;
  double solver_tol = 1e-14;

  HypergradMethod resolve() const { return {kind, K, Z, h, alpha_in, fp_step, solver_tol}; }
  bool operator==(const MethodConfig&) const = default;
};

enum class StrategyKind { single, ehg, oehg };

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::single: return "single";
    case StrategyKind::ehg: return "ehg";
    case StrategyKind::oehg: return "oehg";
  }
  return "?";
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::single;
  std::size_t T = 100;
  OptimizerKind outer = OptimizerKind::gd;
  double alpha_out = 0.01;
  double alpha_deploy = 0.1;  // oehg
  Vec lambda0;                // empty: zeros; one entry: broadcast
  bool warm_start = false;

  bool operator==(const StrategyConfig&) const = default;
};

struct BiasvarConfig {
  Vec grid;
  std::size_t R = 100;
  std::string estimator = "method";  // method | oracle
  std::size_t reference_K = 2000;

  bool operator==(const BiasvarConfig&) const = default;
};

struct CheckConfig {
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  std::size_t n = 40;
  std::size_t d = 3;

  bool operator==(const CheckConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "out";
  std::vector<std::string> formats{"csv", "json"};

  bool has(const std::string& f) const { return std::find(formats.begin(), formats.end(), f) != formats.end(); }
  bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
  DataConfig data;
  SplitConfig split;
  ProblemConfig problem;
  MethodConfig method;
  StrategyConfig strategy;
  BiasvarConfig biasvar;
  CheckConfig check;
  OutputConfig output;

  bool operator==(const ExperimentConfig&) const = default;
};

// "lo:hi:count" -> count evenly spaced values including both ends.
inline Vec parse_grid(const std::string& spec) {
  const auto a = spec.find(':');
  const auto b = spec.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw ConfigError("biasvar.grid", "expected lo:hi:count");
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  const auto num = [&](std::string_view s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("biasvar.grid", "bad number in '" + spec + "'");
  };
  const std::string_view sv(spec);
  num(sv.substr(0, a), lo);
  num(sv.substr(a + 1, b - a - 1), hi);
  num(sv.substr(b + 1), count);
  if (count < 1) throw ConfigError("biasvar.grid", "count must be >= 1");
  if (count == 1) return {lo};
  Vec g(count);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

namespace detail {

template <class E, class F>
E parse_enum(const std::string& path, const std::string& s, std::initializer_list<E> all, F name) {
  for (E e : all)
    if (s == name(e)) return e;
  throw ConfigError(path, "unknown value '" + s + "'");
}

inline const char* split_mode_name(SplitMode m) {
  return m == SplitMode::with_replacement ? "with_replacement" : "without_replacement";
}

}  // namespace detail

inline ExperimentConfig config_from_doc(const ConfigDoc& doc) {
  ExperimentConfig c;
  DataConfig& d = c.data;
  d.source = doc.get_string("data.source", d.source);
  d.path = doc.get_string("data.path", d.path);
  d.task = doc.get_string("data.task", d.task);
  d.generator = doc.get_string("data.generator", d.generator);
  d.n = doc.get_size("data.n", d.n);
  d.d = doc.get_size("data.d", d.d);
  d.classes = doc.get_size("data.classes", d.classes);
  d.noise_sigma = doc.get_double("data.noise_sigma", d.noise_sigma);
  d.beta_seed = doc.get_u64("data.beta_seed", d.beta_seed);
  d.seed = doc.get_u64("data.seed", d.seed);
  d.test_size = doc.get_size("data.test_size", d.test_size);
  d.test_fraction = doc.get_double("data.test_fraction", d.test_fraction);
  d.corrupt_p = doc.get_double("data.corrupt.p", d.corrupt_p);
  d.clean_pool = doc.get_size("data.corrupt.clean_pool", d.clean_pool);

  SplitConfig& s = c.split;
  s.U = doc.get_size("split.U", s.U);
  s.gamma = doc.get_double("split.gamma", s.gamma);
  s.mode = detail::parse_enum("split.mode", doc.get_string("split.mode", detail::split_mode_name(s.mode)),
                              {SplitMode::with_replacement, SplitMode::without_replacement},
                              detail::split_mode_name);
  s.master_seed = doc.get_u64("split.master_seed", s.master_seed);

  ProblemConfig& p = c.problem;
  p.kind = parse_model_kind(doc.get_string("problem.kind", to_string(p.kind)));
  p.smoothing_delta = doc.get_double("problem.smoothing_delta", p.smoothing_delta);
  p.num_classes = doc.get_size("problem.num_classes", p.num_classes);

  MethodConfig& m = c.method;
  m.kind = parse_method_kind(doc.get_string("method.kind", to_string(m.kind)));
  m.K = doc.get_size("method.K", m.K);
  m.Z = doc.get_size("method.Z", m.Z);
  m.h = doc.get_size("method.h", m.h);
  m.alpha_in = doc.get_double("method.alpha_in", m.alpha_in);
  m.fp_step = doc.get_double("method.fp_step", m.fp_step);
  m.solver_tol = doc.get_double("method.solver_tol", m.solver_tol);

  StrategyConfig& st = c.strategy;
  st.kind = detail::parse_enum("strategy.kind", doc.get_string("strategy.kind", to_string(st.kind)),
                               {StrategyKind::single, StrategyKind::ehg, StrategyKind::oehg},
                               [](StrategyKind k) { return to_string(k); });
  st.T = doc.get_size("strategy.T", st.T);
  st.alpha_deploy = doc.get_double("strategy.alpha_deploy", st.alpha_deploy);
  st.lambda0 = doc.get_doubles("strategy.lambda0", st.lambda0);
  st.warm_start = doc.get_bool("strategy.warm_start", st.warm_start);
  st.outer = parse_optimizer_kind(doc.get_string("strategy.outer.kind", to_string(st.outer)));
  st.alpha_out = doc.get_double("strategy.outer.alpha_out", st.alpha_out);

  BiasvarConfig& b = c.biasvar;
  if (doc.is_string("biasvar.grid"))
    b.grid = parse_grid(doc.get_string("biasvar.grid", ""));
  else
    b.grid = doc.get_doubles("biasvar.grid", b.grid);
  b.R = doc.get_size("biasvar.R", b.R);
  b.estimator = doc.get_string("biasvar.estimator", b.estimator);
  b.reference_K = doc.get_size("biasvar.reference_K", b.reference_K);

  CheckConfig& ck = c.check;
  ck.trials = doc.get_size("check.trials", ck.trials);
  ck.seed = doc.get_u64("check.seed", ck.seed);
  ck.n = doc.get_size("check.n", ck.n);
  ck.d = doc.get_size("check.d", ck.d);

  OutputConfig& o = c.output;
  o.dir = doc.get_string("output.dir", o.dir);
  o.formats = doc.get_strings("output.formats", o.formats);

  if (const auto extra = doc.unused(); !extra.empty()) throw ConfigError(extra.front(), "unknown key");
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  return config_from_doc(ConfigDoc::parse(text));
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(io::read_file(path));
}

// Range checks shared by every command; command-specific checks live with
// the commands.
inline void validate(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  if (d.source != "synthetic" && d.source != "libsvm") throw ConfigError("data.source", "must be synthetic or libsvm");
  if (d.source == "libsvm" && d.path.empty()) throw ConfigError("data.path", "required for libsvm data");
  if (d.task != "auto" && d.task != "regression" && d.task != "binary" && d.task != "multiclass")
    throw ConfigError("data.task", "must be auto, regression, binary or multiclass");
  if (d.generator != "auto" && d.generator != "linear" && d.generator != "binary" && d.generator != "softmax")
    throw ConfigError("data.generator", "must be auto, linear, binary or softmax");
  if (d.source == "synthetic") {
    if (d.n < 2) throw ConfigError("data.n", "must be >= 2");
    if (d.d < 1) throw ConfigError("data.d", "must be >= 1");
    if (d.classes < 2) throw ConfigError("data.classes", "must be >= 2");
    if (!(d.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma", "must be >= 0");
  } else {
    if (d.test_size > 0) throw ConfigError("data.test_size", "only for synthetic data; use test_fraction");
    if (d.clean_pool > 0) throw ConfigError("data.corrupt.clean_pool", "only for synthetic data");
  }
  if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) throw ConfigError("data.test_fraction", "must be in [0, 1)");
  if (d.test_size > 0 && d.test_fraction > 0.0)
    throw ConfigError("data.test_fraction", "set test_size or test_fraction, not both");
  if (!(d.corrupt_p >= 0.0 && d.corrupt_p <= 1.0)) throw ConfigError("data.corrupt.p", "must be in [0, 1]");

  if (c.split.U < 1) throw ConfigError("split.U", "must be >= 1");
  if (!(c.split.gamma > 0.0 && c.split.gamma <= 1.0)) throw ConfigError("split.gamma", "must be in (0, 1]");

  if ((c.problem.kind == ModelKind::lasso_smooth || c.problem.kind == ModelKind::elastic_net) &&
      !(c.problem.smoothing_delta > 0.0))
    throw ConfigError("problem.smoothing_delta", "must be > 0");

  c.method.resolve().validate();

  if (c.strategy.T < 1) throw ConfigError("strategy.T", "must be >= 1");
  if (!(c.strategy.alpha_out > 0.0)) throw ConfigError("strategy.outer.alpha_out", "must be > 0");
  if (!(c.strategy.alpha_deploy > 0.0)) throw ConfigError("strategy.alpha_deploy", "must be > 0");
  for (double v : c.strategy.lambda0)
    if (!std::isfinite(v)) throw ConfigError("strategy.lambda0", "must be finite");

  if (c.biasvar.R < 2) throw ConfigError("biasvar.R", "must be >= 2");
  if (c.biasvar.estimator != "method" && c.biasvar.estimator != "oracle")
    throw ConfigError("biasvar.estimator", "must be method or oracle");
  for (double v : c.biasvar.grid)
    if (!(v > 0.0)) throw ConfigError("biasvar.grid", "values must be > 0");

  if (c.check.trials < 1) throw ConfigError("check.trials", "must be >= 1");
  if (c.check.n < 4) throw ConfigError("check.n", "must be >= 4");
  if (c.check.d < 1) throw ConfigError("check.d", "must be >= 1");

  if (c.output.dir.empty()) throw ConfigError("output.dir", "must not be empty");
  for (const auto& f : c.output.formats)
    if (f != "csv" && f != "json") throw ConfigError("output.formats", "unknown format '" + f + "'");
}

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

inline std::string num(double v) {
  std::string s = io::format_shortest(v);
  // Keep doubles recognisable as floats on re-read.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

inline std::string array(const Vec& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

}  // namespace detail

// Fully resolved config text; parse_experiment_config(to_config_text(c)) == c.
inline std::string to_config_text(const ExperimentConfig& c) {
  using detail::num;
  using detail::quote;
  std::ostringstream o;
  const auto& d = c.data;
  o << "[data]\n"
    << "source = " << quote(d.source) << "\n"
    << "path = " << quote(d.path) << "\n"
    << "task = " << quote(d.task) << "\n"
    << "generator = " << quote(d.generator) << "\n"
    << "n = " << d.n << "\n"
    << "d = " << d.d << "\n"
    << "classes = " << d.classes << "\n"
    << "noise_sigma = " << num(d.noise_sigma) << "\n"
    << "beta_seed = " << d.beta_seed << "\n"
    << "seed = " << d.seed << "\n"
    << "test_size = " << d.test_size << "\n"
    << "test_fraction = " << num(d.test_fraction) << "\n\n"
    << "[data.corrupt]\n"
    << "p = " << num(d.corrupt_p) << "\n"
    << "clean_pool = " << d.clean_pool << "\n\n";
  o << "[split]\n"
    << "U = " << c.split.U << "\n"
    << "gamma = " << num(c.split.gamma) << "\n"
    << "mode = " << quote(detail::split_mode_name(c.split.mode)) << "\n"
    << "master_seed = " << c.split.master_seed << "\n\n";
  o << "[problem]\n"
    << "kind = " << quote(to_string(c.problem.kind)) << "\n"
    << "smoothing_delta = " << num(c.problem.smoothing_delta) << "\n"
    << "num_classes = " << c.problem.num_classes << "\n\n";
  const auto& m = c.method;
  o << "[method]\n"
    << "kind = " << quote(to_string(m.kind)) << "\n"
    << "K = " << m.K << "\n"
    << "Z = " << m.Z << "\n"
    << "h = " << m.h << "\n"
    << "alpha_in = " << num(m.alpha_in) << "\n"
    << "fp_step = " << num(m.fp_step) << "\n"
    << "solver_tol = " << num(m.solver_tol) << "\n\n";
  const auto& st = c.strategy;
  o << "[strategy]\n"
    << "kind = " << quote(to_string(st.kind)) << "\n"
    << "T = " << st.T << "\n"
    << "alpha_deploy = " << num(st.alpha_deploy) << "\n"
    << "lambda0 = " << detail::array(st.lambda0) << "\n"
    << "warm_start = " << (st.warm_start ? "true" : "false") << "\n\n"
    << "[strategy.outer]\n"
    << "kind = " << quote(to_string(st.outer)) << "\n"
    << "alpha_out = " << num(st.alpha_out) << "\n\n";
  o << "[biasvar]\n"
    << "grid = " << detail::array(c.biasvar.grid) << "\n"
    << "R = " << c.biasvar.R << "\n"
    << "estimator = " << quote(c.biasvar.estimator) << "\n"
    << "reference_K = " << c.biasvar.reference_K << "\n\n";
  o << "[check]\n"
    << "trials = " << c.check.trials << "\n"
    << "seed = " << c.check.seed << "\n"
    << "n = " << c.check.n << "\n"
    << "d = " << c.check.d << "\n\n";
  o << "[output]\n"
    << "dir = " << quote(c.output.dir) << "\n"
    << "formats = [";
  for (std::size_t i = 0; i < c.output.formats.size(); ++i) o << (i ? ", " : "") << quote(c.output.formats[i]);
  o << "]\n";
  return o.str();
}

}  // namespace hpo

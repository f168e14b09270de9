#pragma once

// Field tables shared by the run-config loader and the model archive. Each
// describe() lists the persisted fields of one struct; FieldReader and
// FieldWriter walk the same table, so the two directions cannot drift apart.
// Seeds and worker counts of sub-configs are derived at fit time and are not
// part of the tables.

#include <concepts>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "scbm/bench.hpp"
#include "scbm/error.hpp"
#include "scbm/interpret.hpp"

namespace scbm::detail {

using nlohmann::json;

/// Finite values as numbers; nan and infinities as strings.
json encode_double(double v);

class FieldReader;
class FieldWriter;

template <class V> void describe(V& v, SolverOptions& c) {
  v("tol", c.tol);
  v("max_iter", c.max_iter);
}

template <class V> void describe(V& v, PathConfig& c) {
  v("n_lambda", c.n_lambda);
  v("lambda_min_ratio", c.lambda_min_ratio);
  v("folds", c.folds);
  v("solver", c.solver);
}

template <class V> void describe(V& v, ForwardConfig& c) {
  v("m_max", c.m_max);
  v("k_max", c.k_max);
  v("min_active", c.min_active);
  v("min_child", c.min_child);
  v("knot_subsample", c.knot_subsample);
  v("naive_lof", c.naive_lof);
}

template <class V> void describe(V& v, ForestConfig& c) {
  v("trees", c.trees);
  v("max_depth", c.max_depth);
  v("min_leaf", c.min_leaf);
  v("features_per_split", c.features_per_split);
  v("bootstrap", c.bootstrap);
}

template <class V> void describe(V& v, PropensityConfig& c) {
  v("kind", c.kind);
  v("constant", c.constant);
  v("logistic_ridge", c.logistic_ridge);
  v("logistic_tolerance", c.logistic_tolerance);
  v("logistic_max_iter", c.logistic_max_iter);
  v("forest", c.forest);
}

template <class V> void describe(V& v, ScbmConfig& c) {
  v("variant", c.variant);
  v("b", c.b);
  v("forward", c.forward);
  v("propensity", c.propensity);
  v("clip_epsilon", c.clip_epsilon);
  v("lasso", c.lasso);
  v("fixed_lambda", c.fixed_lambda);
  v("identity_resample", c.identity_resample);
}

template <class V> void describe(V& v, BcmConfig& c) {
  v("b", c.b);
  v("q", c.q);
  v("forward", c.forward);
  v("identity_resample", c.identity_resample);
}

template <class V> void describe(V& v, BenchSetting& c) {
  v("n", c.n);
  v("p", c.p);
}

// Grid fields only; the estimator sections come from the top-level config.
template <class V> void describe(V& v, BenchConfig& c) {
  v("scenarios", c.scenarios);
  v("settings", c.settings);
  v("estimators", c.estimators);
  v("replications", c.replications);
  v("n_test", c.n_test);
  v("oracle_propensity", c.oracle_propensity);
}

template <class V> void describe(V& v, CalibrationConfig& c) {
  v("k", c.k);
  v("replications", c.replications);
  v("holdout", c.holdout);
  v("iptw", c.iptw);
}

template <class T>
concept Described = requires(FieldReader& r, T& t) { describe(r, t); };

/// Reads fields from a JSON object. Strict readers reject unknown keys and
/// report problems as ConfigError; lenient ones (archives) ignore unknown
/// keys and report SchemaError.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path, bool strict);

  template <class T> void operator()(const char* key, T& value) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, value, child(key));
  }

  /// Throws on keys no field claimed (strict mode only).
  void finish() const;

  [[noreturn]] void fail(const std::string& path, const std::string& what) const;
  bool strict() const { return strict_; }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const json& j, bool& out, const std::string& path) const;
  void read(const json& j, double& out, const std::string& path) const;
  void read(const json& j, std::string& out, const std::string& path) const;
  void read(const json& j, PropensityKind& out, const std::string& path) const;
  void read(const json& j, Variant& out, const std::string& path) const;

  template <std::unsigned_integral T> void read(const json& j, T& out, const std::string& path) const {
    if (!j.is_number_unsigned()) fail(path, "expected a non-negative integer");
    out = j.get<T>();
  }
  template <std::signed_integral T> void read(const json& j, T& out, const std::string& path) const {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    out = j.get<T>();
  }
  template <class T> void read(const json& j, std::optional<T>& out, const std::string& path) const {
    if (j.is_null()) {
      out.reset();
      return;
    }
    T value{};
    read(j, value, path);
    out = value;
  }
  template <class T> void read(const json& j, std::vector<T>& out, const std::string& path) const {
    if (!j.is_array()) fail(path, "expected an array");
    std::vector<T> values(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) read(j[i], values[i], path + "[" + std::to_string(i) + "]");
    out = std::move(values);
  }
  template <Described T> void read(const json& j, T& out, const std::string& path) const {
    FieldReader nested(j, path, strict_);
    describe(nested, out);
    nested.finish();
  }

  const json& j_;
  std::string path_;
  bool strict_;
  std::set<std::string> seen_;
};

class FieldWriter {
 public:
  template <class T> void operator()(const char* key, const T& value) { j_[key] = write(value); }
  json take() { return std::move(j_); }

  template <class T> static json value(const T& v) { return write(v); }

  template <class T> static json of(const T& value) {
    FieldWriter w;
    describe(w, const_cast<T&>(value));
    return w.take();
  }

 private:
  static json write(bool v) { return v; }
  static json write(double v) { return encode_double(v); }
  static json write(const std::string& v) { return v; }
  static json write(PropensityKind v);
  static json write(Variant v) { return to_string(v); }
  template <std::integral T> static json write(T v) { return v; }
  template <class T> static json write(const std::optional<T>& v) { return v ? write(*v) : json(nullptr); }
  template <class T> static json write(const std::vector<T>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(write(x));
    return a;
  }
  template <Described T> static json write(const T& v) { return of(v); }

  json j_ = json::object();
};

/// Reads a described struct from `j`, starting from the current contents of out.
template <Described T> void read_fields(const json& j, T& out, const std::string& path, bool strict) {
  FieldReader r(j, path, strict);
  describe(r, out);
  r.finish();
}

std::string to_string(PropensityKind kind);
PropensityKind parse_propensity_kind(const std::string& name);

}  // namespace scbm::detail

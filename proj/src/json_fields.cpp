#include "json_fields.hpp"

#include <cmath>

namespace scbm::detail {

json encode_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

FieldReader::FieldReader(const json& j, std::string path, bool strict)
    : j_(j), path_(std::move(path)), strict_(strict) {
  if (!j_.is_object()) fail(path_, "expected an object");
}

void FieldReader::finish() const {
  if (!strict_) return;
  for (const auto& [key, value] : j_.items()) {
    if (!seen_.count(key)) fail(child(key), "unknown field");
  }
}

void FieldReader::fail(const std::string& path, const std::string& what) const {
  const std::string msg = (path.empty() ? std::string("<root>") : path) + ": " + what;
  if (strict_) throw ConfigError(msg);
  throw SchemaError(msg);
}

void FieldReader::read(const json& j, bool& out, const std::string& path) const {
  if (!j.is_boolean()) fail(path, "expected true or false");
  out = j.get<bool>();
}

void FieldReader::read(const json& j, double& out, const std::string& path) const {
  if (j.is_number()) {
    out = j.get<double>();
    return;
  }
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "nan") {
      out = std::nan("");
      return;
    }
    if (s == "inf" || s == "-inf") {
      out = s == "inf" ? HUGE_VAL : -HUGE_VAL;
      return;
    }
  }
  fail(path, "expected a number");
}

void FieldReader::read(const json& j, std::string& out, const std::string& path) const {
  if (!j.is_string()) fail(path, "expected a string");
  out = j.get<std::string>();
}

void FieldReader::read(const json& j, PropensityKind& out, const std::string& path) const {
  std::string s;
  read(j, s, path);
  try {
    out = parse_propensity_kind(s);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

void FieldReader::read(const json& j, Variant& out, const std::string& path) const {
  std::string s;
  read(j, s, path);
  try {
    out = parse_variant(s);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

json FieldWriter::write(PropensityKind v) { return to_string(v); }

std::string to_string(PropensityKind kind) {
  switch (kind) {
    case PropensityKind::known_constant: return "known_constant";
    case PropensityKind::logistic: return "logistic";
    case PropensityKind::random_forest: return "random_forest";
  }
  return "random_forest";
}

PropensityKind parse_propensity_kind(const std::string& name) {
  if (name == "known_constant") return PropensityKind::known_constant;
  if (name == "logistic") return PropensityKind::logistic;
  if (name == "random_forest") return PropensityKind::random_forest;
  throw ConfigError("unknown propensity kind '" + name + "' (known_constant, logistic, random_forest)");
}

}  // namespace scbm::detail

#include "scbm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_fields.hpp"
#include "scbm/error.hpp"
#include "scbm/util.hpp"

namespace scbm {

namespace {

using detail::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(CsvError::Kind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quoted(const std::string& s) { return "'" + s + "'"; }

std::string where(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column " + quoted(column);
}

// Whole-cell decimal parse; nullopt for anything else, including nan/inf.
std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

double cell_number(const std::string& cell, std::size_t row, const std::string& column) {
  const auto v = parse_number(cell);
  if (!v) {
    throw CsvError(CsvError::Kind::non_numeric,
                   where(row, column) + ": expected a finite number, got " + quoted(cell), row, column);
  }
  return *v;
}

std::optional<std::size_t> column_index(const CsvTable& table, const std::string& name) {
  for (std::size_t k = 0; k < table.header.size(); ++k) {
    if (table.header[k] == name) return k;
  }
  return std::nullopt;
}

// ---- archive encoding ----

[[noreturn]] void schema(const std::string& path, const std::string& what) {
  throw SchemaError(path + ": " + what);
}

const json& need(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) schema(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) schema(path, std::string("missing field '") + key + "'");
  return *it;
}

template <class T> T get(const json& j, const char* key, const std::string& path) {
  const json wrapped{{key, need(j, key, path)}};
  T out{};
  detail::FieldReader r(wrapped, path, false);
  r(key, out);
  return out;
}

json encode(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(detail::encode_double(v(i)));
  return a;
}

Vector decode_vector(const json& j, const std::string& path) {
  const json wrapped{{"v", j}};
  const auto values = get<std::vector<double>>(wrapped, "v", path);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json encode(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(encode(Vector(m.row(i).transpose())));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix decode_matrix(const json& j, const std::string& path) {
  const auto r = get<std::size_t>(j, "rows", path);
  const auto c = get<std::size_t>(j, "cols", path);
  const json& data = need(j, "data", path);
  if (!data.is_array() || data.size() != r) schema(path + ".data", "expected " + std::to_string(r) + " rows");
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < r; ++i) {
    const Vector row = decode_vector(data[i], path + ".data[" + std::to_string(i) + "]");
    if (static_cast<std::size_t>(row.size()) != c) schema(path, "ragged matrix row " + std::to_string(i));
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

json encode(const std::vector<BasisFunction>& basis) {
  json out = json::array();
  for (const auto& f : basis) {
    json terms = json::array();
    for (const auto& h : f.terms()) {
      terms.push_back(json::array({h.variable, static_cast<int>(h.sign), detail::encode_double(h.knot)}));
    }
    out.push_back(terms);
  }
  return out;
}

std::vector<BasisFunction> decode_basis(const json& j, std::size_t p, const std::string& path) {
  if (!j.is_array()) schema(path, "expected an array of basis functions");
  std::vector<BasisFunction> out;
  for (std::size_t g = 0; g < j.size(); ++g) {
    const std::string at = path + "[" + std::to_string(g) + "]";
    if (!j[g].is_array()) schema(at, "expected an array of hinge terms");
    std::vector<HingeTerm> terms;
    for (const auto& t : j[g]) {
      if (!t.is_array() || t.size() != 3 || !t[0].is_number_unsigned() || !t[1].is_number_integer()) {
        schema(at, "hinge terms are [variable, sign, knot]");
      }
      HingeTerm h;
      h.variable = t[0].get<std::size_t>();
      const int sign = t[1].get<int>();
      if (sign != 1 && sign != -1) schema(at, "hinge sign must be 1 or -1");
      if (h.variable >= p) schema(at, "hinge variable beyond p");
      h.sign = sign > 0 ? Sign::positive : Sign::negative;
      const json knot{{"k", t[2]}};
      h.knot = get<double>(knot, "k", at);
      terms.push_back(h);
    }
    try {
      out.emplace_back(std::move(terms));
    } catch (const InvalidInput& e) {
      schema(at, e.what());
    }
  }
  return out;
}

json encode(const CvCurve& c) {
  return json{{"lambdas", detail::FieldWriter::value(c.lambdas)},
              {"mean_error", detail::FieldWriter::value(c.mean_error)},
              {"standard_error", detail::FieldWriter::value(c.standard_error)},
              {"best", c.best},
              {"one_se", c.one_se}};
}

CvCurve decode_curve(const json& j, const std::string& path) {
  CvCurve c;
  c.lambdas = get<std::vector<double>>(j, "lambdas", path);
  c.mean_error = get<std::vector<double>>(j, "mean_error", path);
  c.standard_error = get<std::vector<double>>(j, "standard_error", path);
  c.best = get<std::size_t>(j, "best", path);
  c.one_se = get<std::size_t>(j, "one_se", path);
  return c;
}

json encode(const PropensityModel& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantPropensity>) {
          return json{{"kind", "known_constant"}, {"value", detail::encode_double(m.value)}};
        } else if constexpr (std::is_same_v<T, LogisticPropensity>) {
          return json{{"kind", "logistic"},
                      {"intercept", detail::encode_double(m.intercept)},
                      {"coefficients", encode(m.coefficients)},
                      {"iterations", m.iterations},
                      {"gradient_norm", detail::encode_double(m.gradient_norm)}};
        } else {
          json trees = json::array();
          for (const auto& tree : m.trees) {
            json feature = json::array(), threshold = json::array(), left = json::array(),
                 right = json::array(), value = json::array();
            for (const auto& node : tree.nodes) {
              feature.push_back(node.feature);
              threshold.push_back(detail::encode_double(node.threshold));
              left.push_back(node.left);
              right.push_back(node.right);
              value.push_back(detail::encode_double(node.value));
            }
            trees.push_back(json{{"feature", feature},
                                 {"threshold", threshold},
                                 {"left", left},
                                 {"right", right},
                                 {"value", value}});
          }
          return json{{"kind", "random_forest"},
                      {"config", detail::FieldWriter::of(m.config)},
                      {"seed", m.seed},
                      {"trees", trees}};
        }
      },
      model.parameters());
}

PropensityModel decode_propensity(const json& j, std::size_t p, const std::string& path) {
  const auto kind = get<std::string>(j, "kind", path);
  if (kind == "known_constant") {
    return PropensityModel(ConstantPropensity{get<double>(j, "value", path)});
  }
  if (kind == "logistic") {
    LogisticPropensity m;
    m.intercept = get<double>(j, "intercept", path);
    m.coefficients = decode_vector(need(j, "coefficients", path), path + ".coefficients");
    if (static_cast<std::size_t>(m.coefficients.size()) != p) schema(path, "coefficient count differs from p");
    m.iterations = get<std::size_t>(j, "iterations", path);
    m.gradient_norm = get<double>(j, "gradient_norm", path);
    return PropensityModel(std::move(m));
  }
  if (kind != "random_forest") schema(path + ".kind", "unknown propensity kind " + quoted(kind));
  ForestPropensity m;
  detail::read_fields(need(j, "config", path), m.config, path + ".config", false);
  m.seed = get<std::uint64_t>(j, "seed", path);
  const json& trees = need(j, "trees", path);
  if (!trees.is_array()) schema(path + ".trees", "expected an array");
  for (std::size_t k = 0; k < trees.size(); ++k) {
    const std::string at = path + ".trees[" + std::to_string(k) + "]";
    const auto feature = get<std::vector<std::int32_t>>(trees[k], "feature", at);
    const auto threshold = get<std::vector<double>>(trees[k], "threshold", at);
    const auto left = get<std::vector<std::int32_t>>(trees[k], "left", at);
    const auto right = get<std::vector<std::int32_t>>(trees[k], "right", at);
    const auto value = get<std::vector<double>>(trees[k], "value", at);
    const std::size_t size = feature.size();
    if (size == 0 || threshold.size() != size || left.size() != size || right.size() != size ||
        value.size() != size) {
      schema(at, "node arrays must be non-empty and of equal length");
    }
    ProbabilityTree tree;
    tree.nodes.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      auto& node = tree.nodes[i];
      node = {feature[i], threshold[i], left[i], right[i], value[i]};
      if (node.feature < 0) continue;
      // children always follow their parent, which also rules out cycles
      const auto id = static_cast<std::int32_t>(i);
      const auto n = static_cast<std::int32_t>(size);
      if (static_cast<std::size_t>(node.feature) >= p || node.left <= id || node.right <= id ||
          node.left >= n || node.right >= n) {
        schema(at, "invalid split node " + std::to_string(i));
      }
    }
    m.trees.push_back(std::move(tree));
  }
  if (m.trees.empty()) schema(path + ".trees", "forest has no trees");
  return PropensityModel(std::move(m));
}

json encode_model(const FittedScbm& m) {
  const auto& d = m.diagnostics;
  return json{{"variant", to_string(m.variant)},
              {"p", m.p},
              {"feature_names", m.feature_names},
              {"basis", encode(m.basis)},
              {"provenance", m.provenance},
              {"coef_treat", encode(m.coef_treat)},
              {"coef_control", encode(m.coef_control)},
              {"weights", encode(m.weights)},
              {"propensity", encode(m.propensity)},
              {"standardization", json{{"column_scale", encode(d.column_scale)}}},
              {"config", detail::FieldWriter::of(m.config)},
              {"seed", m.config.seed},
              {"threads", m.config.threads},
              {"diagnostics",
               json{{"lambda", detail::encode_double(d.lambda)},
                    {"cv", encode(d.curve)},
                    {"active_groups", d.active_groups},
                    {"empty_replicates", d.empty_replicates},
                    {"dropped_basis", d.dropped_basis},
                    {"warnings", d.warnings}}}};
}

FittedScbm decode_scbm(const json& j) {
  const std::string path = "model";
  FittedScbm m;
  m.variant = get<Variant>(j, "variant", path);
  m.p = get<std::size_t>(j, "p", path);
  m.feature_names = get<std::vector<std::string>>(j, "feature_names", path);
  m.basis = decode_basis(need(j, "basis", path), m.p, path + ".basis");
  m.provenance = get<std::vector<std::size_t>>(j, "provenance", path);
  m.coef_treat = decode_vector(need(j, "coef_treat", path), path + ".coef_treat");
  m.coef_control = decode_vector(need(j, "coef_control", path), path + ".coef_control");
  m.weights = decode_vector(need(j, "weights", path), path + ".weights");
  m.propensity = decode_propensity(need(j, "propensity", path), m.p, path + ".propensity");
  if (const auto it = j.find("config"); it != j.end()) {
    detail::read_fields(*it, m.config, path + ".config", false);
  }
  m.config.seed = get<std::uint64_t>(j, "seed", path);
  m.config.threads = get<std::size_t>(j, "threads", path);
  const json& s = need(j, "standardization", path);
  m.diagnostics.column_scale = decode_vector(need(s, "column_scale", path), path + ".standardization");
  const json& d = need(j, "diagnostics", path);
  const std::string dp = path + ".diagnostics";
  m.diagnostics.lambda = get<double>(d, "lambda", dp);
  m.diagnostics.curve = decode_curve(need(d, "cv", dp), dp + ".cv");
  m.diagnostics.active_groups = get<std::size_t>(d, "active_groups", dp);
  m.diagnostics.empty_replicates = get<std::size_t>(d, "empty_replicates", dp);
  m.diagnostics.dropped_basis = get<std::size_t>(d, "dropped_basis", dp);
  m.diagnostics.warnings = get<std::vector<std::string>>(d, "warnings", dp);
  if (!m.feature_names.empty() && m.feature_names.size() != m.p) schema(path, "feature_names length differs from p");
  m.check_consistent();
  return m;
}

json encode_model(const CausalMarsFit& m) {
  json splits = json::array();
  for (const auto& s : m.splits) {
    splits.push_back(json{{"parent", s.parent},
                          {"variable", s.variable},
                          {"knot", detail::encode_double(s.knot)},
                          {"gain", detail::encode_double(s.lof)}});
  }
  return json{{"p", m.p},
              {"feature_names", m.feature_names},
              {"basis", encode(m.basis)},
              {"coef_treat", encode(m.coef_treat)},
              {"coef_control", encode(m.coef_control)},
              {"rss_trace", detail::FieldWriter::value(m.rss_trace)},
              {"splits", splits},
              {"config", detail::FieldWriter::of(m.config)}};
}

CausalMarsFit decode_cm(const json& j) {
  const std::string path = "model";
  CausalMarsFit m;
  m.p = get<std::size_t>(j, "p", path);
  m.feature_names = get<std::vector<std::string>>(j, "feature_names", path);
  m.basis = decode_basis(need(j, "basis", path), m.p, path + ".basis");
  m.coef_treat = decode_vector(need(j, "coef_treat", path), path + ".coef_treat");
  m.coef_control = decode_vector(need(j, "coef_control", path), path + ".coef_control");
  m.rss_trace = get<std::vector<double>>(j, "rss_trace", path);
  const json& splits = need(j, "splits", path);
  if (!splits.is_array()) schema(path + ".splits", "expected an array");
  for (const auto& s : splits) {
    AcceptedSplit a;
    a.parent = get<std::size_t>(s, "parent", path + ".splits");
    a.variable = get<std::size_t>(s, "variable", path + ".splits");
    a.knot = get<double>(s, "knot", path + ".splits");
    a.lof = get<double>(s, "gain", path + ".splits");
    m.splits.push_back(a);
  }
  if (const auto it = j.find("config"); it != j.end()) {
    detail::read_fields(*it, m.config, path + ".config", false);
  }
  const auto g = static_cast<Eigen::Index>(m.basis.size());
  if (m.coef_treat.size() != g || m.coef_control.size() != g) schema(path, "coefficient count does not match the basis");
  return m;
}

json encode_model(const StratifiedBcmFit& m) {
  json reps = json::array();
  for (const auto& r : m.replicates) {
    reps.push_back(json{{"basis", encode(r.basis)},
                        {"group_of_stratum", r.group_of_stratum},
                        {"coef_treat", encode(r.coef_treat)},
                        {"coef_control", encode(r.coef_control)}});
  }
  return json{{"p", m.p},
              {"feature_names", m.feature_names},
              {"q", m.q},
              {"edges", detail::FieldWriter::value(m.edges)},
              {"replicates", reps},
              {"propensity", encode(m.propensity)},
              {"merged_strata", m.merged_strata},
              {"warnings", m.warnings},
              {"config", detail::FieldWriter::of(m.config)},
              {"seed", m.config.seed},
              {"threads", m.config.threads}};
}

StratifiedBcmFit decode_bcm(const json& j) {
  const std::string path = "model";
  StratifiedBcmFit m;
  m.p = get<std::size_t>(j, "p", path);
  m.feature_names = get<std::vector<std::string>>(j, "feature_names", path);
  m.q = get<std::size_t>(j, "q", path);
  m.edges = get<std::vector<double>>(j, "edges", path);
  if (m.q < 1 || m.edges.size() != m.q - 1) schema(path, "expected q - 1 stratum edges");
  const json& reps = need(j, "replicates", path);
  if (!reps.is_array() || reps.empty()) schema(path + ".replicates", "expected a non-empty array");
  for (std::size_t b = 0; b < reps.size(); ++b) {
    const std::string at = path + ".replicates[" + std::to_string(b) + "]";
    BcmReplicate r;
    r.basis = decode_basis(need(reps[b], "basis", at), m.p, at + ".basis");
    r.group_of_stratum = get<std::vector<std::size_t>>(reps[b], "group_of_stratum", at);
    r.coef_treat = decode_matrix(need(reps[b], "coef_treat", at), at + ".coef_treat");
    r.coef_control = decode_matrix(need(reps[b], "coef_control", at), at + ".coef_control");
    const auto rows = static_cast<Eigen::Index>(r.basis.size());
    if (r.coef_treat.rows() != rows || r.coef_control.rows() != rows ||
        r.coef_treat.cols() != r.coef_control.cols()) {
      schema(at, "coefficient shape does not match the basis");
    }
    if (r.group_of_stratum.size() != m.q) schema(at, "group_of_stratum must have q entries");
    for (auto g : r.group_of_stratum) {
      if (static_cast<Eigen::Index>(g) >= r.coef_treat.cols()) schema(at, "group index out of range");
    }
    m.replicates.push_back(std::move(r));
  }
  m.propensity = decode_propensity(need(j, "propensity", path), m.p, path + ".propensity");
  m.merged_strata = get<std::size_t>(j, "merged_strata", path);
  m.warnings = get<std::vector<std::string>>(j, "warnings", path);
  if (const auto it = j.find("config"); it != j.end()) {
    detail::read_fields(*it, m.config, path + ".config", false);
  }
  m.config.seed = get<std::uint64_t>(j, "seed", path);
  m.config.threads = get<std::size_t>(j, "threads", path);
  return m;
}

}  // namespace

// ---- CSV ----

CsvTable parse_csv(std::string_view text) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool was_quoted = false;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    // blank lines carry no data
    if (!(record.size() == 1 && record[0].empty() && !was_quoted)) records.push_back(std::move(record));
    record.clear();
    was_quoted = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c != '"') {
        field += c;
      } else if (i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else {
        in_quotes = false;
        if (i + 1 < text.size() && text[i + 1] != ',' && text[i + 1] != '\n' && text[i + 1] != '\r') {
          throw CsvError(CsvError::Kind::ragged_row,
                         "line " + std::to_string(records.size() + 1) + ": text after a closing quote",
                         records.empty() ? 0 : records.size());
        }
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
      was_quoted = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_record();
    } else {
      field += c;
    }
  }
  if (in_quotes) {
    throw CsvError(CsvError::Kind::ragged_row, "unterminated quoted field at end of file",
                   records.empty() ? 0 : records.size());
  }
  if (!field.empty() || !record.empty() || was_quoted) end_record();
  if (records.empty()) throw CsvError(CsvError::Kind::empty_file, "file has no header row");

  CsvTable table;
  table.header = std::move(records[0]);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw CsvError(CsvError::Kind::ragged_row,
                     "row " + std::to_string(r) + ": " + std::to_string(records[r].size()) +
                         " fields, header has " + std::to_string(table.header.size()),
                     r);
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::string& path) {
  try {
    return parse_csv(slurp(path));
  } catch (const CsvError& e) {
    throw CsvError(e.kind(), path + ": " + e.what(), e.row(), e.column());
  }
}

Dataset dataset_from_table(const CsvTable& table, const std::string& treatment_column,
                           const std::string& outcome_column) {
  if (treatment_column == outcome_column) {
    throw InvalidInput("treatment and outcome must be different columns");
  }
  const auto ti = column_index(table, treatment_column);
  if (!ti) {
    throw CsvError(CsvError::Kind::missing_column, "no treatment column " + quoted(treatment_column), 0,
                   treatment_column);
  }
  const auto yi = column_index(table, outcome_column);
  if (!yi) {
    throw CsvError(CsvError::Kind::missing_column, "no outcome column " + quoted(outcome_column), 0,
                   outcome_column);
  }
  if (table.rows.empty()) throw CsvError(CsvError::Kind::empty_file, "file has a header but no data rows");

  std::vector<std::size_t> cov;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < table.header.size(); ++k) {
    if (k == *ti || k == *yi) continue;
    cov.push_back(k);
    names.push_back(table.header[k]);
  }
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  Matrix x(n, static_cast<Eigen::Index>(cov.size()));
  Eigen::VectorXi t(n);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    const std::size_t line = static_cast<std::size_t>(i) + 1;
    const auto tv = parse_number(row[*ti]);
    if (!tv || (*tv != 0.0 && *tv != 1.0)) {
      throw CsvError(CsvError::Kind::non_binary_treatment,
                     where(line, treatment_column) + ": treatment must be 0 or 1, got " + quoted(row[*ti]), line,
                     treatment_column);
    }
    t(i) = static_cast<int>(*tv);
    y(i) = cell_number(row[*yi], line, outcome_column);
    for (std::size_t k = 0; k < cov.size(); ++k) {
      x(i, static_cast<Eigen::Index>(k)) = cell_number(row[cov[k]], line, table.header[cov[k]]);
    }
  }
  return Dataset(std::move(x), std::move(t), std::move(y), std::move(names));
}

Dataset load_csv(const std::string& path, const std::string& treatment_column,
                 const std::string& outcome_column) {
  const auto table = read_csv(path);
  try {
    return dataset_from_table(table, treatment_column, outcome_column);
  } catch (const CsvError& e) {
    throw CsvError(e.kind(), path + ": " + e.what(), e.row(), e.column());
  }
}

Matrix covariates_from_table(const CsvTable& table, const std::vector<std::string>& feature_names,
                             std::size_t p, const std::vector<std::string>& ignore) {
  std::vector<std::size_t> cols;
  bool by_name = !feature_names.empty();
  for (const auto& name : feature_names) {
    const auto k = column_index(table, name);
    if (!k) {
      by_name = false;
      break;
    }
    cols.push_back(*k);
  }
  if (!by_name) {
    cols.clear();
    for (std::size_t k = 0; k < table.header.size(); ++k) {
      if (std::find(ignore.begin(), ignore.end(), table.header[k]) == ignore.end()) cols.push_back(k);
    }
    if (cols.size() != p) {
      throw CsvError(CsvError::Kind::missing_column,
                     "expected " + std::to_string(p) + " covariate columns, found " + std::to_string(cols.size()));
    }
  }
  if (table.rows.empty()) throw CsvError(CsvError::Kind::empty_file, "file has a header but no data rows");
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  Matrix x(n, static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      x(i, static_cast<Eigen::Index>(k)) = cell_number(table.rows[static_cast<std::size_t>(i)][cols[k]],
                                                       static_cast<std::size_t>(i) + 1, table.header[cols[k]]);
    }
  }
  return x;
}

Matrix load_covariates(const std::string& path, const std::vector<std::string>& feature_names, std::size_t p,
                       const std::vector<std::string>& ignore) {
  const auto table = read_csv(path);
  try {
    return covariates_from_table(table, feature_names, p, ignore);
  } catch (const CsvError& e) {
    throw CsvError(e.kind(), path + ": " + e.what(), e.row(), e.column());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_dataset_csv(const Dataset& data, std::ostream& out, const std::string& treatment_column,
                       const std::string& outcome_column) {
  const auto& names = data.feature_names();
  for (std::size_t j = 0; j < data.p(); ++j) {
    out << csv_field(names.empty() ? "x" + std::to_string(j + 1) : names[j]) << ',';
  }
  out << csv_field(treatment_column) << ',' << csv_field(outcome_column) << '\n';
  const Matrix& x = data.covariates();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << format_double(x(i, j)) << ',';
    out << data.treatment()(i) << ',' << format_double(data.outcome()(i)) << '\n';
  }
}

void write_columns_csv(std::ostream& out, const std::vector<std::string>& header,
                       const std::vector<Vector>& columns) {
  if (header.size() != columns.size()) throw InvalidInput("header and column counts differ");
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << csv_field(header[k]);
  out << '\n';
  const Eigen::Index n = columns.empty() ? 0 : columns[0].size();
  for (const auto& c : columns) {
    if (c.size() != n) throw InvalidInput("columns differ in length");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << format_double(columns[k](i));
    out << '\n';
  }
}

// ---- archive ----

std::string ModelArchive::model_type() const {
  switch (model.index()) {
    case 0: return "scbm";
    case 1: return "causal_mars";
    default: return "bcm";
  }
}

std::size_t ModelArchive::p() const {
  return std::visit([](const auto& m) { return m.p; }, model);
}

const std::vector<std::string>& ModelArchive::feature_names() const {
  return std::visit([](const auto& m) -> const std::vector<std::string>& { return m.feature_names; }, model);
}

Vector ModelArchive::predict_hte(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != p()) {
    throw InvalidInput("expected " + std::to_string(p()) + " covariates, got " + std::to_string(x.cols()));
  }
  return std::visit([&](const auto& m) { return m.predict_hte(x); }, model);
}

Vector ModelArchive::predict_outcome(const Matrix& x, Arm arm) const {
  if (std::holds_alternative<StratifiedBcmFit>(model)) {
    throw UnsupportedOperation("bcm models predict effects only");
  }
  if (static_cast<std::size_t>(x.cols()) != p()) {
    throw InvalidInput("expected " + std::to_string(p()) + " covariates, got " + std::to_string(x.cols()));
  }
  if (const auto* m = std::get_if<FittedScbm>(&model)) return m->predict_outcome(x, arm);
  return std::get<CausalMarsFit>(model).predict_outcome(x, arm);
}

std::string archive_to_json(const ModelArchive& archive) {
  json j;
  j["format_version"] = archive.format_version;
  j["model_type"] = archive.model_type();
  j["model"] = std::visit([](const auto& m) { return encode_model(m); }, archive.model);
  return j.dump(1) + "\n";
}

ModelArchive archive_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model archive is not valid JSON (truncated?): ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("model archive must be a JSON object");
  const auto v = j.find("format_version");
  if (v == j.end()) throw SchemaError("model archive has no format_version");
  if (!v->is_number_integer()) throw SchemaError("format_version must be an integer");
  const auto version = v->get<std::int64_t>();
  if (version != kArchiveFormatVersion) {
    throw VersionError("model archive format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kArchiveFormatVersion) + ")");
  }
  ModelArchive archive;
  try {
    const auto type = get<std::string>(j, "model_type", "archive");
    const json& model = need(j, "model", "archive");
    if (type == "scbm") {
      archive.model = decode_scbm(model);
    } else if (type == "causal_mars") {
      archive.model = decode_cm(model);
    } else if (type == "bcm") {
      archive.model = decode_bcm(model);
    } else {
      throw SchemaError("unknown model_type " + quoted(type));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model archive: ") + e.what());
  } catch (const InvalidInput& e) {
    throw SchemaError(std::string("model archive: ") + e.what());
  }
  return archive;
}

void save_model(const ModelArchive& archive, const std::string& path) {
  const auto text = archive_to_json(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

ModelArchive load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return archive_from_json(ss.str());
}

// ---- run config ----

namespace detail {

template <class V> void describe(V& v, RunConfig& c) {
  v("seed", c.seed);
  v("threads", c.threads);
  v("output_dir", c.output_dir);
  v("scbm", c.scbm);
  v("cm", c.cm);
  v("bcm", c.bcm);
  v("bench", c.bench);
  v("calibration", c.calibration);
}

}  // namespace detail

ScbmConfig RunConfig::scbm_config() const {
  ScbmConfig c = scbm;
  c.seed = seed;
  c.threads = threads;
  return c;
}

BcmConfig RunConfig::bcm_config() const {
  BcmConfig c = bcm;
  c.seed = seed;
  c.threads = threads;
  return c;
}

BenchConfig RunConfig::bench_config() const {
  BenchConfig c = bench;
  c.seed = seed;
  c.threads = threads;
  c.scbm = scbm_config();
  c.cm = cm;
  c.bcm = bcm_config();
  return c;
}

CalibrationConfig RunConfig::calibration_config() const {
  CalibrationConfig c = calibration;
  c.seed = seed;
  c.threads = threads;
  return c;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  auto section = [](const char* name, const auto& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(name) + ": " + e.what());
    }
  };
  section("scbm", [&] { scbm_config().validate(); });
  section("cm", [&] { cm.validate(); });
  section("bcm", [&] { bcm_config().validate(); });
  section("bench", [&] { bench_config().validate(); });
  section("calibration", [&] { calibration_config().validate(); });
}

RunConfig default_run_config() {
  RunConfig c;
  c.threads = default_thread_count();
  if (const char* dir = std::getenv("SCBM_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  return c;
}

RunConfig run_config_from_json(std::string_view text, RunConfig base) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  detail::read_fields(j, base, "", true);
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return run_config_from_json(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string run_config_to_json(const RunConfig& config) {
  return detail::FieldWriter::of(config).dump(2) + "\n";
}

}  // namespace scbm

#include "unlearn_forge/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "unlearn_forge/error.hpp"

namespace uf {

void SchemaErrors::add(const std::string& path, const std::string& message) {
  messages_.push_back(path + ": " + message);
}

void SchemaErrors::throw_if_any() const {
  if (messages_.empty()) return;
  std::string all = "invalid configuration";
  for (const auto& m : messages_) all += "\n  " + m;
  throw ConfigError(all);
}

ObjectReader::ObjectReader(const Json& j, std::string path, SchemaErrors& errors)
    : j_(&j), path_(std::move(path)), errors_(&errors) {
  if (!j.is_object()) {
    errors.add(path_, "expected an object");
    valid_ = false;
  }
}

bool ObjectReader::has(const std::string& key) const { return valid_ && j_->contains(key); }

const Json* ObjectReader::child(const std::string& key, bool required) {
  if (!valid_) return nullptr;
  seen_.push_back(key);
  const auto it = j_->find(key);
  if (it == j_->end()) {
    if (required) errors_->add(path_of(key), "missing required field");
    return nullptr;
  }
  return &*it;
}

std::optional<double> ObjectReader::number(const std::string& key, bool required) {
  const Json* c = child(key, required);
  if (c == nullptr) return std::nullopt;
  if (!c->is_number()) {
    errors_->add(path_of(key), "expected a number");
    return std::nullopt;
  }
  return c->get<double>();
}

std::optional<std::uint64_t> ObjectReader::count(const std::string& key, bool required) {
  const Json* c = child(key, required);
  if (c == nullptr) return std::nullopt;
  if (c->is_number_unsigned()) return c->get<std::uint64_t>();
  if (c->is_number_integer() && c->get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(c->get<std::int64_t>());
  }
  errors_->add(path_of(key), "expected a non-negative integer");
  return std::nullopt;
}

std::optional<std::string> ObjectReader::text(const std::string& key, bool required) {
  const Json* c = child(key, required);
  if (c == nullptr) return std::nullopt;
  if (!c->is_string()) {
    errors_->add(path_of(key), "expected a string");
    return std::nullopt;
  }
  return c->get<std::string>();
}

void ObjectReader::finish() {
  if (!valid_) return;
  for (const auto& [key, value] : j_->items()) {
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
      errors_->add(path_of(key), "unknown field");
    }
  }
}

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

std::optional<Vector> vector_from_json(const Json& j, const std::string& path,
                                       SchemaErrors& errors) {
  if (!j.is_array() || j.empty()) {
    errors.add(path, "expected a non-empty array of numbers");
    return std::nullopt;
  }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      errors.add(path + "[" + std::to_string(i) + "]", "expected a number");
      return std::nullopt;
    }
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

std::optional<Matrix> matrix_from_json(const Json& j, const std::string& path,
                                       SchemaErrors& errors) {
  if (!j.is_array() || j.empty()) {
    errors.add(path, "expected a non-empty array of rows");
    return std::nullopt;
  }
  std::optional<Matrix> m;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = vector_from_json(j[i], path + "[" + std::to_string(i) + "]", errors);
    if (!row) return std::nullopt;
    if (!m) m = Matrix(static_cast<Eigen::Index>(j.size()), row->size());
    if (row->size() != m->cols()) {
      errors.add(path + "[" + std::to_string(i) + "]", "rows must have equal length");
      return std::nullopt;
    }
    m->row(static_cast<Eigen::Index>(i)) = row->transpose();
  }
  return m;
}

Json to_json(const GaussianDist& g) {
  return Json{{"mean", vector_to_json(g.mean())}, {"cov_factor_rows", matrix_to_json(g.cov_factor())}};
}

std::optional<GaussianDist> gaussian_from_json(const Json& j, const std::string& path,
                                               SchemaErrors& errors) {
  ObjectReader r(j, path, errors);
  const Json* mean = r.child("mean", true);
  const Json* rows = r.child("cov_factor_rows", true);
  r.finish();
  if (mean == nullptr || rows == nullptr) return std::nullopt;
  auto mu = vector_from_json(*mean, r.path_of("mean"), errors);
  auto l = matrix_from_json(*rows, r.path_of("cov_factor_rows"), errors);
  if (!mu || !l) return std::nullopt;
  try {
    return GaussianDist(std::move(*mu), std::move(*l));
  } catch (const Error& e) {
    errors.add(path, e.what());
    return std::nullopt;
  }
}

GaussianDist gaussian_from_json(const Json& j) {
  SchemaErrors errors;
  auto g = gaussian_from_json(j, "$", errors);
  errors.throw_if_any();
  return std::move(*g);
}

Json to_json(const AmortizedMechanism& mech) {
  return Json{{"gain_rows", matrix_to_json(mech.gain)},
              {"bias", vector_to_json(mech.bias)},
              {"cov_factor_rows", matrix_to_json(mech.cov_factor)},
              {"statistic_level", to_string(mech.statistic_level)}};
}

std::optional<AmortizedMechanism> amortized_from_json(const Json& j, const std::string& path,
                                                      SchemaErrors& errors) {
  ObjectReader r(j, path, errors);
  const Json* gain = r.child("gain_rows", true);
  const Json* bias = r.child("bias", true);
  const Json* rows = r.child("cov_factor_rows", true);
  const auto level = r.text("statistic_level", true);
  r.finish();
  if (gain == nullptr || bias == nullptr || rows == nullptr || !level) return std::nullopt;
  auto g = matrix_from_json(*gain, r.path_of("gain_rows"), errors);
  auto b = vector_from_json(*bias, r.path_of("bias"), errors);
  auto l = matrix_from_json(*rows, r.path_of("cov_factor_rows"), errors);
  if (!g || !b || !l) return std::nullopt;
  try {
    AmortizedMechanism mech{std::move(*g), std::move(*b), std::move(*l),
                            parse_statistic_level(*level)};
    mech.validate();
    return mech;
  } catch (const Error& e) {
    errors.add(path, e.what());
    return std::nullopt;
  }
}

Json to_json(const ScrubMechanism& mech) {
  return Json{{"shift_gain_rows", matrix_to_json(mech.shift_gain)},
              {"cov_factor_rows", matrix_to_json(mech.cov_factor)}};
}

namespace {

// Non-finite doubles have no JSON literal; they are written as null.
Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

}  // namespace

Json to_json(const CertResult& cert) {
  return Json{{"epsilon_estimate", number_or_null(cert.epsilon_estimate)},
              {"stderr", cert.std_error},
              {"mode", to_string(cert.mode)},
              {"threshold", cert.threshold ? Json(*cert.threshold) : Json(nullptr)},
              {"passed_at", cert.passed_at ? Json(*cert.passed_at) : Json(nullptr)},
              {"passed", cert.passed()},
              {"infinite", cert.infinite}};
}

Json to_json(const XiEstimate& xi) {
  return Json{{"kind", to_string(xi.kind)},
              {"log_xi", number_or_null(xi.log_xi)},
              {"stderr_log", number_or_null(xi.stderr_log)},
              {"n_outer", xi.n_outer},
              {"n_inner", xi.n_inner},
              {"overflow", xi.overflow},
              {"clamp_hits", xi.clamp_hits}};
}

Json to_json(const BoundReport& r) {
  return Json{{"kind", to_string(r.inst.kind)},
              {"scale", r.inst.scale},
              {"delta", r.inst.delta},
              {"lhs", r.lhs},
              {"lhs_stderr", r.lhs_stderr},
              {"training_term", r.training_term},
              {"kl_term", r.kl_term},
              {"slack_term", number_or_null(r.slack_term)},
              {"rhs", number_or_null(r.rhs)},
              {"holds", r.holds},
              {"low_confidence", r.low_confidence}};
}

Json to_json(const ValidityReport& r) {
  return Json{{"n_trials", r.n_trials},
              {"n_violations", r.n_violations},
              {"delta", r.delta},
              {"violation_rate", r.violation_rate},
              {"binomial_ci", Json::array({r.ci_low, r.ci_high})},
              {"tolerance", r.tolerance},
              {"passed", r.passed},
              {"low_resolution", r.low_resolution},
              {"xi", to_json(r.xi)}};
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

std::string csv_row(const std::vector<std::string>& fields) {
  std::string row;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) row += ',';
    row += csv_field(fields[i]);
  }
  return row + "\r\n";
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << contents;
  out.flush();
  if (!out) throw Error("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace uf

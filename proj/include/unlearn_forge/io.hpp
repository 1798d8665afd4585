#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn_forge/amortized.hpp"
#include "unlearn_forge/certify.hpp"
#include "unlearn_forge/pacbayes.hpp"
#include "unlearn_forge/scrub.hpp"
#include "unlearn_forge/validity.hpp"

namespace uf {

using Json = nlohmann::json;

/// Collects schema violations as "<json path>: <message>" so that a whole
/// document can be checked before reporting.
class SchemaErrors {
 public:
  void add(const std::string& path, const std::string& message);
  bool empty() const { return messages_.empty(); }
  const std::vector<std::string>& messages() const { return messages_; }
  /// Throws ConfigError listing every message, if any.
  void throw_if_any() const;

 private:
  std::vector<std::string> messages_;
};

/// Strict reader for one JSON object: every key must be consumed, and
/// finish() reports the ones that were not as unknown fields.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path, SchemaErrors& errors);

  bool has(const std::string& key) const;
  const Json* child(const std::string& key, bool required);
  std::string path_of(const std::string& key) const { return path_ + "." + key; }

  std::optional<double> number(const std::string& key, bool required = false);
  std::optional<std::uint64_t> count(const std::string& key, bool required = false);
  std::optional<std::string> text(const std::string& key, bool required = false);

  void finish();
  bool valid() const { return valid_; }

 private:
  const Json* j_;
  std::string path_;
  SchemaErrors* errors_;
  std::vector<std::string> seen_;
  bool valid_ = true;
};

Json vector_to_json(const Vector& v);
Json matrix_to_json(const Matrix& m);
std::optional<Vector> vector_from_json(const Json& j, const std::string& path,
                                       SchemaErrors& errors);
std::optional<Matrix> matrix_from_json(const Json& j, const std::string& path,
                                       SchemaErrors& errors);

/// {"mean": [...], "cov_factor_rows": [[...], ...]}
Json to_json(const GaussianDist& g);
std::optional<GaussianDist> gaussian_from_json(const Json& j, const std::string& path,
                                               SchemaErrors& errors);
GaussianDist gaussian_from_json(const Json& j);

Json to_json(const AmortizedMechanism& mech);
std::optional<AmortizedMechanism> amortized_from_json(const Json& j, const std::string& path,
                                                      SchemaErrors& errors);
Json to_json(const ScrubMechanism& mech);
Json to_json(const CertResult& cert);
Json to_json(const XiEstimate& xi);
Json to_json(const BoundReport& report);
/// Summary of the experiment; per-trial rows go to CSV.
Json to_json(const ValidityReport& report);

/// RFC-4180 field quoting; rows end in CRLF.
std::string csv_field(const std::string& s);
std::string csv_row(const std::vector<std::string>& fields);

/// Writes `contents` byte for byte; throws Error on I/O failure.
void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);
/// Pretty-printed JSON with a trailing newline.
std::string dump_json(const Json& j);

}  // namespace uf

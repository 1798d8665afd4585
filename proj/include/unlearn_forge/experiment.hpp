#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unlearn_forge/io.hpp"
#include "unlearn_forge/pipeline.hpp"
#include "unlearn_forge/validity.hpp"

namespace uf {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ConjugateModel model;
  PopulationSpec population;
  std::size_t n = 0;
  std::size_t m = 0;
  Method method = Method::eubo;
  OptimOptions optimizer;

  struct Certificate {
    CertMode mode = CertMode::marginal;
    std::optional<double> epsilon;
    std::size_t n_mc = 20000;
    std::size_t components = 64;
  } certificate;

  struct Bound {
    /// Empty when the config asks for no bound ("none").
    std::optional<BoundKind> kind = BoundKind::avu;
    double delta = 0.1;
    double beta = 1.0;
    std::size_t n_outer = 200;
    std::size_t n_inner = 200;
    double clamp = 50.0;
    LossKind loss = LossKind::squared_error;
  } bound;

  struct Avu {
    StatisticLevel statistic_level = StatisticLevel::summary;
    std::size_t n_tasks = 64;
    std::size_t n_heldout = 0;
    std::optional<AmortizedMechanism> mechanism;
  } avu;

  struct Scrub {
    /// Empty: 1/beta when the fl bound is requested, else 1.
    std::optional<double> lambda;
    double reference_noise = 0.1;
    std::size_t components = 64;
    MarginalMode marginal_mode = MarginalMode::moment_match;
    std::size_t n_mc = 1000;

    double effective_lambda(const Bound& bound) const;
  } scrub;

  struct Validity {
    std::size_t n_trials = 2000;
  } validity;

  std::string output_dir = "out";
};

/// Strict parse: unknown fields and invalid values are reported together,
/// each with its JSON path, in one ConfigError.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);
/// Semantic checks shared by parsing and sweeps.
void validate_config(const ExperimentConfig& cfg, SchemaErrors& errors);

/// Every effective setting, keys sorted; the output directory is left out.
Json canonical_json(const ExperimentConfig& cfg);
/// "fnv1a64:<hex>" of canonical_json(cfg).dump().
std::string config_hash(const ExperimentConfig& cfg);

struct RunResult {
  Trial trial;
  UnlearnOutcome outcome;
  CertResult certificate;
  std::optional<XiEstimate> xi;
  std::optional<BoundReport> bound;
  std::optional<AmortizedTraining> training;
  std::vector<std::pair<std::string, double>> timings_ms;
};

/// learn → delete → unlearn → certify → bound, for one seeded trial.
RunResult run_experiment(const ExperimentConfig& cfg);
ValidityReport run_validity(const ExperimentConfig& cfg, std::size_t jobs);

/// Settings handed to the pipeline, including a trained AVU mechanism when
/// the method needs one.
UnlearnSettings unlearn_settings(const ExperimentConfig& cfg,
                                 std::optional<AmortizedTraining>* training = nullptr);

/// Applies one sweep value; throws ConfigError for non-sweepable axes.
void apply_sweep_value(ExperimentConfig& cfg, const std::string& axis, double value);

/// Column names and values of the one-row summary of a run.
std::vector<std::string> summary_header();
std::vector<std::string> summary_row(const ExperimentConfig& cfg, const RunResult& r);

/// Command-line entry point. Exit codes: 0 success, 1 invalid input,
/// 2 runtime failure, 3 certificate or bound check failed.
int run_cli(int argc, const char* const* argv);

}  // namespace uf

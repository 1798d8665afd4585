#include "unlearn_forge/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "unlearn_forge/error.hpp"

namespace uf {

namespace fs = std::filesystem;

double ExperimentConfig::Scrub::effective_lambda(const Bound& bound) const {
  if (lambda) return *lambda;
  return bound.kind == BoundKind::fl ? 1.0 / bound.beta : 1.0;
}

namespace {

// Runs `parse` and records any ConfigError it throws under `path`.
template <typename T, typename F>
std::optional<T> parse_enum(const std::optional<std::string>& s, const std::string& path,
                            SchemaErrors& errors, F parse) {
  if (!s) return std::nullopt;
  try {
    return parse(*s);
  } catch (const ConfigError& e) {
    errors.add(path, e.what());
    return std::nullopt;
  }
}

void parse_model(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.model", errors);
  const auto task = parse_enum<Task>(r.text("task", true), r.path_of("task"), errors, parse_task);
  const Json* prior = r.child("prior", true);
  const auto var = r.number("noise_variance", true);
  r.finish();
  if (task) cfg.model.task = *task;
  if (var) cfg.model.noise_variance = *var;
  if (prior) {
    if (auto g = gaussian_from_json(*prior, r.path_of("prior"), errors)) cfg.model.prior = *g;
  }
}

void parse_population(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.population", errors);
  const auto kind = parse_enum<Task>(r.text("kind", true), r.path_of("kind"), errors, parse_task);
  const Json* params = r.child("true_params", true);
  const auto var = r.number("noise_variance", true);
  const Json* features = r.child("feature_distribution", false);
  r.finish();
  if (kind) cfg.population.kind = *kind;
  if (var) cfg.population.noise_variance = *var;
  if (params) {
    if (auto v = vector_from_json(*params, r.path_of("true_params"), errors)) {
      cfg.population.true_params = *v;
    }
  }
  if (features) {
    if (auto g = gaussian_from_json(*features, r.path_of("feature_distribution"), errors)) {
      cfg.population.feature_distribution = *g;
    }
  }
}

void parse_optimizer(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.optimizer", errors);
  if (auto v = r.number("step_size")) cfg.optimizer.step_size = *v;
  if (auto v = r.count("max_steps")) cfg.optimizer.max_steps = *v;
  if (auto v = r.number("grad_tolerance")) cfg.optimizer.grad_tolerance = *v;
  r.finish();
}

void parse_certificate(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.certificate", errors);
  if (auto v = parse_enum<CertMode>(r.text("mode"), r.path_of("mode"), errors, parse_cert_mode)) {
    cfg.certificate.mode = *v;
  }
  if (auto v = r.number("epsilon")) cfg.certificate.epsilon = *v;
  if (auto v = r.count("n_mc")) cfg.certificate.n_mc = *v;
  if (auto v = r.count("components")) cfg.certificate.components = *v;
  r.finish();
}

void parse_bound(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.bound", errors);
  if (auto kind = r.text("kind")) {
    if (*kind == "none") {
      cfg.bound.kind.reset();
    } else if (auto v = parse_enum<BoundKind>(kind, r.path_of("kind"), errors,
                                              parse_bound_kind)) {
      cfg.bound.kind = *v;
    }
  }
  if (auto v = r.number("delta")) cfg.bound.delta = *v;
  if (auto v = r.number("beta")) cfg.bound.beta = *v;
  if (auto v = r.count("n_outer")) cfg.bound.n_outer = *v;
  if (auto v = r.count("n_inner")) cfg.bound.n_inner = *v;
  if (auto v = r.number("clamp")) cfg.bound.clamp = *v;
  if (auto v = parse_enum<LossKind>(r.text("loss"), r.path_of("loss"), errors, parse_loss_kind)) {
    cfg.bound.loss = *v;
  }
  r.finish();
}

void parse_avu(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.avu", errors);
  if (auto v = parse_enum<StatisticLevel>(r.text("statistic_level"), r.path_of("statistic_level"),
                                          errors, parse_statistic_level)) {
    cfg.avu.statistic_level = *v;
  }
  if (auto v = r.count("n_tasks")) cfg.avu.n_tasks = *v;
  if (auto v = r.count("n_heldout")) cfg.avu.n_heldout = *v;
  if (const Json* mech = r.child("mechanism", false)) {
    cfg.avu.mechanism = amortized_from_json(*mech, r.path_of("mechanism"), errors);
  }
  r.finish();
}

void parse_scrub(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.scrub", errors);
  if (auto v = r.number("lambda")) cfg.scrub.lambda = *v;
  if (auto v = r.number("reference_noise")) cfg.scrub.reference_noise = *v;
  if (auto v = r.count("components")) cfg.scrub.components = *v;
  if (auto v = parse_enum<MarginalMode>(r.text("marginal_mode"), r.path_of("marginal_mode"),
                                        errors, parse_marginal_mode)) {
    cfg.scrub.marginal_mode = *v;
  }
  if (auto v = r.count("n_mc")) cfg.scrub.n_mc = *v;
  r.finish();
}

void parse_validity(const Json& j, ExperimentConfig& cfg, SchemaErrors& errors) {
  ObjectReader r(j, "$.validity", errors);
  if (auto v = r.count("n_trials")) cfg.validity.n_trials = *v;
  r.finish();
}

void check(bool ok, const std::string& path, const std::string& message, SchemaErrors& errors) {
  if (!ok) errors.add(path, message);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

}  // namespace

void validate_config(const ExperimentConfig& cfg, SchemaErrors& errors) {
  check(positive(cfg.model.noise_variance), "$.model.noise_variance", "must be positive", errors);
  try {
    cfg.population.validate();
  } catch (const Error& e) {
    errors.add("$.population", e.what());
  }
  check(cfg.population.kind == cfg.model.task, "$.population.kind",
        "must match $.model.task", errors);
  check(cfg.population.parameter_dim() == cfg.model.parameter_dim(), "$.population.true_params",
        "dimension must match $.model.prior", errors);
  check(cfg.n >= 2, "$.n", "must be at least 2", errors);
  check(cfg.m >= 1 && cfg.m < cfg.n, "$.m",
        "must satisfy 1 <= m < n (m=" + std::to_string(cfg.m) + ", n=" + std::to_string(cfg.n) +
            ")",
        errors);
  check(positive(cfg.optimizer.step_size), "$.optimizer.step_size", "must be positive", errors);
  check(cfg.optimizer.max_steps > 0, "$.optimizer.max_steps", "must be positive", errors);
  check(positive(cfg.optimizer.grad_tolerance), "$.optimizer.grad_tolerance", "must be positive",
        errors);
  check(cfg.certificate.n_mc >= 100, "$.certificate.n_mc", "must be at least 100", errors);
  check(cfg.certificate.components >= 1, "$.certificate.components", "must be positive", errors);
  if (cfg.certificate.epsilon) {
    check(*cfg.certificate.epsilon >= 0.0, "$.certificate.epsilon", "must be non-negative", errors);
  }
  check(cfg.bound.delta > 0.0 && cfg.bound.delta < 1.0, "$.bound.delta", "must lie in (0, 1)",
        errors);
  check(positive(cfg.bound.beta), "$.bound.beta", "must be positive", errors);
  check(cfg.bound.n_outer >= 10, "$.bound.n_outer", "must be at least 10", errors);
  check(cfg.bound.n_inner >= 10, "$.bound.n_inner", "must be at least 10", errors);
  check(positive(cfg.bound.clamp), "$.bound.clamp", "must be positive", errors);
  check(cfg.avu.n_tasks >= 1, "$.avu.n_tasks", "must be at least 1", errors);
  if (cfg.avu.mechanism) {
    check(cfg.avu.mechanism->statistic_level == cfg.avu.statistic_level,
          "$.avu.mechanism.statistic_level", "must match $.avu.statistic_level", errors);
    check(cfg.avu.mechanism->dim() == cfg.model.parameter_dim(), "$.avu.mechanism",
          "dimension must match the model", errors);
  }
  const double lambda = cfg.scrub.effective_lambda(cfg.bound);
  check(positive(lambda), "$.scrub.lambda", "must be positive", errors);
  if (cfg.method == Method::scrub && cfg.bound.kind == BoundKind::fl && positive(cfg.bound.beta)) {
    check(std::abs(lambda - 1.0 / cfg.bound.beta) <= 1e-12 * std::max(1.0, 1.0 / cfg.bound.beta),
          "$.scrub.lambda", "must equal 1/$.bound.beta for the fl bound", errors);
  }
  check(positive(cfg.scrub.reference_noise), "$.scrub.reference_noise", "must be positive", errors);
  check(cfg.scrub.components >= 1, "$.scrub.components", "must be positive", errors);
  if (cfg.scrub.marginal_mode == MarginalMode::mc) {
    check(cfg.scrub.n_mc >= 100, "$.scrub.n_mc", "must be at least 100 in mc mode", errors);
  }
  check(cfg.validity.n_trials >= 100, "$.validity.n_trials", "must be at least 100", errors);
}

ExperimentConfig parse_config(const Json& j) {
  SchemaErrors errors;
  ExperimentConfig cfg;
  ObjectReader root(j, "$", errors);
  if (!root.valid()) errors.throw_if_any();
  if (auto v = root.count("schema_version", true); v && *v != kSchemaVersion) {
    errors.add("$.schema_version", "unsupported version " + std::to_string(*v) + " (expected " +
                                       std::to_string(kSchemaVersion) + ")");
  }
  if (auto v = root.count("seed")) cfg.seed = *v;
  if (const Json* c = root.child("model", true)) parse_model(*c, cfg, errors);
  if (const Json* c = root.child("population", true)) parse_population(*c, cfg, errors);
  const auto n = root.count("n", true);
  if (n) cfg.n = *n;
  const auto m = root.count("m");
  if (auto v = parse_enum<Method>(root.text("method"), "$.method", errors, parse_method)) {
    cfg.method = *v;
  }
  if (const Json* c = root.child("optimizer", false)) parse_optimizer(*c, cfg, errors);
  if (const Json* c = root.child("certificate", false)) parse_certificate(*c, cfg, errors);
  if (const Json* c = root.child("bound", false)) parse_bound(*c, cfg, errors);
  if (const Json* c = root.child("avu", false)) parse_avu(*c, cfg, errors);
  if (const Json* c = root.child("scrub", false)) parse_scrub(*c, cfg, errors);
  if (const Json* c = root.child("validity", false)) parse_validity(*c, cfg, errors);
  if (auto v = root.text("output_dir")) cfg.output_dir = *v;
  root.finish();
  errors.throw_if_any();

  cfg.m = m ? *m : default_delete_count(cfg.n);
  validate_config(cfg, errors);
  errors.throw_if_any();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

Json canonical_json(const ExperimentConfig& cfg) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = cfg.seed;
  j["model"] = {{"task", to_string(cfg.model.task)},
                {"prior", to_json(cfg.model.prior)},
                {"noise_variance", cfg.model.noise_variance}};
  Json pop = {{"kind", to_string(cfg.population.kind)},
              {"true_params", vector_to_json(cfg.population.true_params)},
              {"noise_variance", cfg.population.noise_variance}};
  if (cfg.population.feature_distribution) {
    pop["feature_distribution"] = to_json(*cfg.population.feature_distribution);
  }
  j["population"] = pop;
  j["n"] = cfg.n;
  j["m"] = cfg.m;
  j["method"] = to_string(cfg.method);
  j["optimizer"] = {{"step_size", cfg.optimizer.step_size},
                    {"max_steps", cfg.optimizer.max_steps},
                    {"grad_tolerance", cfg.optimizer.grad_tolerance}};
  Json cert = {{"mode", to_string(cfg.certificate.mode)},
               {"n_mc", cfg.certificate.n_mc},
               {"components", cfg.certificate.components}};
  if (cfg.certificate.epsilon) cert["epsilon"] = *cfg.certificate.epsilon;
  j["certificate"] = cert;
  j["bound"] = {{"kind", cfg.bound.kind ? to_string(*cfg.bound.kind) : "none"},
                {"delta", cfg.bound.delta},
                {"beta", cfg.bound.beta},
                {"n_outer", cfg.bound.n_outer},
                {"n_inner", cfg.bound.n_inner},
                {"clamp", cfg.bound.clamp},
                {"loss", to_string(cfg.bound.loss)}};
  Json avu = {{"statistic_level", to_string(cfg.avu.statistic_level)},
              {"n_tasks", cfg.avu.n_tasks},
              {"n_heldout", cfg.avu.n_heldout}};
  if (cfg.avu.mechanism) avu["mechanism"] = to_json(*cfg.avu.mechanism);
  j["avu"] = avu;
  Json scrub = {{"reference_noise", cfg.scrub.reference_noise},
                {"components", cfg.scrub.components},
                {"marginal_mode", to_string(cfg.scrub.marginal_mode)},
                {"n_mc", cfg.scrub.n_mc}};
  if (cfg.scrub.lambda) scrub["lambda"] = *cfg.scrub.lambda;
  j["scrub"] = scrub;
  j["validity"] = {{"n_trials", cfg.validity.n_trials}};
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::uint64_t h = fnv1a(canonical_json(cfg).dump());
  std::ostringstream ss;
  ss << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

BoundInstantiation instantiation(const ExperimentConfig& cfg) {
  BoundInstantiation inst;
  inst.kind = cfg.bound.kind.value_or(BoundKind::avu);
  inst.delta = cfg.bound.delta;
  inst.loss = cfg.bound.loss;
  inst.scale = inst.kind == BoundKind::avu ? static_cast<double>(cfg.m) : cfg.bound.beta;
  return inst;
}

XiSettings xi_settings(const ExperimentConfig& cfg) {
  XiSettings xs;
  xs.n_outer = cfg.bound.n_outer;
  xs.n_inner = cfg.bound.n_inner;
  xs.seed = derive_seed(cfg.seed, "xi");
  xs.clamp = cfg.bound.clamp;
  xs.reference = isotropic_reference(cfg.model.parameter_dim(), cfg.scrub.reference_noise);
  return xs;
}

}  // namespace

UnlearnSettings unlearn_settings(const ExperimentConfig& cfg,
                                 std::optional<AmortizedTraining>* training) {
  UnlearnSettings us;
  us.method = cfg.method;
  us.opts = cfg.optimizer;
  us.reference = isotropic_reference(cfg.model.parameter_dim(), cfg.scrub.reference_noise);
  us.lambda = cfg.scrub.effective_lambda(cfg.bound);
  us.components = cfg.scrub.components;
  us.marginal_mode = cfg.scrub.marginal_mode;
  us.fl_n_mc = cfg.scrub.n_mc;
  if (cfg.method == Method::avu) {
    if (cfg.avu.mechanism) {
      us.amortized = cfg.avu.mechanism;
    } else {
      const auto d = static_cast<Eigen::Index>(cfg.model.parameter_dim());
      const AmortizedMechanism init{Matrix::Zero(d, d), Vector::Zero(d),
                                    cfg.model.prior.cov_factor(), cfg.avu.statistic_level};
      OptimOptions opts = cfg.optimizer;
      opts.seed = derive_seed(cfg.seed, "avu-train");
      AmortizedTrainingOptions to;
      to.n_tasks = cfg.avu.n_tasks;
      to.n_heldout = cfg.avu.n_heldout;
      AmortizedTraining trained =
          train_amortized(init, cfg.model, cfg.population, cfg.n, cfg.m, to, opts);
      us.amortized = trained.mechanism;
      if (training != nullptr) *training = std::move(trained);
    }
  }
  return us;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  auto t = Clock::now();
  std::vector<std::pair<std::string, double>> timings;
  Trial trial = draw_trial(cfg.model, cfg.population, cfg.n, cfg.m, derive_seed(cfg.seed, "trial"));
  timings.emplace_back("learn", elapsed_ms(t));

  t = Clock::now();
  std::optional<AmortizedTraining> training;
  const UnlearnSettings us = unlearn_settings(cfg, &training);
  UnlearnOutcome outcome = unlearn(us, trial, cfg.model, derive_seed(cfg.seed, "unlearn"));
  timings.emplace_back("unlearn", elapsed_ms(t));

  t = Clock::now();
  const GaussianMixture mix =
      certificate_mixture(outcome.kernel, trial.learned, cfg.certificate.mode,
                          cfg.certificate.components, derive_seed(cfg.seed, "certificate-draws"));
  CertResult cert = certify_epsilon(mix, trial.retrained, cfg.certificate.mode,
                                    cfg.certificate.n_mc, derive_seed(cfg.seed, "certificate"),
                                    cfg.certificate.epsilon);
  timings.emplace_back("certify", elapsed_ms(t));

  RunResult r{std::move(trial), std::move(outcome), std::move(cert), std::nullopt, std::nullopt,
              std::move(training), {}};
  if (cfg.bound.kind) {
    t = Clock::now();
    const BoundInstantiation inst = instantiation(cfg);
    const XiSettings xs = xi_settings(cfg);
    r.xi = estimate_xi(inst, cfg.model, cfg.population, cfg.n, cfg.m, xs);
    switch (inst.kind) {
      case BoundKind::generic:
        r.bound = generic_bound_report(inst, r.trial, cfg.model, cfg.population, *r.xi);
        break;
      case BoundKind::avu:
        r.bound = avu_bound_report(inst, r.outcome.kernel, r.trial, cfg.model, cfg.population,
                                   *r.xi);
        break;
      case BoundKind::fl:
        r.bound = fl_bound_report(inst, r.outcome.kernel, r.trial, cfg.model, cfg.population,
                                  *xs.reference, *r.xi);
        break;
    }
    timings.emplace_back("bound", elapsed_ms(t));
  }
  r.timings_ms = std::move(timings);
  return r;
}

ValidityReport run_validity(const ExperimentConfig& cfg, std::size_t jobs) {
  if (!cfg.bound.kind) throw ConfigError("$.bound.kind: validate-bounds needs a bound kind");
  ValidityConfig vc;
  vc.model = cfg.model;
  vc.spec = cfg.population;
  vc.n = cfg.n;
  vc.m = cfg.m;
  vc.inst = instantiation(cfg);
  vc.unlearn = unlearn_settings(cfg);
  vc.xi = xi_settings(cfg);
  vc.n_trials = cfg.validity.n_trials;
  vc.seed = derive_seed(cfg.seed, "validity");
  vc.jobs = jobs;
  return run_validity_experiment(vc);
}

void apply_sweep_value(ExperimentConfig& cfg, const std::string& axis, double value) {
  auto as_count = [&](const std::string& name) {
    if (!(value >= 0.0) || value != std::floor(value)) {
      throw ConfigError("sweep: " + name + " values must be non-negative integers");
    }
    return static_cast<std::size_t>(value);
  };
  if (axis == "lambda") {
    cfg.scrub.lambda = value;
  } else if (axis == "beta") {
    cfg.bound.beta = value;
  } else if (axis == "delta") {
    cfg.bound.delta = value;
  } else if (axis == "m") {
    cfg.m = as_count("m");
  } else if (axis == "n") {
    cfg.n = as_count("n");
  } else {
    throw ConfigError("sweep: '" + axis +
                      "' is not a sweepable axis (lambda, beta, delta, m, n)");
  }
}

std::vector<std::string> summary_header() {
  return {"method",        "cert_mode",   "epsilon_estimate", "epsilon_stderr", "cert_passed",
          "bound_kind",    "lhs",         "lhs_stderr",       "training_term",  "kl_term",
          "slack_term",    "rhs",         "holds",            "fl_loss_term",   "fl_kl_term"};
}

std::vector<std::string> summary_row(const ExperimentConfig& cfg, const RunResult& r) {
  auto num = [](double x) { return format_double(x); };
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  std::vector<std::string> row{to_string(cfg.method), to_string(r.certificate.mode),
                               num(r.certificate.epsilon_estimate), num(r.certificate.std_error),
                               flag(r.certificate.passed())};
  if (r.bound) {
    const BoundReport& b = *r.bound;
    row.insert(row.end(), {to_string(b.inst.kind), num(b.lhs), num(b.lhs_stderr),
                           num(b.training_term), num(b.kl_term), num(b.slack_term), num(b.rhs),
                           flag(b.holds)});
  } else {
    row.insert(row.end(), {"none", "", "", "", "", "", "", ""});
  }
  if (r.outcome.scrub) {
    row.push_back(num(r.outcome.scrub->terms.loss_term));
    row.push_back(num(r.outcome.scrub->terms.kl_term));
  } else {
    row.insert(row.end(), {"", ""});
  }
  return row;
}

namespace {

// Collects files in a sibling staging directory and moves it into place in
// one rename, so readers never see a half-written run.
class OutputWriter {
 public:
  explicit OutputWriter(fs::path final) : final_(std::move(final)) {
    if (final_.empty()) throw ConfigError("output directory must not be empty");
    staging_ = final_;
    staging_ += ".partial";
    if (fs::exists(final_) && !fs::exists(final_ / "manifest.json")) {
      throw ConfigError("output directory '" + final_.string() +
                        "' exists and does not hold a previous run");
    }
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }

  void add(const std::string& rel, const std::string& contents) {
    const fs::path p = staging_ / rel;
    fs::create_directories(p.parent_path());
    write_text_file(p.string(), contents);
    files_.push_back(rel);
  }

  void commit(Json manifest) {
    std::sort(files_.begin(), files_.end());
    manifest["outputs"] = files_;
    write_text_file((staging_ / "manifest.json").string(), dump_json(manifest));
    if (fs::exists(final_)) fs::remove_all(final_);
    if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
    fs::rename(staging_, final_);
  }

 private:
  fs::path final_;
  fs::path staging_;
  std::vector<std::string> files_;
};

Json seeds_json(const ExperimentConfig& cfg) {
  Json s = {{"root", cfg.seed}};
  for (const char* stage : {"trial", "unlearn", "certificate", "certificate-draws", "xi",
                            "avu-train", "validity"}) {
    s[stage] = derive_seed(cfg.seed, stage);
  }
  return s;
}

Json manifest_for(const std::string& command, const ExperimentConfig& cfg,
                  const std::vector<std::pair<std::string, double>>& timings) {
  Json t = Json::object();
  for (const auto& [stage, ms] : timings) t[stage] = ms;
  return {{"tool", "unlearn_forge"},
          {"version", kToolVersion},
          {"command", command},
          {"config_hash", config_hash(cfg)},
          {"seeds", seeds_json(cfg)},
          {"timings_ms", t}};
}

Json mechanism_json(const RunResult& r) {
  if (r.training) {
    return {{"kind", "avu"},
            {"mechanism", to_json(r.training->mechanism)},
            {"steps", r.training->steps},
            {"overfit_warning", r.training->overfit_warning}};
  }
  if (r.outcome.scrub) {
    return {{"kind", "scrub"},
            {"mechanism", to_json(r.outcome.scrub->mechanism)},
            {"loss_term", r.outcome.scrub->terms.loss_term},
            {"kl_term", r.outcome.scrub->terms.kl_term},
            {"steps", r.outcome.scrub->steps}};
  }
  if (r.outcome.variational) {
    return {{"kind", "eubo"},
            {"q", to_json(r.outcome.variational->q)},
            {"steps", r.outcome.variational->step_count},
            {"converged", r.outcome.variational->converged}};
  }
  return {{"kind", "kernel"},
          {"transform_rows", matrix_to_json(r.outcome.kernel.transform)},
          {"offset", vector_to_json(r.outcome.kernel.offset)},
          {"noise_factor_rows", matrix_to_json(r.outcome.kernel.noise_factor)}};
}

void add_run_files(OutputWriter& out, const std::string& prefix, const ExperimentConfig& cfg,
                   const RunResult& r) {
  out.add(prefix + "config.json", dump_json(canonical_json(cfg)));
  out.add(prefix + "certificate.json", dump_json(to_json(r.certificate)));
  if (r.bound) {
    out.add(prefix + "bound.json", dump_json({{"report", to_json(*r.bound)}, {"xi", to_json(*r.xi)}}));
  }
  out.add(prefix + "mechanism.json", dump_json(mechanism_json(r)));
  out.add(prefix + "summary.csv", csv_row(summary_header()) + csv_row(summary_row(cfg, r)));
}

int cmd_run(const ExperimentConfig& cfg) {
  OutputWriter out(cfg.output_dir);
  const RunResult r = run_experiment(cfg);
  add_run_files(out, "", cfg, r);
  out.commit(manifest_for("run", cfg, r.timings_ms));
  return 0;
}

int cmd_certify(ExperimentConfig cfg) {
  cfg.bound.kind.reset();
  OutputWriter out(cfg.output_dir);
  const RunResult r = run_experiment(cfg);
  out.add("config.json", dump_json(canonical_json(cfg)));
  out.add("certificate.json", dump_json(to_json(r.certificate)));
  out.commit(manifest_for("certify", cfg, r.timings_ms));
  std::cout << "epsilon_estimate " << format_double(r.certificate.epsilon_estimate) << " stderr "
            << format_double(r.certificate.std_error) << "\n";
  if (cfg.certificate.epsilon && !r.certificate.passed()) {
    std::cerr << "certificate failed at epsilon " << format_double(*cfg.certificate.epsilon)
              << "\n";
    return 3;
  }
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw ConfigError("--values: '" + item + "' is not a number");
    }
    values.push_back(v);
  }
  if (values.empty()) throw ConfigError("--values: at least one value is required");
  return values;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis, const std::string& values_text,
              std::size_t jobs) {
  const std::vector<double> values = parse_values(values_text);
  std::vector<ExperimentConfig> runs;
  for (double v : values) {
    ExperimentConfig c = cfg;
    apply_sweep_value(c, axis, v);
    SchemaErrors errors;
    validate_config(c, errors);
    errors.throw_if_any();
    runs.push_back(std::move(c));
  }
  OutputWriter out(cfg.output_dir);
  std::vector<std::optional<RunResult>> results(runs.size());
  const auto t = Clock::now();
  parallel_for(runs.size(), jobs, [&](std::size_t i) { results[i] = run_experiment(runs[i]); });
  std::vector<std::string> header = summary_header();
  header.insert(header.begin(), axis);
  std::string csv = csv_row(header);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    add_run_files(out, "run-" + std::to_string(i) + "/", runs[i], *results[i]);
    std::vector<std::string> row = summary_row(runs[i], *results[i]);
    row.insert(row.begin(), format_double(values[i]));
    csv += csv_row(row);
  }
  out.add("sweep.csv", csv);
  out.commit(manifest_for("sweep", cfg, {{"sweep", elapsed_ms(t)}}));
  return 0;
}

int cmd_validate(const ExperimentConfig& cfg, std::size_t jobs) {
  OutputWriter out(cfg.output_dir);
  const auto t = Clock::now();
  const ValidityReport rep = run_validity(cfg, jobs);
  out.add("config.json", dump_json(canonical_json(cfg)));
  out.add("validity.json", dump_json(to_json(rep)));
  std::string csv = csv_row({"index", "seed", "lhs", "lhs_stderr", "training_term", "kl_term",
                             "slack_term", "rhs", "holds"});
  for (const auto& tr : rep.trials) {
    const BoundReport& b = tr.report;
    csv += csv_row({std::to_string(tr.index), std::to_string(tr.seed), format_double(b.lhs),
                    format_double(b.lhs_stderr), format_double(b.training_term),
                    format_double(b.kl_term), format_double(b.slack_term), format_double(b.rhs),
                    b.holds ? "true" : "false"});
  }
  out.add("trials.csv", csv);
  out.commit(manifest_for("validate-bounds", cfg, {{"validity", elapsed_ms(t)}}));
  std::cout << "violations " << rep.n_violations << "/" << rep.n_trials << " rate "
            << format_double(rep.violation_rate) << " tolerance " << format_double(rep.tolerance)
            << "\n";
  if (rep.low_resolution) {
    std::cerr << "warning: n_trials*delta = " << format_double(rep.n_trials * rep.delta)
              << " is too small to resolve delta\n";
  }
  return rep.passed ? 0 : 3;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  OutputWriter out(cfg.output_dir);
  const auto t = Clock::now();
  const Trial trial =
      draw_trial(cfg.model, cfg.population, cfg.n, cfg.m, derive_seed(cfg.seed, "trial"));
  std::ostringstream data;
  write_dataset_csv(data, trial.data);
  out.add("data.csv", data.str());
  out.add("delete_request.json", dump_json({{"erase_indices", trial.request.erase_indices}}));
  out.commit(manifest_for("gen-data", cfg, {{"generate", elapsed_ms(t)}}));
  return 0;
}

std::size_t default_jobs() {
  if (const char* env = std::getenv("UNLEARN_FORGE_JOBS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError("UNLEARN_FORGE_JOBS must be a positive integer");
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Unlearning mechanisms, certificates and PAC-Bayes bounds on conjugate models"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
  };
  std::map<std::string, Common> common;
  std::string axis;
  std::string values;

  auto add_common = [&](CLI::App* sub) {
    Common& c = common[sub->get_name()];
    sub->add_option("--config", c.config, "experiment config (JSON)")->required();
    sub->add_option("--out", c.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", c.seed, "root seed (overrides seed)");
    sub->add_option("--jobs", c.jobs, "worker threads (default: UNLEARN_FORGE_JOBS or 1)");
    return sub;
  };
  CLI::App* run = add_common(app.add_subcommand("run", "run one learn/unlearn/certify/bound pipeline"));
  CLI::App* sweep = add_common(app.add_subcommand("sweep", "repeat run over values of one field"));
  sweep->add_option("--axis", axis, "lambda, beta, delta, m or n")->required();
  sweep->add_option("--values", values, "comma-separated values");
  CLI::App* validate =
      add_common(app.add_subcommand("validate-bounds", "empirical violation rate of a bound"));
  CLI::App* gen = add_common(app.add_subcommand("gen-data", "write the seeded dataset as CSV"));
  CLI::App* cert = add_common(app.add_subcommand("certify", "KL certificate for one run"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const Common& c = common[chosen->get_name()];
  try {
    ExperimentConfig cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    const std::size_t jobs = c.jobs ? *c.jobs : default_jobs();
    if (jobs == 0) throw ConfigError("--jobs must be at least 1");
    if (chosen == run) return cmd_run(cfg);
    if (chosen == sweep) return cmd_sweep(cfg, axis, values, jobs);
    if (chosen == validate) return cmd_validate(cfg, jobs);
    if (chosen == gen) return cmd_gen_data(cfg);
    if (chosen == cert) return cmd_certify(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace uf

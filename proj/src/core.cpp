#include "unlearn_forge/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "unlearn_forge/error.hpp"

namespace uf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw ConfigError(std::string(what) + ": non-finite entries");
}

}  // namespace

std::string to_string(Task task) {
  return task == Task::gaussian_mean ? "gaussian-mean" : "linear-regression";
}

std::string to_string(LossKind kind) {
  return kind == LossKind::squared_error ? "squared-error" : "gaussian-nll";
}

Task parse_task(const std::string& name) {
  if (name == "gaussian-mean") return Task::gaussian_mean;
  if (name == "linear-regression") return Task::linear_regression;
  throw ConfigError("unknown task '" + name + "'");
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "squared-error") return LossKind::squared_error;
  if (name == "gaussian-nll") return LossKind::gaussian_nll;
  throw ConfigError("unknown loss '" + name + "'");
}

std::size_t parameter_dim(Task task, std::size_t data_dim) {
  if (task == Task::gaussian_mean) return data_dim;
  if (data_dim < 2) throw ShapeError("linear-regression points need at least 2 coordinates");
  return data_dim - 1;
}

std::size_t data_dim(Task task, std::size_t parameter_dim) {
  return task == Task::gaussian_mean ? parameter_dim : parameter_dim + 1;
}

Dataset::Dataset(std::vector<Vector> points) : points_(std::move(points)) {
  if (points_.empty()) throw ConfigError("Dataset: needs at least one point");
  dim_ = static_cast<std::size_t>(points_.front().size());
  if (dim_ == 0) throw ShapeError("Dataset: points must have dimension >= 1");
  for (const auto& p : points_) {
    if (static_cast<std::size_t>(p.size()) != dim_) {
      throw ShapeError("Dataset: points differ in dimension");
    }
    check_finite(p, "Dataset");
  }
}

Dataset::Dataset(std::size_t dim, std::vector<Vector> points)
    : dim_(dim), points_(std::move(points)) {}

Dataset Dataset::empty(std::size_t dim) { return Dataset(dim, {}); }

Dataset Dataset::concat(const Dataset& other) const {
  if (other.dim() != dim_) throw ShapeError("Dataset::concat: dimension mismatch");
  std::vector<Vector> pts = points_;
  pts.insert(pts.end(), other.points_.begin(), other.points_.end());
  return Dataset(dim_, std::move(pts));
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.dim_ != b.dim_ || a.points_.size() != b.points_.size()) return false;
  for (std::size_t i = 0; i < a.points_.size(); ++i) {
    if (a.points_[i] != b.points_[i]) return false;
  }
  return true;
}

std::size_t PopulationSpec::data_dim() const { return uf::data_dim(kind, parameter_dim()); }

void PopulationSpec::validate() const {
  if (true_params.size() == 0) throw ConfigError("population: true_params must be non-empty");
  check_finite(true_params, "population.true_params");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("population: noise_variance must be positive");
  }
  if (kind == Task::linear_regression) {
    if (!feature_distribution) {
      throw ConfigError("population: linear-regression needs a feature_distribution");
    }
    if (feature_distribution->dim() != parameter_dim()) {
      throw ConfigError("population: feature_distribution dimension must match true_params");
    }
  }
}

Loss Loss::gaussian_nll(Task task, double noise_variance) {
  if (!(noise_variance > 0.0)) throw ConfigError("Loss: noise_variance must be positive");
  return {LossKind::gaussian_nll, task, noise_variance};
}

QuadraticForm Loss::point_form(const Vector& z, std::size_t param_dim) const {
  const auto p = static_cast<Eigen::Index>(param_dim);
  if (static_cast<std::size_t>(z.size()) != data_dim(task, param_dim)) {
    throw ShapeError("loss: point dimension does not match parameter dimension");
  }
  QuadraticForm f;
  std::size_t outputs = 1;
  if (task == Task::gaussian_mean) {
    // ‖w − z‖²
    f = {Matrix::Identity(p, p), z, z.squaredNorm()};
    outputs = param_dim;
  } else {
    // (y − xᵀw)²
    const Vector x = z.head(p);
    const double y = z(p);
    f = {x * x.transpose(), y * x, y * y};
  }
  if (kind == LossKind::gaussian_nll) {
    f *= 0.5 / noise_variance;
    f.constant += 0.5 * static_cast<double>(outputs) * (kLog2Pi + std::log(noise_variance));
  }
  return f;
}

double Loss::operator()(const Vector& w, const Vector& z) const {
  return point_form(z, static_cast<std::size_t>(w.size()))(w);
}

Dataset generate_dataset(const PopulationSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ConfigError("generate_dataset: n must be >= 1");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(spec.noise_variance);
  const auto p = static_cast<Eigen::Index>(spec.parameter_dim());
  std::vector<Vector> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.kind == Task::gaussian_mean) {
      Vector z(p);
      for (Eigen::Index j = 0; j < p; ++j) z(j) = spec.true_params(j) + sd * normal(rng);
      pts.push_back(std::move(z));
    } else {
      const Vector x = draw(*spec.feature_distribution, rng);
      Vector z(p + 1);
      z.head(p) = x;
      z(p) = spec.true_params.dot(x) + sd * normal(rng);
      pts.push_back(std::move(z));
    }
  }
  return Dataset(std::move(pts));
}

QuadraticForm training_loss_form(const Dataset& data, const Loss& loss) {
  if (data.is_empty()) throw ConfigError("training loss of an empty dataset");
  const std::size_t p = parameter_dim(loss.task, data.dim());
  QuadraticForm total = QuadraticForm::zero(p);
  for (const auto& z : data.points()) total += loss.point_form(z, p);
  total *= 1.0 / static_cast<double>(data.size());
  return total;
}

double training_loss(const Vector& w, const Dataset& data, const Loss& loss) {
  if (static_cast<std::size_t>(w.size()) != parameter_dim(loss.task, data.dim())) {
    throw ShapeError("training_loss: parameter dimension does not match data");
  }
  double sum = 0.0;
  for (const auto& z : data.points()) sum += loss(w, z);
  return sum / static_cast<double>(data.size());
}

QuadraticForm population_loss_form(const PopulationSpec& spec, const Loss& loss) {
  spec.validate();
  if (spec.kind != loss.task) {
    throw CapabilityError("population_loss: loss task does not match population kind");
  }
  const auto p = static_cast<Eigen::Index>(spec.parameter_dim());
  const double s2 = spec.noise_variance;
  QuadraticForm f;
  std::size_t outputs = 1;
  if (spec.kind == Task::gaussian_mean) {
    // E‖w − Z‖² = ‖w − μ‖² + d·s²
    const Vector& mu = spec.true_params;
    f = {Matrix::Identity(p, p), mu, mu.squaredNorm() + static_cast<double>(p) * s2};
    outputs = static_cast<std::size_t>(p);
  } else {
    // E(y − xᵀw)² = (θ − w)ᵀ K (θ − w) + s², K = E[xxᵀ]
    const GaussianDist& fx = *spec.feature_distribution;
    const Matrix k = fx.covariance() + fx.mean() * fx.mean().transpose();
    const Vector& theta = spec.true_params;
    f = {k, k * theta, theta.dot(k * theta) + s2};
  }
  if (loss.kind == LossKind::gaussian_nll) {
    f *= 0.5 / loss.noise_variance;
    f.constant += 0.5 * static_cast<double>(outputs) * (kLog2Pi + std::log(loss.noise_variance));
  }
  return f;
}

Estimate population_loss(const Vector& w, const PopulationSpec& spec, const Loss& loss,
                         std::optional<MonteCarloMode> mc) {
  if (static_cast<std::size_t>(w.size()) != spec.parameter_dim()) {
    throw ShapeError("population_loss: parameter dimension mismatch");
  }
  if (!mc) return {population_loss_form(spec, loss)(w), 0.0};
  spec.validate();
  if (mc->n_mc < 2) throw ConfigError("population_loss: n_mc must be >= 2");
  const Dataset draws = generate_dataset(spec, mc->n_mc, mc->seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double x = loss(w, draws[i]);
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(draws.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws.size()))};
}

Estimate generalization_error(const GaussianDist& posterior, const Dataset& data,
                              const PopulationLossFn& population, const Loss& loss,
                              std::size_t n_mc, std::uint64_t seed) {
  if (posterior.dim() != parameter_dim(loss.task, data.dim())) {
    throw ShapeError("generalization_error: posterior dimension does not match data");
  }
  if (n_mc < 2) throw ConfigError("generalization_error: n_mc must be >= 2");
  const QuadraticForm train = training_loss_form(data, loss);
  Rng rng = make_rng(seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const Vector w = draw(posterior, rng);
    const double x = population(w) - train(w);
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  return {mean, std::sqrt(m2 / static_cast<double>(n_mc - 1) / static_cast<double>(n_mc))};
}

Estimate generalization_error(const GaussianDist& posterior, const Dataset& data,
                              const PopulationSpec& spec, const Loss& loss, std::size_t n_mc,
                              std::uint64_t seed) {
  const QuadraticForm pop = population_loss_form(spec, loss);
  return generalization_error(
      posterior, data, [&pop](const Vector& w) { return pop(w); }, loss, n_mc, seed);
}

DeleteRequest draw_delete_request(const Dataset& data, std::size_t m, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (m < 1 || m >= n) {
    throw ConfigError("draw_delete_request: need 1 <= m < n (m=" + std::to_string(m) +
                      ", n=" + std::to_string(n) + ")");
  }
  Rng rng = make_rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher–Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return {std::move(idx)};
}

std::size_t default_delete_count(std::size_t n) {
  if (n < 2) throw ConfigError("default_delete_count: need n >= 2");
  const auto m = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n)));
  return std::min(std::max<std::size_t>(m, 1), n - 1);
}

DataSplit split(const Dataset& data, const DeleteRequest& request) {
  std::vector<bool> erased(data.size(), false);
  for (std::size_t i : request.erase_indices) {
    if (i >= data.size()) throw ConfigError("split: erase index out of range");
    if (erased[i]) throw ConfigError("split: duplicate erase index");
    erased[i] = true;
  }
  std::vector<Vector> keep;
  std::vector<Vector> gone;
  for (std::size_t i = 0; i < data.size(); ++i) (erased[i] ? gone : keep).push_back(data[i]);
  auto wrap = [&](std::vector<Vector> pts) {
    return pts.empty() ? Dataset::empty(data.dim()) : Dataset(std::move(pts));
  };
  return {wrap(std::move(keep)), wrap(std::move(gone))};
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "dim=" << data.dim() << "\r\n";
  for (const auto& z : data.points()) {
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (j > 0) out << ',';
      out << format_double(z(j));
    }
    out << "\r\n";
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) s.pop_back();
  };
  if (!std::getline(in, line)) throw ConfigError("dataset csv: missing header");
  strip(line);
  if (line.rfind("dim=", 0) != 0) throw ConfigError("dataset csv: header must be dim=<d>");
  std::size_t dim = 0;
  {
    const char* b = line.data() + 4;
    const char* e = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(b, e, dim);
    if (ec != std::errc() || ptr != e || dim == 0) {
      throw ConfigError("dataset csv: bad dimension in header");
    }
  }
  std::vector<Vector> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip(line);
    if (line.empty()) continue;
    Vector z(static_cast<Eigen::Index>(dim));
    std::size_t col = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = std::min(line.find(',', pos), line.size());
      if (col >= dim) throw ConfigError("dataset csv: too many fields on row " + std::to_string(row));
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + comma, v);
      if (ec != std::errc() || ptr != line.data() + comma) {
        throw ConfigError("dataset csv: bad number on row " + std::to_string(row));
      }
      z(static_cast<Eigen::Index>(col++)) = v;
      pos = comma + 1;
    }
    if (col != dim) throw ConfigError("dataset csv: too few fields on row " + std::to_string(row));
    pts.push_back(std::move(z));
  }
  return Dataset(std::move(pts));
}

}  // namespace uf

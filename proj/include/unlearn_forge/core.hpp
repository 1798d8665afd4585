#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unlearn_forge/gaussian.hpp"

namespace uf {

enum class Task { gaussian_mean, linear_regression };
enum class LossKind { squared_error, gaussian_nll };

std::string to_string(Task task);
std::string to_string(LossKind kind);
Task parse_task(const std::string& name);
LossKind parse_loss_kind(const std::string& name);

/// Number of model parameters implied by a data dimension for `task`.
std::size_t parameter_dim(Task task, std::size_t data_dim);
std::size_t data_dim(Task task, std::size_t parameter_dim);

/// Ordered, non-empty collection of points sharing one dimension. For
/// regression the last coordinate of each point is the target.
class Dataset {
 public:
  explicit Dataset(std::vector<Vector> points);
  /// Empty dataset of a fixed dimension (used for D_e/D_r bookkeeping only).
  static Dataset empty(std::size_t dim);

  std::size_t size() const { return points_.size(); }
  std::size_t dim() const { return dim_; }
  bool is_empty() const { return points_.empty(); }
  const std::vector<Vector>& points() const { return points_; }
  const Vector& operator[](std::size_t i) const { return points_[i]; }

  Dataset concat(const Dataset& other) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  Dataset(std::size_t dim, std::vector<Vector> points);
  std::size_t dim_ = 0;
  std::vector<Vector> points_;
};

/// Synthetic data law standing in for the unknown population.
struct PopulationSpec {
  Task kind = Task::gaussian_mean;
  /// Mean of Z (gaussian-mean) or regression coefficients (linear-regression).
  Vector true_params;
  double noise_variance = 1.0;
  /// Law of the features x (linear-regression only).
  std::optional<GaussianDist> feature_distribution;

  std::size_t parameter_dim() const { return static_cast<std::size_t>(true_params.size()); }
  std::size_t data_dim() const;
  /// Throws ConfigError on a non-positive variance or inconsistent shapes.
  void validate() const;
};

/// ℓ(w, z) for a task. The Gaussian NLL uses `noise_variance` as the
/// likelihood variance (supplied by the conjugate model).
struct Loss {
  LossKind kind = LossKind::squared_error;
  Task task = Task::gaussian_mean;
  double noise_variance = 1.0;

  static Loss squared_error(Task task) { return {LossKind::squared_error, task, 1.0}; }
  static Loss gaussian_nll(Task task, double noise_variance);

  /// ℓ(·, z) as a quadratic form in w.
  QuadraticForm point_form(const Vector& z, std::size_t param_dim) const;
  double operator()(const Vector& w, const Vector& z) const;
};

struct DeleteRequest {
  /// Sorted, distinct indices into the dataset.
  std::vector<std::size_t> erase_indices;
  std::size_t m() const { return erase_indices.size(); }
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

Dataset generate_dataset(const PopulationSpec& spec, std::size_t n, std::uint64_t seed);

/// L̂(w|D) = (1/n) Σ ℓ(w, Z_i) as a quadratic form in w.
QuadraticForm training_loss_form(const Dataset& data, const Loss& loss);
double training_loss(const Vector& w, const Dataset& data, const Loss& loss);

/// L(w) = E_{P_Z} ℓ(w, Z) as a quadratic form in w.
QuadraticForm population_loss_form(const PopulationSpec& spec, const Loss& loss);

struct MonteCarloMode {
  std::size_t n_mc = 100000;
  std::uint64_t seed = 0;
};

/// Closed form when `mc` is empty, otherwise a Monte Carlo average over
/// fresh draws from the population with its standard error.
Estimate population_loss(const Vector& w, const PopulationSpec& spec, const Loss& loss,
                         std::optional<MonteCarloMode> mc = std::nullopt);

using PopulationLossFn = std::function<double(const Vector&)>;

/// E_{W~posterior}[L(W) − L̂(W|D)] by Monte Carlo over W.
Estimate generalization_error(const GaussianDist& posterior, const Dataset& data,
                              const PopulationSpec& spec, const Loss& loss, std::size_t n_mc,
                              std::uint64_t seed);
Estimate generalization_error(const GaussianDist& posterior, const Dataset& data,
                              const PopulationLossFn& population, const Loss& loss,
                              std::size_t n_mc, std::uint64_t seed);

/// Uniform m-subset without replacement; requires 1 <= m < n.
DeleteRequest draw_delete_request(const Dataset& data, std::size_t m, std::uint64_t seed);

/// Default deletion size ⌈0.1·n⌉, kept strictly below n.
std::size_t default_delete_count(std::size_t n);

struct DataSplit {
  Dataset remaining;
  Dataset erased;
};

DataSplit split(const Dataset& data, const DeleteRequest& request);

/// CSV with a `dim=<d>` header line and one point per row.
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);

/// Shortest-round-trip-safe decimal rendering (17 significant digits).
std::string format_double(double x);

}  // namespace uf

#pragma once

#include "sbmre/covariance.hpp"
#include "sbmre/random.hpp"
#include "sbmre/readout.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

namespace sbmre {

/// Branching Brownian motion with branching rate n in a random environment.
/// Each epoch has length 1/n; the environment is truncated at +-sqrt(n).
struct BranchingConfig {
  int n = 100;
  CovarianceKernel kernel = CovarianceKernel::constant(1, 0.0);
  Eigen::MatrixXd initial;  // d x K_n starting positions
  std::size_t max_population = 1'000'000;
  double horizon = 1.0;

  int dim() const { return kernel.dim(); }
  void validate() const;

  /// round(mass * n) particles at x, i.e. the measure mass * delta_x.
  static Eigen::MatrixXd point_mass(const Eigen::VectorXd& x, double mass, int n);
};

class ParticlePopulation {
 public:
  ParticlePopulation() = default;
  ParticlePopulation(int n, Eigen::MatrixXd positions, std::size_t epoch = 0)
      : n_(n), epoch_(epoch), positions_(std::move(positions)) {}

  int n() const { return n_; }
  std::size_t epoch() const { return epoch_; }
  double time() const { return static_cast<double>(epoch_) / n_; }
  std::size_t count() const { return static_cast<std::size_t>(positions_.cols()); }
  /// Total mass X(R^d) = count / n.
  double mass() const { return static_cast<double>(count()) / n_; }
  const Eigen::MatrixXd& positions() const { return positions_; }

 private:
  int n_ = 1;
  std::size_t epoch_ = 0;
  Eigen::MatrixXd positions_;
};

/// Source of the per-epoch field values at the occupied positions, before
/// truncation.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual Eigen::VectorXd sample(const Eigen::MatrixXd& positions, Rng& rng) const = 0;
};

/// Centered Gaussian field with covariance C, sampled jointly at the distinct
/// positions; coinciding positions share one value.
class GaussianEnvironment final : public Environment {
 public:
  explicit GaussianEnvironment(CovarianceKernel kernel) : kernel_(std::move(kernel)) {}
  Eigen::VectorXd sample(const Eigen::MatrixXd& positions, Rng& rng) const override;

 private:
  CovarianceKernel kernel_;
};

/// Deterministic field xi(x), for forced-environment checks.
class FixedEnvironment final : public Environment {
 public:
  explicit FixedEnvironment(std::function<double(const Eigen::VectorXd&)> field) : field_(std::move(field)) {}
  Eigen::VectorXd sample(const Eigen::MatrixXd& positions, Rng& rng) const override;

 private:
  std::function<double(const Eigen::VectorXd&)> field_;
};

inline double truncate_field(double xi, int n) {
  const double cap = std::sqrt(static_cast<double>(n));
  return std::clamp(xi, -cap, cap);
}

class PopulationCapExceeded : public std::runtime_error {
 public:
  PopulationCapExceeded(std::size_t epoch, std::size_t population);
  std::size_t epoch() const { return epoch_; }
  std::size_t population() const { return population_; }

 private:
  std::size_t epoch_;
  std::size_t population_;
};

struct EpochStats {
  std::size_t splits = 0;
  std::size_t deaths = 0;
  double min_field = 0.0;  // truncated field extremes seen this epoch
  double max_field = 0.0;
};

/// Diffuse for 1/n, sample the field, then split or die.
ParticlePopulation step_epoch(const ParticlePopulation& pop, const BranchingConfig& config, const Environment& env,
                              Rng& rng, EpochStats* stats = nullptr);

/// Snapshots at `save_times` (snapped to the epoch grid, sorted, duplicates
/// kept once). Uses the Gaussian environment unless `env` is given.
std::vector<ParticlePopulation> run(const BranchingConfig& config, const std::vector<double>& save_times, Rng& rng,
                                    const Environment* env = nullptr);

struct Pairing {
  double first = 0.0;   // <f, X>
  double second = 0.0;  // <f (x) f, X (x) X>
};

Pairing empirical_pairing(const ParticlePopulation& pop, const std::function<double(const Eigen::VectorXd&)>& f);

struct MartingaleResidual {
  std::vector<double> times;
  std::vector<double> residual;            // M_t^f
  std::vector<double> quadratic_variation;  // int <f^2, X> + <C f(x)f, X(x)X> ds
};

/// Residual with trapezoidal time integrals over the given snapshots (use
/// every epoch for an O(1/n^2) rule).
MartingaleResidual martingale_residual(const std::vector<ParticlePopulation>& trajectory, const Readout& f,
                                       const CovarianceKernel& kernel);

}  // namespace sbmre

#pragma once

#include "sbmre/covariance.hpp"
#include "sbmre/grid.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace sbmre {

/// Kernel, grid, step size and the grid covariance factor. Immutable and
/// shareable across replicas; each replica wraps it in its own NoisePath.
class NoiseField {
 public:
  NoiseField(CovarianceKernel kernel, const Grid& grid, double dt);

  const CovarianceKernel& kernel() const { return kernel_; }
  const Grid& grid() const { return grid_; }
  double dt() const { return dt_; }
  const CovarianceFactor& factor() const { return factor_; }
  /// C(x_i, x_i) per cell.
  const Eigen::VectorXd& variance() const { return factor_.diagonal; }
  bool silent() const { return factor_.rank() == 0; }

 private:
  CovarianceKernel kernel_;
  Grid grid_;
  double dt_;
  CovarianceFactor factor_;
};

/// Seeded sequence of increments dW. The increment at step k depends only on
/// (seed, k), so any two solvers reading the same path see the same noise.
class NoisePath {
 public:
  NoisePath(std::shared_ptr<const NoiseField> field, std::uint64_t seed, bool cache = false);

  static NoisePath make(const CovarianceKernel& kernel, const Grid& grid, double dt, std::uint64_t seed,
                        bool cache = false) {
    return {std::make_shared<const NoiseField>(kernel, grid, dt), seed, cache};
  }

  const NoiseField& field() const { return *field_; }
  std::shared_ptr<const NoiseField> shared_field() const { return field_; }
  const Grid& grid() const { return field_->grid(); }
  double dt() const { return field_->dt(); }
  std::uint64_t seed() const { return seed_; }

  /// dW at step k (k = 0 covers [0, dt)).
  Eigen::VectorXd increment(std::size_t step) const;

 private:
  std::shared_ptr<const NoiseField> field_;
  std::uint64_t seed_;
  bool cache_;
  mutable std::vector<std::optional<Eigen::VectorXd>> cached_;
};

enum class SplittingOrder { Symmetric, Lie };

enum class NoiseScheme {
  Ito,                // exp(dW - C(x,x) dt / 2)
  StratonovichHeun,   // 1 + dW + dW^2 / 2, no correction
};

struct SchemeConfig {
  SplittingOrder order = SplittingOrder::Symmetric;
};

/// Saved slices of one solver run. Covers both the linear (PAM) and the
/// log-Laplace equation.
struct Trajectory {
  Grid grid;
  double dt = 0.0;
  bool ito_correction = true;
  SplittingOrder order = SplittingOrder::Symmetric;
  std::vector<double> times;
  std::vector<GridFunction<double>> slices;

  const GridFunction<double>& back() const { return slices.back(); }
};

using PamSolution = Trajectory;
using LogLaplaceSolution = Trajectory;

class NonFiniteSolution : public std::runtime_error {
 public:
  NonFiniteSolution(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Called after every completed step with the resolved state; may rescale it.
using StepObserver = std::function<void(std::size_t step, double t, GridFunction<double>& state)>;

struct SolveOptions {
  SchemeConfig scheme;
  /// Times to save (snapped to the step grid). Empty: only 0 and T.
  std::vector<double> save_times;
  StepObserver observer;
};

/// dv = (1/2) Lap v dt + v dW.
PamSolution solve_pam(const GridFunction<double>& f, double T, const NoisePath& noise, const SolveOptions& options = {});

/// du = (1/2) Lap u dt - (1/2) u^2 dt + u dW, u(0) = lambda f.
LogLaplaceSolution solve_log_laplace(const GridFunction<double>& f, double lambda, double T, const NoisePath& noise,
                                     const SolveOptions& options = {});

/// Noise-free solve of du = (1/2) Lap u - (1/2) u^2 on `grid` with step dt.
LogLaplaceSolution solve_log_laplace_deterministic(const GridFunction<double>& u0, double T, double dt,
                                                   const SolveOptions& options = {});

/// Stratonovich PAM for C = a Theta: the Ito solution times e^{a t / 2}.
PamSolution solve_stratonovich_pam(const GridFunction<double>& f, double T, const NoisePath& noise,
                                   const SolveOptions& options = {});

/// Stratonovich PAM stepped directly (Heun factor, no Ito correction).
PamSolution solve_stratonovich_direct(const GridFunction<double>& f, double T, const NoisePath& noise,
                                      const SolveOptions& options = {});

/// Max over saved slices of sup|a - b| / sup|b|.
double relative_sup_difference(const Trajectory& a, const Trajectory& b);

struct DerivativePair {
  double lambda = 0.0;
  double delta = 0.0;
  LogLaplaceSolution lower;   // u(lambda)
  LogLaplaceSolution upper;   // u(lambda + delta)
  Trajectory quotient;        // (upper - lower) / delta
  PamSolution linear;         // v on the same noise
};

DerivativePair derivative_quotient(const GridFunction<double>& f, double lambda, double delta, double T,
                                   const NoisePath& noise, const SolveOptions& options = {});

/// <u(t), 1> = h^d sum u at every saved time.
std::vector<double> total_mass_series(const Trajectory& sol);

/// 1 / (t/2 + 1/k): noise-free log-Laplace solution from the constant k.
inline double logistic_closed_form(double t, double k) { return k == 0.0 ? 0.0 : 1.0 / (0.5 * t + 1.0 / k); }

}  // namespace sbmre

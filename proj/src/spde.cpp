#include "sbmre/spde.hpp"

#include "sbmre/heatkernel.hpp"
#include "sbmre/random.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace sbmre {

NoiseField::NoiseField(CovarianceKernel kernel, const Grid& grid, double dt)
    : kernel_(std::move(kernel)), grid_(grid), dt_(dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("NoiseField: dt must be > 0");
  factor_ = grid_covariance_factor(kernel_, grid_);
}

NoisePath::NoisePath(std::shared_ptr<const NoiseField> field, std::uint64_t seed, bool cache)
    : field_(std::move(field)), seed_(seed), cache_(cache) {
  if (!field_) throw std::invalid_argument("NoisePath: null field");
}

Eigen::VectorXd NoisePath::increment(std::size_t step) const {
  if (field_->silent()) return Eigen::VectorXd::Zero(field_->grid().size());
  if (cache_ && step < cached_.size() && cached_[step]) return *cached_[step];
  Rng rng(derive_seed(seed_, step));
  Eigen::VectorXd dw = sample_gaussian(field_->factor(), std::sqrt(field_->dt()), rng);
  if (cache_) {
    if (cached_.size() <= step) cached_.resize(step + 1);
    cached_[step] = dw;
  }
  return dw;
}

namespace {

enum class Reaction { None, Logistic };

std::size_t step_count(double T, double dt) {
  if (!(T >= 0.0)) throw std::invalid_argument("solver: T must be >= 0");
  const double ratio = T / dt;
  const auto steps = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-6 * std::max(1.0, ratio))
    throw std::invalid_argument("solver: T must be a multiple of dt");
  return steps;
}

void require_nonnegative(const GridFunction<double>& f, const char* who) {
  if (f.size() > 0 && f.values().minCoeff() < 0.0) throw std::invalid_argument(std::string(who) + ": initial datum must be >= 0");
}

void clamp(GridFunction<double>& u) { u.values() = u.values().max(0.0); }

Trajectory run_scheme(GridFunction<double> u, double T, double dt, const NoisePath* noise, Reaction reaction,
                      NoiseScheme scheme, const SolveOptions& options) {
  if (!(dt > 0.0)) throw std::invalid_argument("solver: dt must be > 0");
  const Grid grid = u.grid();
  const std::size_t steps = step_count(T, dt);

  std::set<std::size_t> save_steps{0, steps};
  for (double t : options.save_times) {
    if (t < 0.0 || t > T * (1.0 + 1e-12)) throw std::invalid_argument("solver: save time outside [0, T]");
    save_steps.insert(std::min<std::size_t>(steps, static_cast<std::size_t>(std::llround(t / dt))));
  }

  Trajectory out;
  out.grid = grid;
  out.dt = dt;
  out.ito_correction = scheme == NoiseScheme::Ito;
  out.order = options.scheme.order;
  out.times.push_back(0.0);
  out.slices.push_back(u);

  const bool noisy = noise && !noise->field().silent();
  Eigen::ArrayXd correction;
  if (noisy) correction = -0.5 * dt * noise->field().variance().array();

  const HeatPropagator<double> half(grid, 0.5 * dt);
  const HeatPropagator<double> full(grid, dt);
  const bool symmetric = options.scheme.order == SplittingOrder::Symmetric;
  bool pending_half = false;

  for (std::size_t k = 0; k < steps; ++k) {
    if (symmetric) {
      (pending_half ? full : half).apply(u.values());
      pending_half = false;
    } else {
      full.apply(u.values());
    }
    clamp(u);

    if (reaction == Reaction::Logistic) u.values() = u.values() / (1.0 + (0.5 * dt) * u.values());

    if (noisy) {
      const Eigen::ArrayXd dw = noise->increment(k).array();
      if (scheme == NoiseScheme::Ito) u.values() *= (dw + correction).exp();
      else u.values() *= 1.0 + dw + 0.5 * dw.square();
    }

    const bool save = save_steps.count(k + 1) > 0;
    if (symmetric) {
      if (save || options.observer) {
        half.apply(u.values());
        clamp(u);
      } else {
        pending_half = true;
      }
    }

    if (!u.values().allFinite())
      throw NonFiniteSolution("solver produced non-finite values at step " + std::to_string(k), k);

    const double t = static_cast<double>(k + 1) * dt;
    if (options.observer) options.observer(k, t, u);
    if (save) {
      out.times.push_back(t);
      out.slices.push_back(u);
    }
  }
  return out;
}

const NoisePath& checked_noise(const GridFunction<double>& f, const NoisePath& noise) {
  if (!(f.grid() == noise.grid())) throw std::invalid_argument("solver: initial datum and noise live on different grids");
  return noise;
}

}  // namespace

PamSolution solve_pam(const GridFunction<double>& f, double T, const NoisePath& noise, const SolveOptions& options) {
  require_nonnegative(f, "solve_pam");
  return run_scheme(f, T, checked_noise(f, noise).dt(), &noise, Reaction::None, NoiseScheme::Ito, options);
}

LogLaplaceSolution solve_log_laplace(const GridFunction<double>& f, double lambda, double T, const NoisePath& noise,
                                     const SolveOptions& options) {
  require_nonnegative(f, "solve_log_laplace");
  if (!(lambda >= 0.0)) throw std::invalid_argument("solve_log_laplace: lambda must be >= 0");
  return run_scheme(f * lambda, T, checked_noise(f, noise).dt(), &noise, Reaction::Logistic, NoiseScheme::Ito,
                    options);
}

LogLaplaceSolution solve_log_laplace_deterministic(const GridFunction<double>& u0, double T, double dt,
                                                   const SolveOptions& options) {
  require_nonnegative(u0, "solve_log_laplace_deterministic");
  return run_scheme(u0, T, dt, nullptr, Reaction::Logistic, NoiseScheme::Ito, options);
}

namespace {

double require_scaled_theta(const NoisePath& noise) {
  const auto* st = noise.field().kernel().scaled_theta();
  if (!st) throw std::invalid_argument("Stratonovich PAM requires a scaled_theta kernel");
  return st->a;
}

}  // namespace

PamSolution solve_stratonovich_pam(const GridFunction<double>& f, double T, const NoisePath& noise,
                                   const SolveOptions& options) {
  const double a = require_scaled_theta(noise);
  PamSolution sol = solve_pam(f, T, noise, options);
  for (std::size_t i = 0; i < sol.slices.size(); ++i) sol.slices[i] *= std::exp(0.5 * a * sol.times[i]);
  sol.ito_correction = false;
  return sol;
}

PamSolution solve_stratonovich_direct(const GridFunction<double>& f, double T, const NoisePath& noise,
                                      const SolveOptions& options) {
  require_scaled_theta(noise);
  require_nonnegative(f, "solve_stratonovich_direct");
  return run_scheme(f, T, checked_noise(f, noise).dt(), &noise, Reaction::None, NoiseScheme::StratonovichHeun,
                    options);
}

double relative_sup_difference(const Trajectory& a, const Trajectory& b) {
  if (a.slices.size() != b.slices.size()) throw std::invalid_argument("relative_sup_difference: slice counts differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.slices.size(); ++i) {
    const double scale = sup_norm(b.slices[i]);
    const double diff = sup_norm(a.slices[i] - b.slices[i]);
    worst = std::max(worst, scale > 0.0 ? diff / scale : diff);
  }
  return worst;
}

DerivativePair derivative_quotient(const GridFunction<double>& f, double lambda, double delta, double T,
                                   const NoisePath& noise, const SolveOptions& options) {
  if (!(delta > 0.0)) throw std::invalid_argument("derivative_quotient: delta must be > 0");
  DerivativePair pair;
  pair.lambda = lambda;
  pair.delta = delta;
  pair.lower = solve_log_laplace(f, lambda, T, noise, options);
  pair.upper = solve_log_laplace(f, lambda + delta, T, noise, options);
  pair.linear = solve_pam(f, T, noise, options);
  pair.quotient = pair.lower;
  for (std::size_t i = 0; i < pair.quotient.slices.size(); ++i)
    pair.quotient.slices[i] = (pair.upper.slices[i] - pair.lower.slices[i]) * (1.0 / delta);
  return pair;
}

std::vector<double> total_mass_series(const Trajectory& sol) {
  std::vector<double> mass;
  mass.reserve(sol.slices.size());
  for (const auto& s : sol.slices) mass.push_back(integral(s));
  return mass;
}

}  // namespace sbmre

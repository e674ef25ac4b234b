#include "sbmre/particles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace sbmre {

void BranchingConfig::validate() const {
  if (n < 1) throw std::invalid_argument("BranchingConfig: n must be >= 1");
  if (initial.rows() != dim() && initial.cols() > 0)
    throw std::invalid_argument("BranchingConfig: initial positions have the wrong dimension");
  if (!(horizon >= 0.0)) throw std::invalid_argument("BranchingConfig: horizon must be >= 0");
  if (static_cast<std::size_t>(initial.cols()) > max_population)
    throw std::invalid_argument("BranchingConfig: initial population exceeds the cap");
}

Eigen::MatrixXd BranchingConfig::point_mass(const Eigen::VectorXd& x, double mass, int n) {
  if (!(mass >= 0.0)) throw std::invalid_argument("point_mass: mass must be >= 0");
  const auto k = static_cast<Eigen::Index>(std::llround(mass * n));
  return x.replicate(1, k);
}

PopulationCapExceeded::PopulationCapExceeded(std::size_t epoch, std::size_t population)
    : std::runtime_error("population " + std::to_string(population) + " exceeds cap at epoch " + std::to_string(epoch)),
      epoch_(epoch),
      population_(population) {}

Eigen::VectorXd GaussianEnvironment::sample(const Eigen::MatrixXd& positions, Rng& rng) const {
  const Eigen::Index k = positions.cols();
  if (k == 0) return {};
  if (const auto* c = std::get_if<kernels::Constant>(&kernel_.variant())) {
    std::normal_distribution<double> normal;
    return Eigen::VectorXd::Constant(k, std::sqrt(c->c) * normal(rng));
  }

  // Distinct positions in lexicographic order; duplicates map to one value.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < positions.rows(); ++r) {
      if (positions(r, a) != positions(r, b)) return positions(r, a) < positions(r, b);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(k));
  std::vector<Eigen::Index> unique;
  for (Eigen::Index i : order) {
    if (unique.empty() || less(unique.back(), i)) unique.push_back(i);
    slot[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(unique.size()) - 1;
  }
  Eigen::MatrixXd points(positions.rows(), static_cast<Eigen::Index>(unique.size()));
  for (std::size_t j = 0; j < unique.size(); ++j) points.col(static_cast<Eigen::Index>(j)) = positions.col(unique[j]);

  const Eigen::VectorXd values = sample_gaussian(point_covariance_factor(kernel_, points), 1.0, rng);
  Eigen::VectorXd out(k);
  for (Eigen::Index i = 0; i < k; ++i) out[i] = values[slot[static_cast<std::size_t>(i)]];
  return out;
}

Eigen::VectorXd FixedEnvironment::sample(const Eigen::MatrixXd& positions, Rng&) const {
  Eigen::VectorXd out(positions.cols());
  for (Eigen::Index i = 0; i < positions.cols(); ++i) out[i] = field_(positions.col(i));
  return out;
}

ParticlePopulation step_epoch(const ParticlePopulation& pop, const BranchingConfig& config, const Environment& env,
                              Rng& rng, EpochStats* stats) {
  if (pop.count() > config.max_population) throw PopulationCapExceeded(pop.epoch(), pop.count());
  const int n = config.n;
  const double root_n = std::sqrt(static_cast<double>(n));
  const double step_sd = 1.0 / root_n;

  Eigen::MatrixXd moved = pop.positions();
  std::normal_distribution<double> normal;
  for (Eigen::Index j = 0; j < moved.cols(); ++j)
    for (Eigen::Index r = 0; r < moved.rows(); ++r) moved(r, j) += step_sd * normal(rng);

  const Eigen::VectorXd field = env.sample(moved, rng);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<Eigen::Index> parents;
  parents.reserve(static_cast<std::size_t>(moved.cols()));
  EpochStats local;
  local.min_field = std::numeric_limits<double>::infinity();
  local.max_field = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < moved.cols(); ++j) {
    const double xi = truncate_field(field[j], n);
    local.min_field = std::min(local.min_field, xi);
    local.max_field = std::max(local.max_field, xi);
    const double split = 0.5 + xi / (2.0 * root_n);
    if (uniform(rng) < split) {
      parents.push_back(j);
      ++local.splits;
    } else {
      ++local.deaths;
    }
  }
  if (stats) *stats = local;

  const std::size_t next_count = 2 * parents.size();
  if (next_count > config.max_population) throw PopulationCapExceeded(pop.epoch() + 1, next_count);
  Eigen::MatrixXd offspring(moved.rows(), static_cast<Eigen::Index>(next_count));
  for (std::size_t i = 0; i < parents.size(); ++i) {
    offspring.col(static_cast<Eigen::Index>(2 * i)) = moved.col(parents[i]);
    offspring.col(static_cast<Eigen::Index>(2 * i + 1)) = moved.col(parents[i]);
  }
  return {n, std::move(offspring), pop.epoch() + 1};
}

std::vector<ParticlePopulation> run(const BranchingConfig& config, const std::vector<double>& save_times, Rng& rng,
                                    const Environment* env) {
  config.validate();
  std::vector<std::size_t> epochs;
  for (double t : save_times) {
    if (t < 0.0 || t > config.horizon * (1.0 + 1e-12)) throw std::invalid_argument("run: save time outside [0, T]");
    epochs.push_back(static_cast<std::size_t>(std::llround(t * config.n)));
  }
  std::sort(epochs.begin(), epochs.end());
  epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());

  const GaussianEnvironment gaussian(config.kernel);
  const Environment& field = env ? *env : gaussian;
  ParticlePopulation pop(config.n, config.initial, 0);
  std::vector<ParticlePopulation> out;
  out.reserve(epochs.size());
  for (std::size_t target : epochs) {
    while (pop.epoch() < target) pop = step_epoch(pop, config, field, rng);
    out.push_back(pop);
  }
  return out;
}

Pairing empirical_pairing(const ParticlePopulation& pop, const std::function<double(const Eigen::VectorXd&)>& f) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < pop.positions().cols(); ++j) sum += f(pop.positions().col(j));
  const double first = sum / pop.n();
  return {first, first * first};
}

namespace {

// <f^2, X> + <C f(x)f, X(x)X>
double quadratic_rate(const ParticlePopulation& pop, const Readout& f, const CovarianceKernel& kernel) {
  const auto& x = pop.positions();
  const Eigen::Index k = x.cols();
  Eigen::VectorXd fx(k);
  for (Eigen::Index i = 0; i < k; ++i) fx[i] = f(x.col(i));
  const double n = pop.n();
  double rate = fx.squaredNorm() / n;
  if (const auto* c = std::get_if<kernels::Constant>(&kernel.variant())) {
    rate += c->c * (fx.sum() / n) * (fx.sum() / n);
  } else {
    double cross = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (fx[i] == 0.0) continue;
      for (Eigen::Index j = 0; j < k; ++j) cross += kernel(x.col(i), x.col(j)) * fx[i] * fx[j];
    }
    rate += cross / (n * n);
  }
  return rate;
}

double pair_with(const ParticlePopulation& pop, const std::function<double(const Eigen::VectorXd&)>& g) {
  return empirical_pairing(pop, g).first;
}

}  // namespace

MartingaleResidual martingale_residual(const std::vector<ParticlePopulation>& trajectory, const Readout& f,
                                       const CovarianceKernel& kernel) {
  if (!f.has_laplacian()) throw std::invalid_argument("martingale_residual: readout has no Laplacian");
  MartingaleResidual out;
  if (trajectory.empty()) return out;
  const double f0 = pair_with(trajectory.front(), f.f);
  double drift = 0.0, qv = 0.0;
  double prev_lap = pair_with(trajectory.front(), f.laplacian);
  double prev_rate = quadratic_rate(trajectory.front(), f, kernel);
  double prev_t = trajectory.front().time();
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const auto& pop = trajectory[i];
    const double t = pop.time();
    const double lap = pair_with(pop, f.laplacian);
    const double rate = quadratic_rate(pop, f, kernel);
    if (i > 0) {
      drift += 0.5 * (t - prev_t) * (prev_lap + lap);
      qv += 0.5 * (t - prev_t) * (prev_rate + rate);
    }
    out.times.push_back(t);
    out.residual.push_back(pair_with(pop, f.f) - f0 - 0.5 * drift);
    out.quadratic_variation.push_back(qv);
    prev_lap = lap, prev_rate = rate, prev_t = t;
  }
  return out;
}

}  // namespace sbmre

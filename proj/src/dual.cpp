#include "sbmre/dual.hpp"

#include "sbmre/heatkernel.hpp"
#include "sbmre/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbmre {

PoissonClock::PoissonClock(double rate, std::uint64_t seed) : rate_(rate), rng_(seed), gap_(rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("PoissonClock: rate must be > 0");
}

double PoissonClock::next() {
  now_ += gap_(rng_);
  return now_;
}

namespace {

void apply_jump(GridFunction<double>& Y, const NoiseField& marks, int n, std::uint64_t field_seed) {
  Rng rng(field_seed);
  const double root_n = std::sqrt(static_cast<double>(n));
  Eigen::ArrayXd h = sample_gaussian(marks.factor(), 1.0, rng).array();
  h = h.max(-root_n).min(root_n);
  Y.values() *= 1.0 + h / root_n;
}

DualState run_dual(const GridFunction<double>& phi, double t, const NoiseField& marks, const DualConfig& config,
                   std::vector<JumpRecord> jumps) {
  if (!(phi.grid() == marks.grid())) throw std::invalid_argument("evolve_dual: phi and marks live on different grids");
  if (phi.size() > 0 && phi.values().minCoeff() < 0.0) throw std::invalid_argument("evolve_dual: phi must be >= 0");
  if (config.n < 1) throw std::invalid_argument("evolve_dual: n must be >= 1");
  const double dt = config.dt;
  const auto steps = static_cast<std::size_t>(std::llround(t / dt));
  if (std::abs(t / dt - static_cast<double>(steps)) > 1e-6 * std::max(1.0, t / dt))
    throw std::invalid_argument("evolve_dual: dt must divide t");

  SolveOptions options;
  options.scheme = config.scheme;
  DualState state{phi, 0.0, std::move(jumps)};
  std::size_t done = 0;
  auto advance_to = [&](std::size_t target) {
    if (target > done) {
      state.Y = solve_log_laplace_deterministic(state.Y, static_cast<double>(target - done) * dt, dt, options).back();
      done = target;
    }
  };
  for (const auto& jump : state.jumps) {
    const auto snapped = std::min(steps, static_cast<std::size_t>(std::ceil(jump.time / dt - 1e-12)));
    advance_to(std::max<std::size_t>(snapped, 1));
    apply_jump(state.Y, marks, config.n, jump.field_seed);
    if (!state.Y.values().allFinite()) throw std::runtime_error("evolve_dual: non-finite state");
  }
  advance_to(steps);
  state.elapsed = static_cast<double>(steps) * dt;
  return state;
}

}  // namespace

DualState evolve_dual(const GridFunction<double>& phi, double t, const NoiseField& marks, const DualConfig& config,
                      std::uint64_t seed) {
  if (!(t >= 0.0)) throw std::invalid_argument("evolve_dual: t must be >= 0");
  PoissonClock clock(static_cast<double>(config.n), derive_seed(seed, 0));
  std::vector<JumpRecord> jumps;
  for (double tau = clock.next(); tau <= t; tau = clock.next())
    jumps.push_back({tau, derive_seed(seed, jumps.size() + 1)});
  return run_dual(phi, t, marks, config, std::move(jumps));
}

DualState replay_dual(const GridFunction<double>& phi, double t, const NoiseField& marks, const DualConfig& config,
                      const std::vector<JumpRecord>& jumps) {
  return run_dual(phi, t, marks, config, jumps);
}

double DualMeasure::pair(const GridFunction<double>& g) const {
  if (kind == Kind::Point) return mass * g[g.grid().nearest(point)];
  return mass * g.values().mean();
}

DualityGap duality_gap(const GridFunction<double>& phi, const DualMeasure& mu, double t,
                       std::shared_ptr<const NoiseField> field, const DualConfig& config, std::size_t replicas,
                       std::uint64_t seed, unsigned workers) {
  if (replicas < 2) throw std::invalid_argument("duality_gap: need at least 2 replicas");
  if (field->dt() != config.dt) throw std::invalid_argument("duality_gap: noise and dual step sizes differ");
  std::vector<double> left(replicas), right(replicas), counts(replicas);
  parallel_for(replicas, workers, [&](std::size_t r) {
    const NoisePath noise(field, derive_seed(seed, 2 * r));
    const auto u = solve_log_laplace(phi, 1.0, t, noise, {config.scheme, {}, {}});
    left[r] = std::exp(-mu.pair(u.back()));
    const DualState dual = evolve_dual(phi, t, *field, config, derive_seed(seed, 2 * r + 1));
    right[r] = std::exp(-mu.pair(dual.Y));
    counts[r] = static_cast<double>(dual.jumps.size());
  });
  DualityGap out;
  out.n = config.n;
  out.left = summarize(left);
  out.right = summarize(right);
  out.gap = std::abs(out.left.mean - out.right.mean);
  out.se = combined_se(out.left.se, out.right.se);
  out.jumps = summarize(counts);
  return out;
}

std::vector<ThirdMomentRow> third_moment_scan(const GridFunction<double>& phi, double rho,
                                              const std::vector<double>& t_grid, const std::vector<int>& n_ladder,
                                              std::shared_ptr<const NoiseField> field, double dt, std::size_t replicas,
                                              std::uint64_t seed, unsigned workers) {
  const WeightFamily weight(rho);
  const Grid& grid = phi.grid();
  Eigen::ArrayXd weight_cubed(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j) weight_cubed[j] = std::pow(weight(grid.point(j)), 3);

  std::vector<ThirdMomentRow> rows;
  for (int n : n_ladder) {
    DualConfig config;
    config.n = n;
    config.dt = dt;
    for (double t : t_grid) {
      std::vector<Eigen::ArrayXd> cubes(replicas);
      parallel_for(replicas, workers, [&](std::size_t r) {
        cubes[r] = evolve_dual(phi, t, *field, config, derive_seed(seed, r)).Y.values().cube();
      });
      ThirdMomentRow row;
      row.n = n;
      row.t = t;
      for (Eigen::Index j = 0; j < grid.size(); ++j) {
        std::vector<double> values(replicas);
        for (std::size_t r = 0; r < replicas; ++r) values[r] = cubes[r][j];
        const double ratio = pairwise_sum(values) / static_cast<double>(replicas) / weight_cubed[j];
        if (ratio > row.max_ratio) row.max_ratio = ratio, row.argmax_cell = j;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace sbmre

#pragma once

#include "sbmre/grid.hpp"
#include "sbmre/random.hpp"
#include "sbmre/spde.hpp"
#include "sbmre/stats.hpp"

#include <cstdint>
#include <vector>

namespace sbmre {

/// Arrival times of a rate-n Poisson process.
class PoissonClock {
 public:
  PoissonClock(double rate, std::uint64_t seed);
  double next();  // absolute time of the next arrival
  double rate() const { return rate_; }

 private:
  double rate_;
  double now_ = 0.0;
  Rng rng_;
  std::exponential_distribution<double> gap_;
};

struct JumpRecord {
  double time = 0.0;
  std::uint64_t field_seed = 0;
};

struct DualState {
  GridFunction<double> Y;
  double elapsed = 0.0;
  std::vector<JumpRecord> jumps;
};

/// Jump marks are i.i.d. truncated Gaussian grid fields with covariance C
/// (from `marks`); dt is the between-jump splitting step.
struct DualConfig {
  int n = 10;
  double dt = 1e-3;
  SchemeConfig scheme;
};

/// Y_t: deterministic dY = (1/2) Lap Y - (1/2) Y^2 between arrivals of a
/// rate-n clock; at each arrival Y <- Y (1 + h / sqrt(n)). Arrivals snap to
/// the end of the splitting step that contains them.
DualState evolve_dual(const GridFunction<double>& phi, double t, const NoiseField& marks, const DualConfig& config,
                      std::uint64_t seed);

/// Re-runs a logged jump sequence exactly.
DualState replay_dual(const GridFunction<double>& phi, double t, const NoiseField& marks, const DualConfig& config,
                      const std::vector<JumpRecord>& jumps);

/// Initial measure for the duality check: `mass` spread uniformly over the
/// torus, or a point mass at `point`.
struct DualMeasure {
  enum class Kind { Uniform, Point } kind = Kind::Uniform;
  double mass = 1.0;
  Eigen::VectorXd point;

  static DualMeasure lebesgue(const Grid& grid) { return {Kind::Uniform, grid.volume(), {}}; }
  static DualMeasure point_mass(const Eigen::VectorXd& x, double mass = 1.0) { return {Kind::Point, mass, x}; }

  /// <mu, g>
  double pair(const GridFunction<double>& g) const;
};

struct DualityGap {
  int n = 0;
  Estimate left;   // E exp(-<u_t, mu>) from the log-Laplace equation
  Estimate right;  // E exp(-<mu, Y_t>) from the dual process
  double gap = 0.0;
  double se = 0.0;
  Estimate jumps;  // jump count per replica
};

DualityGap duality_gap(const GridFunction<double>& phi, const DualMeasure& mu, double t,
                       std::shared_ptr<const NoiseField> field, const DualConfig& config, std::size_t replicas,
                       std::uint64_t seed, unsigned workers = 1);

struct ThirdMomentRow {
  int n = 0;
  double t = 0.0;
  double max_ratio = 0.0;  // max over probes of E[Y_t(x)^3] / phi_rho(x)^3
  Eigen::Index argmax_cell = 0;
};

/// Third moments of Y_t over the whole grid, relative to phi_rho^3.
std::vector<ThirdMomentRow> third_moment_scan(const GridFunction<double>& phi, double rho,
                                              const std::vector<double>& t_grid, const std::vector<int>& n_ladder,
                                              std::shared_ptr<const NoiseField> field, double dt, std::size_t replicas,
                                              std::uint64_t seed, unsigned workers = 1);

}  // namespace sbmre

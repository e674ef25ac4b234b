#pragma once

#include "sbmre/covariance.hpp"
#include "sbmre/grid.hpp"
#include "sbmre/stats.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

namespace sbmre {

struct MCConfig {
  std::size_t paths = 1000;
  double dt = 1e-2;  // path mesh; must divide t
  std::uint64_t seed = 1;
  bool antithetic = false;
  unsigned workers = 1;

  void validate() const;
};

using PointFunction = std::function<double(const Eigen::VectorXd&)>;
using PairFunction = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// F = f (x) f
inline PairFunction tensor_square(PointFunction f) {
  return [f = std::move(f)](const Eigen::VectorXd& x, const Eigen::VectorXd& y) { return f(x) * f(y); };
}

/// x -> F(x, x)
inline PointFunction pi_diagonal(PairFunction F) {
  return [F = std::move(F)](const Eigen::VectorXd& x) { return F(x, x); };
}

/// E_{(x,y)} F(B_t, B'_t) exp(int_0^t C(B_s, B'_s) ds), left Riemann sum on
/// the path mesh.
Estimate qtc(const PairFunction& F, const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t,
             const CovarianceKernel& kernel, const MCConfig& mc);

struct WeightedPoint {
  Eigen::VectorXd x;
  double weight = 1.0;
};
using AtomicMeasure = std::vector<WeightedPoint>;

/// P_t f(x) = E f(x + sqrt(t) Z) by tensor Gauss-Hermite quadrature.
double heat_expectation(const PointFunction& f, const Eigen::VectorXd& x, double t, int order = 48);

/// sum_i w_i P_t f(x_i)
double first_moment_rhs(const PointFunction& f, const AtomicMeasure& nu, double t);

/// <Q_t(f(x)f), nu(x)nu> + <int_0^t P_{t-s} pi Q_s (f(x)f) ds, nu>.
/// The time integral is sampled with s uniform on (0, t).
Estimate second_moment_rhs(const PointFunction& f, const AtomicMeasure& nu, double t, const CovarianceKernel& kernel,
                           const MCConfig& mc);

/// E[v(t,x) v(t,y)] for the PAM started from f.
Estimate pam_second_moment_oracle(const PointFunction& f, double t, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, const CovarianceKernel& kernel, const MCConfig& mc);

/// E[w_a(t,x)^k] for a field with correlation theta: k independent paths
/// x + B/sqrt(a), field integrated out, so the sample is
/// exp(k t / 2 + sum_{i<j} int theta(X_i - X_j) ds).
Estimate annealed_moment_w(const RadialProfile& theta, double a, double t, const Eigen::VectorXd& x, int k,
                           const MCConfig& mc);

struct LyapunovConfig {
  double a = 1.0;
  RadialProfile theta = RadialProfile::gaussian();
  double T = 8.0;
  Grid grid{1, 256, 16.0};
  double dt = 1e-3;
  std::size_t replicas = 20;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  double record_every = 0.05;  // time between recorded log-max values
};

struct LyapunovReport {
  double a = 0.0;
  std::vector<double> slopes;       // per replica, d/dt log max of the Stratonovich solution over [T/2, T]
  std::vector<double> early_slopes; // same over [T/4, T/2]
  std::vector<double> rates;        // slopes / a: the growth exponent of w_a
  std::vector<double> ito_slopes;   // slopes - a/2
  double median_rate = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  bool plateau = false;
};

/// Stratonovich PAM from f = 1, per replica; replica r uses noise seed
/// derive_seed(seed, r), so ladders over a with one seed are paired.
LyapunovReport lyapunov_estimate(const LyapunovConfig& config);

struct TailProbe {
  double a = 0.0;
  double t = 0.0;
  std::size_t hits = 0;
  std::size_t trials = 0;
  WilsonInterval interval;
};

/// Fraction of replicas with sup_{|x| <= radius} v(t, x) > exp(-a t / 3), v
/// the Ito PAM from f = 1 and C = a theta. Needs a > 0 and grid extent >= 2 radius.
TailProbe ldp_tail_probe(double a, const RadialProfile& theta, double t, double radius, const Grid& grid, double dt,
                         std::size_t replicas, std::uint64_t seed, unsigned workers = 1);

}  // namespace sbmre

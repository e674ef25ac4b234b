#pragma once

#include "sbmre/grid.hpp"
#include "sbmre/random.hpp"

#include <Eigen/Core>

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sbmre {

/// Radial correlation profile Θ(r) with Θ(0) = 1.
struct RadialProfile {
  std::string name;
  std::function<double(double)> fn;
  bool non_increasing = true;

  double operator()(double r) const { return fn(r); }

  /// exp(-r^2); the default profile.
  static RadialProfile gaussian(double length = 1.0);
  /// Θ ≡ 1 (fully correlated, degenerate).
  static RadialProfile unit();
  static RadialProfile by_name(const std::string& name);
};

namespace kernels {

struct Constant {
  double c = 0.0;
};

/// ε / (1 + r^α)
struct StationaryPower {
  double epsilon = 0.0;
  double alpha = 0.0;
};

/// a Θ(r)
struct ScaledTheta {
  double a = 0.0;
  RadialProfile theta;
};

struct IndicatorBall {
  double radius = 0.0;
  double height = 0.0;
};

/// Radial table (r_i, g_i) with linear interpolation; zero beyond the last radius.
struct Tabulated {
  std::vector<double> radius;
  std::vector<double> value;
};

}  // namespace kernels

/// Radial function with the metadata needed by the potential quadratures.
struct RadialFunction {
  std::function<double(double)> g;
  std::vector<double> breakpoints;  // radii where g is not smooth
  double support = std::numeric_limits<double>::infinity();
  bool non_increasing = true;

  double operator()(double r) const { return g(r); }
};

/// Spatial correlation C(x, y) of the environment. Every variant is
/// stationary and radial: C(x, y) = g(|x - y|).
class CovarianceKernel {
 public:
  using Variant = std::variant<kernels::Constant, kernels::StationaryPower, kernels::ScaledTheta,
                               kernels::IndicatorBall, kernels::Tabulated>;

  CovarianceKernel(int dim, Variant variant);

  static CovarianceKernel constant(int dim, double c) { return {dim, kernels::Constant{c}}; }
  static CovarianceKernel power(int dim, double epsilon, double alpha) {
    return {dim, kernels::StationaryPower{epsilon, alpha}};
  }
  static CovarianceKernel scaled_theta(int dim, double a, RadialProfile theta = RadialProfile::gaussian()) {
    return {dim, kernels::ScaledTheta{a, std::move(theta)}};
  }
  static CovarianceKernel indicator(int dim, double radius, double height) {
    return {dim, kernels::IndicatorBall{radius, height}};
  }
  /// Two whitespace-separated columns (radius, value); '#' starts a comment.
  static CovarianceKernel load_tabulated(int dim, const std::string& path);

  int dim() const { return dim_; }
  const Variant& variant() const { return variant_; }
  double sup_bound() const { return sup_bound_; }
  std::string name() const;

  bool is_constant() const { return std::holds_alternative<kernels::Constant>(variant_); }
  const kernels::ScaledTheta* scaled_theta() const { return std::get_if<kernels::ScaledTheta>(&variant_); }

  /// g(r) for r = |x - y|.
  double radial(double r) const;
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) const;

  /// Radial form g used for the persistence potential (C itself, as all
  /// variants are radial).
  RadialFunction radial_form() const;

 private:
  int dim_;
  Variant variant_;
  double sup_bound_ = 0.0;
};

/// C(x, y); throws std::invalid_argument on dimension mismatch.
double eval_kernel(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

/// [C(p_i, p_j)] for points stored column-wise.
Eigen::MatrixXd covariance_matrix(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::MatrixXd>& points);

class IndefiniteCovariance : public std::runtime_error {
 public:
  IndefiniteCovariance(const std::string& what, double min_eigenvalue)
      : std::runtime_error(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Square-root factor F (n x rank) with F F^T = C up to the dropped null
/// directions. Immutable once built.
struct CovarianceFactor {
  Eigen::MatrixXd factor;
  Eigen::VectorXd diagonal;  // C(x_i, x_i)
  double jitter = 0.0;

  Eigen::Index size() const { return factor.rows(); }
  Eigen::Index rank() const { return factor.cols(); }
};

/// Low-rank square root of a symmetric PSD matrix by diagonally pivoted
/// Cholesky; pivots below 1e-13 * n * sup_bound are dropped. If the remainder
/// is not PSD, retries once with diagonal jitter 1e-10 * sup_bound, then throws
/// IndefiniteCovariance carrying the most negative eigenvalue.
CovarianceFactor factorize_covariance(const Eigen::Ref<const Eigen::MatrixXd>& cov, double sup_bound);

/// Factor of [C(x_i, x_j)] over grid cells (at most 16384 cells).
CovarianceFactor grid_covariance_factor(const CovarianceKernel& kernel, const Grid& grid);

/// Factor for an arbitrary finite point set (columns of `points`).
CovarianceFactor point_covariance_factor(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::MatrixXd>& points);

struct NoiseIncrement {
  Grid grid;
  double dt = 0.0;
  Eigen::VectorXd values;
};

/// Centered Gaussian vector with covariance F F^T * dt.
Eigen::VectorXd sample_gaussian(const CovarianceFactor& factor, double scale, Rng& rng);

NoiseIncrement sample_increment(const CovarianceFactor& factor, const Grid& grid, double dt, Rng& rng);

}  // namespace sbmre

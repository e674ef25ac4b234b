#pragma once

#include "sbmre/covariance.hpp"
#include "sbmre/grid.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbmre {

/// Gaussian density with variance t per axis; d = x.size().
double heat_kernel(double t, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Spectral heat semigroup on the periodic grid: Fourier mode k = 2 pi m / L
/// is multiplied by exp(-t k^2 / 2), one axis at a time. The zero mode is
/// untouched, so the total integral is preserved.
///
/// Holds FFT plans and scratch buffers; use one instance per thread.
template <typename Scalar = double>
class HeatPropagator {
 public:
  using Array = typename GridFunction<Scalar>::Array;

  HeatPropagator(const Grid& grid, double t) : grid_(grid), time_(t) {
    if (!(t >= 0.0)) throw std::invalid_argument("HeatPropagator: t must be >= 0");
    const Eigen::Index n = grid.cells;
    multiplier_.resize(static_cast<std::size_t>(n / 2 + 1));
    for (Eigen::Index m = 0; m <= n / 2; ++m) {
      const double k = 2.0 * std::numbers::pi * static_cast<double>(m) / grid.extent;
      multiplier_[static_cast<std::size_t>(m)] = static_cast<Scalar>(std::exp(-0.5 * t * k * k));
    }
    fft_.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum);
    line_.resize(static_cast<std::size_t>(n));
    spectrum_.resize(static_cast<std::size_t>(n / 2 + 1));
  }

  const Grid& grid() const { return grid_; }
  double time() const { return time_; }

  void apply(Array& values) const {
    if (values.size() != grid_.size()) throw std::invalid_argument("HeatPropagator: value count does not match grid");
    if (time_ == 0.0) return;
    const Eigen::Index n = grid_.cells;
    Eigen::Index stride = 1;
    for (int axis = 0; axis < grid_.dim; ++axis) {
      const Eigen::Index block = stride * n;
      for (Eigen::Index base = 0; base < values.size(); base += block) {
        for (Eigen::Index s = 0; s < stride; ++s) {
          for (Eigen::Index i = 0; i < n; ++i) line_[static_cast<std::size_t>(i)] = values[base + s + i * stride];
          fft_.fwd(spectrum_.data(), line_.data(), n);
          for (std::size_t m = 0; m < spectrum_.size(); ++m) spectrum_[m] *= multiplier_[m];
          fft_.inv(line_.data(), spectrum_.data(), n);
          for (Eigen::Index i = 0; i < n; ++i) values[base + s + i * stride] = line_[static_cast<std::size_t>(i)];
        }
      }
      stride = block;
    }
  }

  GridFunction<Scalar> operator()(GridFunction<Scalar> f) const {
    if (!(f.grid() == grid_)) throw std::invalid_argument("HeatPropagator: grid mismatch");
    apply(f.values());
    return f;
  }

 private:
  Grid grid_;
  double time_;
  std::vector<Scalar> multiplier_;
  mutable Eigen::FFT<Scalar> fft_;
  mutable std::vector<Scalar> line_;
  mutable std::vector<std::complex<Scalar>> spectrum_;
};

/// P_t f on the torus; t = 0 returns f unchanged.
template <typename Scalar>
GridFunction<Scalar> apply_heat_semigroup(const GridFunction<Scalar>& f, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("apply_heat_semigroup: t must be >= 0");
  if (t == 0.0) return f;
  return HeatPropagator<Scalar>(f.grid(), t)(f);
}

/// Green function of the doubled heat kernel, Gamma(d/2-1)/(4 pi^{d/2}) |x-y|^{2-d}.
double green(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

/// Prefactor Gamma(d/2-1)/(4 pi^{d/2}) of the Green function.
double green_constant(int d);

/// Persistence threshold 8 (d-2) pi^{d/2} / (d 2^d Gamma(d/2-1)).
double persistence_threshold(int d);

/// phi_rho(x) = (1 + |x|^2)^{-rho/2}
struct WeightFamily {
  double rho = 1.0;

  explicit WeightFamily(double r) : rho(r) {
    if (!(r > 0.0)) throw std::invalid_argument("WeightFamily: rho must be > 0");
  }
  double radial(double r) const { return std::pow(1.0 + r * r, -0.5 * rho); }
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const { return std::pow(1.0 + x.squaredNorm(), -0.5 * rho); }
};

/// U(s) = int |x - y|^{2-d} g(|y|) dy at |x| = s, by Newton's shell formula.
double radial_potential(const RadialFunction& g, int d, double s);

struct ThetaPotential {
  double value = 0.0;
  double error = 0.0;
  double argmax_radius = 0.0;
  bool sup_at_origin = false;  // taken at x = 0 because g is non-increasing
};

/// theta = sup_x int |x - y|^{2-d} g(y) dy. Throws QuadratureError when the
/// radial integrals do not converge (g decays too slowly).
ThetaPotential theta_potential(const RadialFunction& g, int d);

enum class Regime { PersistenceSufficient, ExtinctionSufficient, Inconclusive };

std::string to_string(Regime regime);

struct RegimeReport {
  Regime regime = Regime::Inconclusive;
  double theta = std::numeric_limits<double>::quiet_NaN();
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();  // theta - threshold
  std::string note;
};

RegimeReport classify_regime(const CovarianceKernel& kernel, int d);

/// int G(x,z) G(z,y) / G(x,y) g(|z|) dz in spherical coordinates around the
/// nearer of x, y. `angular_order` is the Gauss-Legendre order per angle.
double bridge_potential(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const RadialFunction& g, int angular_order = 48);

/// 2^{d-2} sup_x int G(x,z) g(z) dz.
double bridge_bound(const RadialFunction& g, int d);

/// 1 / (1 - s) for 0 <= s < 1.
double khasminskii_bound(double s);

struct DominationReport {
  double constant = 0.0;  // max over the scan of P_t phi(x) / phi(x)
  double t_at_max = 0.0;
  double radius_at_max = 0.0;
  double ratio_at_origin = 0.0;  // P_{t_at_max} phi(0)
  bool finite = false;
};

/// Scans t in (0, t_max] and |x| in [0, radius_max] for sup P_t phi_rho / phi_rho.
DominationReport check_weight_domination(double rho, int d, double t_max, double radius_max = 20.0,
                                         int t_steps = 20, int radius_steps = 80);

}  // namespace sbmre

#include "sbmre/heatkernel.hpp"

#include "sbmre/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sbmre {

namespace {

constexpr double kPi = std::numbers::pi;

double sphere_area(int d) { return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d); }

void require_transient(int d, const char* who) {
  if (d < 3) throw std::invalid_argument(std::string(who) + ": requires d >= 3");
}

// int_a^b g(r) r^p dr, respecting g's breakpoints and support.
Integral radial_moment(const RadialFunction& g, double p, double a, double b) {
  b = std::min(b, g.support);
  if (!(b > a)) return {};
  return integrate([&](double r) { return r == 0.0 && p < 0.0 ? 0.0 : g(r) * std::pow(r, p); }, a, b, g.breakpoints);
}

}  // namespace

double heat_kernel(double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (!(t > 0.0)) throw std::invalid_argument("heat_kernel: t must be > 0");
  const double d = static_cast<double>(x.size());
  return std::pow(2.0 * kPi * t, -0.5 * d) * std::exp(-0.5 * x.squaredNorm() / t);
}

double green_constant(int d) {
  require_transient(d, "green");
  return std::tgamma(0.5 * d - 1.0) / (4.0 * std::pow(kPi, 0.5 * d));
}

double green(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("green: dimension mismatch");
  const int d = static_cast<int>(x.size());
  require_transient(d, "green");
  const double r = (x - y).norm();
  if (r == 0.0) throw std::domain_error("green: singular at x = y");
  return green_constant(d) * std::pow(r, 2.0 - d);
}

double persistence_threshold(int d) {
  require_transient(d, "persistence_threshold");
  return 8.0 * (d - 2) * std::pow(kPi, 0.5 * d) / (d * std::pow(2.0, d) * std::tgamma(0.5 * d - 1.0));
}

double radial_potential(const RadialFunction& g, int d, double s) {
  require_transient(d, "radial_potential");
  if (!(s >= 0.0)) throw std::invalid_argument("radial_potential: s must be >= 0");
  const double inf = std::numeric_limits<double>::infinity();
  double value = radial_moment(g, 1.0, s, inf).value;
  if (s > 0.0) value += std::pow(s, 2.0 - d) * radial_moment(g, d - 1.0, 0.0, s).value;
  return sphere_area(d) * value;
}

ThetaPotential theta_potential(const RadialFunction& g, int d) {
  require_transient(d, "theta_potential");
  const double inf = std::numeric_limits<double>::infinity();
  const Integral origin = radial_moment(g, 1.0, 0.0, inf);
  // Tail check: an infinite interval that fails to converge shows up as a
  // large error estimate relative to the value.
  if (!std::isfinite(origin.value) || origin.error > 1e-6 * std::max(1.0, std::abs(origin.value)))
    throw QuadratureError("theta_potential: radial integral did not converge (g decays too slowly?)");

  ThetaPotential out;
  out.value = sphere_area(d) * origin.value;
  out.error = sphere_area(d) * origin.error;
  if (g.non_increasing) {
    out.sup_at_origin = true;
    return out;
  }

  // Coarse scan over |x|, then golden-section refinement around the best cell.
  double reach = 4.0;
  for (double b : g.breakpoints) reach = std::max(reach, 2.0 * b);
  if (std::isfinite(g.support)) reach = std::max(reach, 2.0 * g.support);
  constexpr int kScan = 200;
  double best_s = 0.0, best = out.value;
  for (int i = 1; i <= kScan; ++i) {
    const double s = reach * i / kScan;
    const double v = radial_potential(g, d, s);
    if (v > best) best = v, best_s = s;
  }
  double lo = std::max(0.0, best_s - reach / kScan), hi = best_s + reach / kScan;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 60 && hi - lo > 1e-10; ++it) {
    const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    if (radial_potential(g, d, a) > radial_potential(g, d, b)) hi = b;
    else lo = a;
  }
  const double s = 0.5 * (lo + hi);
  const double v = radial_potential(g, d, s);
  if (v > best) best = v, best_s = s;
  out.value = best;
  out.argmax_radius = best_s;
  return out;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::PersistenceSufficient: return "PersistenceSufficient";
    case Regime::ExtinctionSufficient: return "ExtinctionSufficient";
    case Regime::Inconclusive: return "Inconclusive";
  }
  return "Inconclusive";
}

RegimeReport classify_regime(const CovarianceKernel& kernel, int d) {
  if (kernel.dim() != d) throw std::invalid_argument("classify_regime: kernel dimension differs from d");
  RegimeReport report;
  if (d >= 3) {
    report.threshold = persistence_threshold(d);
    try {
      report.theta = theta_potential(kernel.radial_form(), d).value;
    } catch (const QuadratureError&) {
      report.theta = std::numeric_limits<double>::infinity();
      report.note = "theta potential diverges";
    }
    report.gap = report.theta - report.threshold;
    if (report.theta < report.threshold) {
      report.regime = Regime::PersistenceSufficient;
      return report;
    }
  } else {
    report.note = "persistence criterion needs d >= 3";
  }
  if (kernel.scaled_theta()) {
    report.regime = Regime::ExtinctionSufficient;
    report.note = "requires a >= N_0, N_0 unknown";
  }
  return report;
}

double bridge_bound(const RadialFunction& g, int d) {
  return std::pow(2.0, d - 2) * green_constant(d) * theta_potential(g, d).value;
}

namespace {

// Integral over the half-space of points closer to `near` than to `far`, in
// spherical coordinates centred at `near` with polar axis along far - near.
double half_space_bridge(const Eigen::VectorXd& near, const Eigen::VectorXd& far, const RadialFunction& g,
                         int order) {
  const int d = static_cast<int>(near.size());
  const Eigen::VectorXd axis = (far - near).normalized();
  const double dist = (far - near).norm();

  // Second direction: component of `near` orthogonal to the axis. g depends on
  // |z|, so only the angle to this direction matters beyond the polar angle.
  Eigen::VectorXd side = near - near.dot(axis) * axis;
  if (side.norm() < 1e-14 * std::max(1.0, near.norm())) {
    side = Eigen::VectorXd::Zero(d);
    Eigen::Index k = 0;
    axis.cwiseAbs().minCoeff(&k);
    side[k] = 1.0;
    side -= side.dot(axis) * axis;
  }
  side.normalize();
  const double near_axis = near.dot(axis), near_side = near.dot(side);
  const double near_sq = near.squaredNorm();

  const QuadratureRule polar = gauss_legendre(order);
  const QuadratureRule azimuth = gauss_legendre(d == 3 ? order : std::max(8, order / 2));
  const double rest_area = d == 3 ? 2.0 : sphere_area(d - 2);
  const double inf = std::numeric_limits<double>::infinity();

  double total = 0.0;
  for (Eigen::Index iu = 0; iu < polar.nodes.size(); ++iu) {
    const double u = polar.nodes[iu];  // cosine of the polar angle
    const double sin_u = std::sqrt(std::max(0.0, 1.0 - u * u));
    const double polar_weight = polar.weights[iu] * std::pow(sin_u, d - 3);
    const double r_edge = u > 0.0 ? dist / (2.0 * u) : inf;
    for (Eigen::Index ip = 0; ip < azimuth.nodes.size(); ++ip) {
      const double psi = 0.5 * kPi * (azimuth.nodes[ip] + 1.0);
      const double weight = polar_weight * 0.5 * kPi * azimuth.weights[ip] * std::pow(std::sin(psi), d - 3);
      // |near + r w|^2 = r^2 + 2 r b + near_sq with b = near . w
      const double b = u * near_axis + sin_u * std::cos(psi) * near_side;
      auto crossings = [&](double radius) {
        std::vector<double> out;
        const double disc = b * b - near_sq + radius * radius;
        if (disc < 0.0) return out;
        const double root = std::sqrt(disc);
        for (double r : {-b - root, -b + root})
          if (r > 0.0) out.push_back(r);
        return out;
      };
      double r_max = r_edge;
      if (std::isfinite(g.support)) {
        const auto exit = crossings(g.support);
        if (exit.empty()) continue;
        r_max = std::min(r_max, exit.back());
      }
      std::vector<double> cuts;
      for (double br : g.breakpoints)
        for (double r : crossings(br)) cuts.push_back(r);
      // far - z, with z = near + r w and w = u axis + sin_u (cos psi side + ...):
      // |far - z|^2 = dist^2 - 2 r dist u + r^2.
      auto integrand = [&](double r) {
        const double z_norm = std::sqrt(std::max(0.0, r * r + 2.0 * r * b + near_sq));
        const double far_sq = std::max(0.0, dist * dist - 2.0 * r * dist * u + r * r);
        return r * g(z_norm) * std::pow(far_sq, 1.0 - 0.5 * d);
      };
      total += weight * integrate(integrand, 0.0, r_max, cuts, 1e-9).value;
    }
  }
  return rest_area * std::pow(dist, d - 2) * total;
}

}  // namespace

double bridge_potential(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const RadialFunction& g, int angular_order) {
  if (x.size() != y.size()) throw std::invalid_argument("bridge_potential: dimension mismatch");
  const int d = static_cast<int>(x.size());
  require_transient(d, "bridge_potential");
  if ((x - y).norm() == 0.0) throw std::domain_error("bridge_potential: x = y");
  const Eigen::VectorXd xv = x, yv = y;
  return green_constant(d) * (half_space_bridge(xv, yv, g, angular_order) + half_space_bridge(yv, xv, g, angular_order));
}

double khasminskii_bound(double s) {
  if (!(s >= 0.0)) throw std::invalid_argument("khasminskii_bound: s must be >= 0");
  if (s >= 1.0) throw std::domain_error("khasminskii_bound: s >= 1, persistence argument does not apply");
  return 1.0 / (1.0 - s);
}

DominationReport check_weight_domination(double rho, int d, double t_max, double radius_max, int t_steps,
                                         int radius_steps) {
  if (!(t_max > 0.0)) throw std::invalid_argument("check_weight_domination: t_max must be > 0");
  if (d < 1) throw std::invalid_argument("check_weight_domination: d must be >= 1");
  const WeightFamily phi(rho);
  const QuadratureRule gh = gauss_hermite(d == 1 ? 80 : 32);
  const Eigen::Index m = gh.nodes.size();

  // Offsets sqrt(t) z with z on the tensor Gauss-Hermite grid; only the axial
  // component and the squared transverse length matter for a radial weight.
  std::vector<double> axial, transverse_sq, weights;
  Eigen::Index count = 1;
  for (int k = 0; k < d; ++k) count *= m;
  axial.reserve(count), transverse_sq.reserve(count), weights.reserve(count);
  for (Eigen::Index j = 0; j < count; ++j) {
    Eigen::Index rem = j;
    double w = 1.0, ax = 0.0, tr = 0.0;
    for (int k = 0; k < d; ++k) {
      const Eigen::Index i = rem % m;
      rem /= m;
      w *= gh.weights[i];
      if (k == 0) ax = gh.nodes[i];
      else tr += gh.nodes[i] * gh.nodes[i];
    }
    axial.push_back(ax), transverse_sq.push_back(tr), weights.push_back(w);
  }

  DominationReport report;
  for (int it = 1; it <= t_steps; ++it) {
    const double t = t_max * it / t_steps;
    const double st = std::sqrt(t);
    for (int ir = 0; ir <= radius_steps; ++ir) {
      const double s = radius_max * ir / radius_steps;
      double value = 0.0;
      for (std::size_t j = 0; j < weights.size(); ++j) {
        const double a = s + st * axial[j];
        value += weights[j] * std::pow(1.0 + a * a + t * transverse_sq[j], -0.5 * rho);
      }
      const double ratio = value / phi.radial(s);
      if (ratio > report.constant) {
        report.constant = ratio;
        report.t_at_max = t;
        report.radius_at_max = s;
      }
      if (ir == 0 && it == t_steps) report.ratio_at_origin = value;
    }
  }
  report.finite = std::isfinite(report.constant);
  return report;
}

}  // namespace sbmre

#include "sbmre/covariance.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sbmre {

RadialProfile RadialProfile::gaussian(double length) {
  if (!(length > 0.0)) throw std::invalid_argument("gaussian profile: length must be positive");
  const double inv = 1.0 / (length * length);
  return {"gaussian", [inv](double r) { return std::exp(-r * r * inv); }, true};
}

RadialProfile RadialProfile::unit() {
  return {"unit", [](double) { return 1.0; }, true};
}

RadialProfile RadialProfile::by_name(const std::string& name) {
  if (name == "gaussian") return gaussian();
  if (name == "unit") return unit();
  throw std::invalid_argument("unknown theta profile '" + name + "'");
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double interpolate_table(const kernels::Tabulated& t, double r) {
  if (r <= t.radius.front()) return t.value.front();
  if (r > t.radius.back()) return 0.0;
  const auto it = std::upper_bound(t.radius.begin(), t.radius.end(), r);
  const auto i = static_cast<std::size_t>(it - t.radius.begin());
  if (i >= t.radius.size()) return t.value.back();
  const double w = (r - t.radius[i - 1]) / (t.radius[i] - t.radius[i - 1]);
  return (1.0 - w) * t.value[i - 1] + w * t.value[i];
}

}  // namespace

CovarianceKernel::CovarianceKernel(int dim, Variant variant) : dim_(dim), variant_(std::move(variant)) {
  if (dim < 1) throw std::invalid_argument("CovarianceKernel: dimension must be positive");
  sup_bound_ = std::visit(
      overloaded{
          [](const kernels::Constant& k) {
            if (!(k.c >= 0.0)) throw std::invalid_argument("constant kernel: c must be >= 0");
            return k.c;
          },
          [](const kernels::StationaryPower& k) {
            if (!(k.epsilon > 0.0) || !(k.alpha > 0.0))
              throw std::invalid_argument("power kernel: epsilon and alpha must be > 0");
            return k.epsilon;
          },
          [](const kernels::ScaledTheta& k) {
            if (!(k.a >= 0.0)) throw std::invalid_argument("scaled_theta kernel: a must be >= 0");
            if (!k.theta.fn) throw std::invalid_argument("scaled_theta kernel: missing profile");
            if (std::abs(k.theta(0.0) - 1.0) > 1e-14) throw std::invalid_argument("scaled_theta kernel: theta(0) must be 1");
            return k.a;
          },
          [](const kernels::IndicatorBall& k) {
            if (!(k.radius > 0.0) || !(k.height > 0.0))
              throw std::invalid_argument("indicator kernel: radius and height must be > 0");
            return k.height;
          },
          [](const kernels::Tabulated& k) {
            if (k.radius.size() < 2 || k.radius.size() != k.value.size())
              throw std::invalid_argument("tabulated kernel: need >= 2 (radius, value) rows");
            for (std::size_t i = 0; i < k.radius.size(); ++i) {
              if (k.value[i] < 0.0) throw std::invalid_argument("tabulated kernel: values must be >= 0");
              if (i > 0 && !(k.radius[i] > k.radius[i - 1]))
                throw std::invalid_argument("tabulated kernel: radii must be strictly increasing");
            }
            return *std::max_element(k.value.begin(), k.value.end());
          },
      },
      variant_);
}

CovarianceKernel CovarianceKernel::load_tabulated(int dim, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open tabulated kernel file '" + path + "'");
  kernels::Tabulated t;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    double r = 0.0, g = 0.0;
    if (!(row >> r)) continue;
    if (!(row >> g)) throw std::invalid_argument("tabulated kernel: malformed row '" + line + "'");
    t.radius.push_back(r);
    t.value.push_back(g);
  }
  return {dim, std::move(t)};
}

std::string CovarianceKernel::name() const {
  return std::visit(overloaded{
                        [](const kernels::Constant&) { return std::string("constant"); },
                        [](const kernels::StationaryPower&) { return std::string("power"); },
                        [](const kernels::ScaledTheta&) { return std::string("scaled_theta"); },
                        [](const kernels::IndicatorBall&) { return std::string("indicator"); },
                        [](const kernels::Tabulated&) { return std::string("tabulated"); },
                    },
                    variant_);
}

double CovarianceKernel::radial(double r) const {
  return std::visit(overloaded{
                        [](const kernels::Constant& k) { return k.c; },
                        [r](const kernels::StationaryPower& k) { return k.epsilon / (1.0 + std::pow(r, k.alpha)); },
                        [r](const kernels::ScaledTheta& k) { return k.a * k.theta(r); },
                        [r](const kernels::IndicatorBall& k) { return r < k.radius ? k.height : 0.0; },
                        [r](const kernels::Tabulated& k) { return interpolate_table(k, r); },
                    },
                    variant_);
}

double CovarianceKernel::operator()(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    const Eigen::Ref<const Eigen::VectorXd>& y) const {
  // (x_i - y_i)^2 == (y_i - x_i)^2 exactly, so this is bit-symmetric.
  return radial(std::sqrt((x - y).squaredNorm()));
}

RadialFunction CovarianceKernel::radial_form() const {
  RadialFunction rf;
  rf.g = [k = *this](double r) { return k.radial(r); };
  std::visit(overloaded{
                 [&](const kernels::Constant&) {},
                 [&](const kernels::StationaryPower&) {},
                 [&](const kernels::ScaledTheta& k) { rf.non_increasing = k.theta.non_increasing; },
                 [&](const kernels::IndicatorBall& k) {
                   rf.breakpoints = {k.radius};
                   rf.support = k.radius;
                 },
                 [&](const kernels::Tabulated& k) {
                   rf.breakpoints = k.radius;
                   rf.support = k.radius.back();
                   rf.non_increasing = std::is_sorted(k.value.rbegin(), k.value.rend());
                 },
             },
             variant_);
  return rf;
}

double eval_kernel(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != kernel.dim() || y.size() != kernel.dim())
    throw std::invalid_argument("eval_kernel: point dimension does not match kernel dimension");
  return kernel(x, y);
}

Eigen::MatrixXd covariance_matrix(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::MatrixXd>& points) {
  if (points.rows() != kernel.dim()) throw std::invalid_argument("covariance_matrix: dimension mismatch");
  const Eigen::Index n = points.cols();
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      cov(i, j) = kernel(points.col(i), points.col(j));
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

namespace {

std::optional<CovarianceFactor> try_factorize(Eigen::MatrixXd residual, double tol) {
  // Right-looking Cholesky with full diagonal pivoting on the Schur
  // complement; stops once every remaining pivot is below tol.
  const Eigen::Index n = residual.rows();
  Eigen::MatrixXd columns(n, n);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  Eigen::Index rank = 0;
  while (rank < n) {
    Eigen::Index pivot = -1;
    double best = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!used[static_cast<std::size_t>(i)] && residual(i, i) > best) best = residual(i, i), pivot = i;
    }
    if (pivot < 0) break;
    Eigen::VectorXd column = residual.col(pivot) / std::sqrt(best);
    for (Eigen::Index i = 0; i < n; ++i)
      if (used[static_cast<std::size_t>(i)]) column[i] = 0.0;
    column[pivot] = std::sqrt(best);
    residual.noalias() -= column * column.transpose();
    used[static_cast<std::size_t>(pivot)] = true;
    columns.col(rank++) = column;
  }
  // A PSD remainder with diagonal <= tol has every entry <= tol in size.
  if (n > 0 && residual.cwiseAbs().maxCoeff() > 10.0 * tol) return std::nullopt;
  CovarianceFactor f;
  f.factor = columns.leftCols(rank);
  return f;
}

}  // namespace

CovarianceFactor factorize_covariance(const Eigen::Ref<const Eigen::MatrixXd>& cov, double sup_bound) {
  if (cov.rows() != cov.cols()) throw std::invalid_argument("factorize_covariance: matrix must be square");
  const Eigen::Index n = cov.rows();
  const double scale = sup_bound > 0.0 ? sup_bound : std::max(1.0, cov.cwiseAbs().maxCoeff());
  const double tol = 1e-13 * static_cast<double>(std::max<Eigen::Index>(n, 1)) * scale;

  Eigen::MatrixXd work = cov;
  if (auto f = try_factorize(work, tol)) {
    f->diagonal = cov.diagonal();
    return *f;
  }
  const double jitter = 1e-10 * scale;
  work.diagonal().array() += jitter;
  if (auto f = try_factorize(work, tol)) {
    f->diagonal = cov.diagonal();
    f->jitter = jitter;
    return *f;
  }
  const double lambda_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  std::ostringstream msg;
  msg << "covariance matrix is not positive semi-definite (most negative eigenvalue " << lambda_min << ")";
  throw IndefiniteCovariance(msg.str(), lambda_min);
}

CovarianceFactor grid_covariance_factor(const CovarianceKernel& kernel, const Grid& grid) {
  if (grid.dim != kernel.dim()) throw std::invalid_argument("grid_covariance_factor: dimension mismatch");
  if (grid.size() > 16384) throw std::invalid_argument("grid_covariance_factor: grid too large for dense factorization");
  if (const auto* k = std::get_if<kernels::Constant>(&kernel.variant())) {
    // Rank one (or zero); skip the O(n^3) path.
    CovarianceFactor f;
    f.diagonal = Eigen::VectorXd::Constant(grid.size(), k->c);
    f.factor = k->c > 0.0 ? Eigen::MatrixXd::Constant(grid.size(), 1, std::sqrt(k->c)) : Eigen::MatrixXd(grid.size(), 0);
    return f;
  }
  return factorize_covariance(covariance_matrix(kernel, grid.points()), kernel.sup_bound());
}

CovarianceFactor point_covariance_factor(const CovarianceKernel& kernel, const Eigen::Ref<const Eigen::MatrixXd>& points) {
  if (const auto* k = std::get_if<kernels::Constant>(&kernel.variant())) {
    CovarianceFactor f;
    f.diagonal = Eigen::VectorXd::Constant(points.cols(), k->c);
    f.factor = k->c > 0.0 ? Eigen::MatrixXd::Constant(points.cols(), 1, std::sqrt(k->c)) : Eigen::MatrixXd(points.cols(), 0);
    return f;
  }
  return factorize_covariance(covariance_matrix(kernel, points), kernel.sup_bound());
}

Eigen::VectorXd sample_gaussian(const CovarianceFactor& factor, double scale, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(factor.rank());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  if (factor.rank() == 0) return Eigen::VectorXd::Zero(factor.size());
  return scale * (factor.factor * z);
}

NoiseIncrement sample_increment(const CovarianceFactor& factor, const Grid& grid, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw std::invalid_argument("sample_increment: dt must be > 0");
  if (factor.size() != grid.size()) throw std::invalid_argument("sample_increment: factor does not match grid");
  return {grid, dt, sample_gaussian(factor, std::sqrt(dt), rng)};
}

}  // namespace sbmre

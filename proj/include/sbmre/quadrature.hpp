#pragma once

#include <Eigen/Core>

#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sbmre {

struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Gauss-Legendre rule on [-1, 1] (Golub-Welsch).
QuadratureRule gauss_legendre(int n);

/// Gauss-Hermite rule for the standard normal weight: sum w_i f(x_i) ~ E f(Z).
QuadratureRule gauss_hermite(int n);

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Integral {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive Gauss-Kronrod over [a, b] split at `breakpoints`; b may be +inf.
Integral integrate(const std::function<double(double)>& fn, double a, double b,
                   const std::vector<double>& breakpoints = {}, double rel_tol = 1e-10);

}  // namespace sbmre

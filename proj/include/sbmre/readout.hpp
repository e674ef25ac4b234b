#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sbmre {

/// Test function f on R^d with its Laplacian where defined. Built from the
/// config catalog: gaussian_bump, indicator_ball, constant.
struct Readout {
  std::string name;
  int dim = 1;
  std::function<double(const Eigen::VectorXd&)> f;
  std::function<double(const Eigen::VectorXd&)> laplacian;  // empty when f is not C^2

  double operator()(const Eigen::VectorXd& x) const { return f(x); }
  bool has_laplacian() const { return static_cast<bool>(laplacian); }
};

/// exp(-|x - c|^2 / (2 w^2))
Readout gaussian_bump(const Eigen::VectorXd& centre, double width);
Readout indicator_ball(const Eigen::VectorXd& centre, double radius);
Readout constant_readout(int dim, double value);

/// Parses "gaussian_bump(width)", "gaussian_bump(c_0, ..., c_{d-1}, width)",
/// "indicator_ball(radius)", "indicator_ball(c_0, ..., radius)", "constant(v)".
Readout parse_readout(const std::string& entry, int dim);

/// Comma/semicolon separated list of readout specs at the top level.
std::vector<Readout> parse_readout_catalog(const std::string& specs, int dim);

}  // namespace sbmre

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sbmre {

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// length of the input, so results do not depend on how samples were produced.
double pairwise_sum(std::span<const double> values);

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

/// Sample mean and standard error (sample standard deviation / sqrt(N)).
Estimate summarize(std::span<const double> samples);

inline double combined_se(double a, double b) { return std::hypot(a, b); }

struct WilsonInterval {
  double p = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

WilsonInterval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96);

double median(std::vector<double> values);
double quantile(std::vector<double> values, double q);

/// Ordinary least-squares slope of y against x.
double ls_slope(std::span<const double> x, std::span<const double> y);

}  // namespace sbmre


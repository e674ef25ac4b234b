#pragma once

#include "sbmre/covariance.hpp"
#include "sbmre/grid.hpp"
#include "sbmre/readout.hpp"
#include "sbmre/spde.hpp"

#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbmre {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sectioned key=value experiment description:
///   [experiment] name, seed, workers
///   [kernel]     variant = constant|power|scaled_theta|indicator|tabulated plus its parameters
///   [grid]       d, L, cells
///   [scheme]     dt, ordering = symmetric|lie
///   [mc]         replicas, paths, path_dt, antithetic
///   [model]      experiment-specific parameters
///   [readout]    catalog = gaussian_bump(0.5); constant(1)
///   [output]     dir, trajectory = none|summary|full
class ExperimentConfig {
 public:
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(const std::string& text, const std::filesystem::path& origin = {});

  const std::filesystem::path& path() const { return path_; }
  std::string experiment() const { return text("experiment.name"); }

  bool has(const std::string& key) const;
  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;
  std::string text(const std::string& key) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  std::vector<double> list(const std::string& key, const std::vector<double>& fallback) const;
  bool flag(const std::string& key, bool fallback) const;

  /// Kernel from [kernel]; `dim` defaults to grid.d.
  CovarianceKernel kernel(std::optional<int> dim = std::nullopt) const;
  Grid grid() const;
  double dt() const { return number("scheme.dt", 1e-3); }
  SchemeConfig scheme() const;
  std::vector<Readout> readouts() const;

  std::uint64_t seed() const;
  unsigned workers() const;

  /// FNV-1a 64 of the canonical (sorted) key=value listing plus the seed, as hex.
  std::string hash(std::uint64_t seed) const;
  std::string canonical() const;

  /// Throws ConfigError describing the first problem found.
  void validate() const;

 private:
  boost::property_tree::ptree tree_;
  std::filesystem::path path_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

}  // namespace sbmre

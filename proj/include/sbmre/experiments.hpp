#pragma once

#include "sbmre/config.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sbmre {

inline constexpr const char* kVersion = "1.0.0";

/// Names accepted by run_experiment.
const std::vector<std::string>& experiment_names();

struct CheckRow {
  std::string check;
  double estimate = 0.0;
  double reference = 0.0;
  double se = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct RunReport {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<CheckRow> rows;
  double wall_seconds = 0.0;  // reported on the console, never written to CSV

  bool all_pass() const;
  const CheckRow* find(const std::string& check) const;
};

struct OutputFile {
  std::string name;
  std::string content;
};

struct RunOutput {
  RunReport report;
  std::vector<OutputFile> extras;  // trajectory, snapshot, jump-log and Feynman-Kac tables
};

struct RunContext {
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

/// Runs the experiment named in the config. Deterministic in (config, seed);
/// independent of the worker count.
RunOutput run_experiment(const ExperimentConfig& config, const RunContext& context);

/// Long-format CSV: config_hash,experiment,check,estimate,reference,se,tolerance,pass
std::string report_csv(const RunReport& report);

struct WrittenRun {
  std::filesystem::path csv;
  std::filesystem::path manifest;
};

/// Writes <dir>/<experiment>.csv, the extras, and <dir>/<experiment>.manifest.
WrittenRun write_run(const RunOutput& output, const ExperimentConfig& config, const RunContext& context,
                     const std::filesystem::path& dir);

struct ReplayResult {
  bool refused = false;  // version or config mismatch
  bool identical = false;
  std::string message;
  RunOutput output;
};

/// Re-runs a manifest with its recorded seed and compares all output bytes.
ReplayResult replay(const std::filesystem::path& manifest, std::optional<unsigned> workers = std::nullopt);

}  // namespace sbmre

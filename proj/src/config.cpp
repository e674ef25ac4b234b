#include "sbmre/config.hpp"

#include "sbmre/experiments.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace sbmre {

namespace pt = boost::property_tree;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), std::filesystem::absolute(path));
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::filesystem::path& origin) {
  ExperimentConfig cfg;
  cfg.path_ = origin;
  std::istringstream in(text);
  try {
    pt::read_ini(in, cfg.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return cfg;
}

bool ExperimentConfig::has(const std::string& key) const { return static_cast<bool>(tree_.get_optional<std::string>(key)); }

std::string ExperimentConfig::text(const std::string& key) const {
  const auto v = tree_.get_optional<std::string>(key);
  if (!v) throw ConfigError("missing config key '" + key + "'");
  return *v;
}

std::string ExperimentConfig::text(const std::string& key, const std::string& fallback) const {
  return tree_.get<std::string>(key, fallback);
}

namespace {

double to_number(const std::string& key, const std::string& raw) {
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size() || !std::isfinite(v)) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a finite number: '" + raw + "'");
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

double ExperimentConfig::number(const std::string& key) const { return to_number(key, trim(text(key))); }

double ExperimentConfig::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

long ExperimentConfig::integer(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  const double v = number(key);
  if (v != std::floor(v)) throw ConfigError("config key '" + key + "' must be an integer");
  return static_cast<long>(v);
}

std::vector<double> ExperimentConfig::list(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  std::stringstream ss(text(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_number(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

bool ExperimentConfig::flag(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = trim(text(key));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' must be a boolean");
}

Grid ExperimentConfig::grid() const {
  try {
    return {static_cast<int>(integer("grid.d", 1)), integer("grid.cells", 256), number("grid.L", 8.0)};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[grid] ") + e.what());
  }
}

SchemeConfig ExperimentConfig::scheme() const {
  SchemeConfig s;
  const std::string order = trim(text("scheme.ordering", "symmetric"));
  if (order == "symmetric") s.order = SplittingOrder::Symmetric;
  else if (order == "lie") s.order = SplittingOrder::Lie;
  else throw ConfigError("[scheme] ordering must be 'symmetric' or 'lie'");
  return s;
}

CovarianceKernel ExperimentConfig::kernel(std::optional<int> dim) const {
  const int d = dim ? *dim : static_cast<int>(integer("grid.d", 1));
  const std::string variant = trim(text("kernel.variant", "constant"));
  try {
    if (variant == "constant") return CovarianceKernel::constant(d, number("kernel.c", 0.0));
    if (variant == "power") return CovarianceKernel::power(d, number("kernel.epsilon"), number("kernel.alpha"));
    if (variant == "scaled_theta") {
      RadialProfile profile = RadialProfile::by_name(trim(text("kernel.theta", "gaussian")));
      if (has("kernel.theta_length")) profile = RadialProfile::gaussian(number("kernel.theta_length"));
      return CovarianceKernel::scaled_theta(d, number("kernel.a"), profile);
    }
    if (variant == "indicator") return CovarianceKernel::indicator(d, number("kernel.radius"), number("kernel.height"));
    if (variant == "tabulated") {
      std::filesystem::path file = text("kernel.file");
      if (file.is_relative() && !path_.empty()) file = path_.parent_path() / file;
      return CovarianceKernel::load_tabulated(d, file.string());
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[kernel] ") + e.what());
  }
  throw ConfigError("[kernel] unknown variant '" + variant + "'");
}

std::vector<Readout> ExperimentConfig::readouts() const {
  if (!has("readout.catalog")) throw ConfigError("[readout] catalog is missing");
  std::vector<Readout> out;
  try {
    out = parse_readout_catalog(text("readout.catalog"), static_cast<int>(integer("grid.d", 1)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[readout] ") + e.what());
  }
  if (out.empty()) throw ConfigError("[readout] catalog is empty");
  return out;
}

std::uint64_t ExperimentConfig::seed() const {
  const long s = integer("experiment.seed", 1);
  if (s < 0) throw ConfigError("[experiment] seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

unsigned ExperimentConfig::workers() const {
  const long w = integer("experiment.workers", 1);
  if (w < 1) throw ConfigError("[experiment] workers must be >= 1");
  return static_cast<unsigned>(w);
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> flat;
  for (const auto& [section, body] : tree_) {
    if (body.empty()) flat[section] = trim(body.data());
    for (const auto& [key, value] : body) flat[section + "." + key] = trim(value.data());
  }
  // Seed and workers come from the run context, not the file.
  flat.erase("experiment.seed");
  flat.erase("experiment.workers");
  std::string out;
  for (const auto& [k, v] : flat) out += k + "=" + v + "\n";
  return out;
}

std::string ExperimentConfig::hash(std::uint64_t seed) const {
  return hex64(fnv1a64(canonical() + "seed=" + std::to_string(seed) + "\n"));
}

void ExperimentConfig::validate() const {
  const std::string name = trim(text("experiment.name", ""));
  if (name.empty()) throw ConfigError("[experiment] name is missing");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ConfigError("unknown experiment '" + name + "'");

  for (const char* section : {"grid", "scheme", "mc"}) {
    const auto child = tree_.get_child_optional(section);
    if (!child) continue;
    for (const auto& [key, value] : *child) {
      const std::string full = std::string(section) + "." + key;
      if (full == "scheme.ordering" || full == "mc.antithetic") continue;
      if (!(number(full) > 0.0)) throw ConfigError("config key '" + full + "' must be positive");
    }
  }
  if (const auto model = tree_.get_child_optional("model")) {
    for (const auto& [key, value] : *model) {
      if (value.data().find_first_of("0123456789") == std::string::npos) continue;
      const std::string full = "model." + key;
      if (value.data().find(',') != std::string::npos) list(full, {});
      else number(full);
    }
  }
  (void)grid();
  (void)scheme();
  (void)seed();
  (void)workers();
  const CovarianceKernel k = kernel();
  (void)k;
  (void)readouts();
  const std::string traj = trim(text("output.trajectory", "none"));
  if (traj != "none" && traj != "summary" && traj != "full")
    throw ConfigError("[output] trajectory must be none, summary or full");
}

}  // namespace sbmre

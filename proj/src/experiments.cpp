#include "sbmre/experiments.hpp"

#include "sbmre/dual.hpp"
#include "sbmre/feynmankac.hpp"
#include "sbmre/heatkernel.hpp"
#include "sbmre/parallel.hpp"
#include "sbmre/particles.hpp"
#include "sbmre/random.hpp"
#include "sbmre/spde.hpp"
#include "sbmre/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace sbmre {

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"moments-triangle", "pam-oracle",       "comparison-suite",
                                              "threshold-table",  "extinction-scan",  "persistence-scan",
                                              "duality-ladder",   "lyapunov-ladder"};
  return names;
}

bool RunReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

const CheckRow* RunReport::find(const std::string& check) const {
  for (const auto& r : rows)
    if (r.check == check) return &r;
  return nullptr;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kRoundoff = 1e-12;

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

class Recorder {
 public:
  explicit Recorder(RunReport& report) : report_(report) {}

  /// |estimate - reference| <= max(k * se, roundoff floor)
  void within_se(const std::string& name, double est, double ref, double se, double k) {
    const double tol = std::max(k * se, kRoundoff * std::max(1.0, std::abs(ref)));
    add(name, est, ref, se, tol, std::abs(est - ref) <= tol);
  }
  void within(const std::string& name, double est, double ref, double tol) {
    add(name, est, ref, 0.0, tol, std::abs(est - ref) <= tol);
  }
  void at_most(const std::string& name, double est, double bound, double slack, double se = 0.0) {
    add(name, est, bound, se, slack, est <= bound + slack);
  }
  void at_least(const std::string& name, double est, double bound, double slack, double se = 0.0) {
    add(name, est, bound, se, slack, est >= bound - slack);
  }
  void info(const std::string& name, double est, double ref, double se, bool pass) {
    add(name, est, ref, se, kNaN, pass);
  }

 private:
  void add(const std::string& name, double est, double ref, double se, double tol, bool pass) {
    report_.rows.push_back({name, est, ref, se, tol, pass && std::isfinite(est)});
  }
  RunReport& report_;
};

class Parts {
 public:
  Parts(const ExperimentConfig& cfg, std::initializer_list<const char*> all) {
    std::string raw = cfg.text("model.parts", "");
    if (raw.empty()) {
      for (const char* p : all) enabled_.insert(p);
      return;
    }
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (std::find_if(all.begin(), all.end(), [&](const char* p) { return item == p; }) == all.end())
        throw ConfigError("[model] parts: unknown part '" + item + "'");
      enabled_.insert(item);
    }
  }
  bool operator()(const std::string& part) const { return enabled_.count(part) > 0; }

 private:
  std::set<std::string> enabled_;
};

std::size_t count_of(const ExperimentConfig& cfg, const std::string& key, long fallback) {
  const long v = cfg.integer(key, fallback);
  if (v < 1) throw ConfigError("config key '" + key + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

Eigen::VectorXd point_of(const ExperimentConfig& cfg, const std::string& key, int d) {
  const auto raw = cfg.list(key, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  if (raw.size() == 1) return Eigen::VectorXd::Constant(d, raw[0]);
  if (raw.size() != static_cast<std::size_t>(d)) throw ConfigError("config key '" + key + "' needs d coordinates");
  return Eigen::Map<const Eigen::VectorXd>(raw.data(), d);
}

GridFunction<double> on_grid(const Grid& grid, const Readout& f) {
  return GridFunction<double>::from_function(grid, [&](const Eigen::VectorXd& x) { return f(x); });
}

/// k when f is the constant readout k; used to select closed forms.
std::optional<double> constant_value(const Readout& f) {
  if (f.name != "constant") return std::nullopt;
  return f(Eigen::VectorXd::Zero(f.dim));
}

std::optional<double> constant_kernel(const CovarianceKernel& k) {
  if (const auto* c = std::get_if<kernels::Constant>(&k.variant())) return c->c;
  return std::nullopt;
}

MCConfig mc_of(const ExperimentConfig& cfg, std::uint64_t seed, unsigned workers) {
  MCConfig mc;
  mc.paths = count_of(cfg, "mc.paths", 1000);
  mc.dt = cfg.number("mc.path_dt", 1e-2);
  mc.seed = seed;
  mc.antithetic = cfg.flag("mc.antithetic", false);
  mc.workers = workers;
  return mc;
}

struct FkTable {
  std::string hash;
  std::string body = "operation,config_hash,estimate,se,n_paths,dt\n";
  void add(const std::string& op, const Estimate& e, const MCConfig& mc) {
    body += op + "," + hash + "," + num(e.mean) + "," + num(e.se) + "," + std::to_string(mc.paths) + "," + num(mc.dt) + "\n";
  }
};

// ---------------------------------------------------------------- threshold

void threshold_table(const ExperimentConfig& cfg, Recorder& rec) {
  const double pi = std::numbers::pi;
  const std::map<int, double> closed{{3, pi / 3.0}, {4, pi * pi / 4.0}, {5, 3.0 * pi * pi / 10.0}};
  for (double dv : cfg.list("model.dims", {3, 4, 5})) {
    const int d = static_cast<int>(dv);
    if (d != dv || d < 3) throw ConfigError("[model] dims must be integers >= 3");
    const double value = persistence_threshold(d);
    const auto it = closed.find(d);
    if (it != closed.end()) rec.within("threshold_d" + std::to_string(d), value, it->second, 1e-12);
    else rec.info("threshold_d" + std::to_string(d), value, kNaN, 0.0, std::isfinite(value));
  }
  const auto ball = CovarianceKernel::indicator(3, 1.0, 1.0).radial_form();
  rec.within("theta_unit_ball_d3", theta_potential(ball, 3).value, 2.0 * pi, 1e-6);
  rec.within("khasminskii_half", khasminskii_bound(0.5), 2.0, 1e-15);

  const int kd = static_cast<int>(cfg.integer("model.kernel_d", 3));
  const RegimeReport regime = classify_regime(cfg.kernel(kd), kd);
  const bool consistent = (regime.regime == Regime::PersistenceSufficient) == (regime.theta < regime.threshold);
  rec.info("kernel_theta_vs_threshold", regime.theta, regime.threshold, 0.0, consistent || std::isinf(regime.theta));
}

// ---------------------------------------------------------------- persistence

void persistence_scan(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec) {
  const Parts parts(cfg, {"theta", "bridge"});
  const int d = static_cast<int>(cfg.integer("model.d", 3));
  const double threshold = persistence_threshold(d);
  if (parts("theta")) {
    const double alpha = cfg.number("model.alpha", 3.0);
    for (double eps : cfg.list("model.epsilons", {0.01, 0.05, 0.1, 0.2})) {
      const auto kernel = CovarianceKernel::power(d, eps, alpha);
      const RegimeReport regime = classify_regime(kernel, d);
      const bool consistent = (regime.regime == Regime::PersistenceSufficient) == (regime.theta < threshold);
      rec.info("theta_power_eps" + tag(eps), regime.theta, threshold, 0.0, consistent);
    }
  }
  if (parts("bridge")) {
    const RadialFunction g = cfg.kernel(d).radial_form();
    const double bound = bridge_bound(g, d);
    const std::size_t pairs = count_of(cfg, "model.bridge_pairs", 10);
    const int order = static_cast<int>(cfg.integer("model.bridge_order", 32));
    const double box = cfg.number("model.bridge_box", 2.0);
    Rng rng(derive_seed(ctx.seed, 0xb41d));
    std::uniform_real_distribution<double> uniform(-box, box);
    for (std::size_t i = 0; i < pairs; ++i) {
      Eigen::VectorXd x(d), y(d);
      for (int k = 0; k < d; ++k) x[k] = uniform(rng), y[k] = uniform(rng);
      const double value = bridge_potential(x, y, g, order);
      rec.at_most("bridge_3g_" + std::to_string(i), value, bound, 0.0);
    }
  }
}

// ---------------------------------------------------------------- pam-oracle

std::string trajectory_csv(const Trajectory& traj, const std::string& mode) {
  std::string out;
  if (mode == "full") {
    out = "t,cell_index,value\n";
    for (std::size_t i = 0; i < traj.slices.size(); ++i)
      for (Eigen::Index j = 0; j < traj.slices[i].size(); ++j)
        out += num(traj.times[i]) + "," + std::to_string(j) + "," + num(traj.slices[i][j]) + "\n";
  } else {
    out = "t,min,max,mean,total_mass\n";
    for (std::size_t i = 0; i < traj.slices.size(); ++i) {
      const auto& v = traj.slices[i].values();
      out += num(traj.times[i]) + "," + num(v.minCoeff()) + "," + num(v.maxCoeff()) + "," + num(v.mean()) + "," +
             num(integral(traj.slices[i])) + "\n";
    }
  }
  return out;
}

std::string trajectory_manifest(const Trajectory& traj, std::uint64_t seed, const std::string& hash,
                                const std::string& mode) {
  std::ostringstream m;
  m << "config_hash=" << hash << "\nnoise_seed=" << seed << "\ndt=" << num(traj.dt) << "\nd=" << traj.grid.dim
    << "\ncells=" << traj.grid.cells << "\nL=" << num(traj.grid.extent)
    << "\nordering=" << (traj.order == SplittingOrder::Symmetric ? "symmetric" : "lie")
    << "\nito_correction=" << (traj.ito_correction ? 1 : 0) << "\nformat=" << mode << "\n";
  return m.str();
}

void pam_oracle(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec, RunOutput& out,
                const std::string& hash) {
  const Parts parts(cfg, {"degeneracy", "moments"});
  const Grid grid = cfg.grid();
  const double dt = cfg.dt();
  const double t = cfg.number("model.t", 1.0);
  const Readout f = cfg.readouts().front();
  const GridFunction<double> f_grid = on_grid(grid, f);
  SolveOptions options;
  options.scheme = cfg.scheme();

  if (parts("degeneracy")) {
    const NoisePath silent = NoisePath::make(CovarianceKernel::constant(grid.dim, 0.0), grid, dt, ctx.seed);
    const auto v = solve_pam(f_grid, t, silent, options);
    rec.within("heat_degeneracy_sup", sup_norm(v.back() - apply_heat_semigroup(f_grid, t)), 0.0, 1e-8);
  }
  if (!parts("moments")) return;

  const CovarianceKernel kernel = cfg.kernel();
  const auto field = std::make_shared<const NoiseField>(kernel, grid, dt);
  const Eigen::VectorXd x = point_of(cfg, "model.probe_x", grid.dim);
  const Eigen::VectorXd y = point_of(cfg, "model.probe_y", grid.dim);
  const Eigen::Index ix = grid.nearest(x), iy = grid.nearest(y);
  const std::size_t replicas = count_of(cfg, "mc.replicas", 1000);
  const std::string mode = cfg.text("output.trajectory", "none");
  const double save_every = cfg.number("model.save_every", t / 10.0);

  std::vector<double> vx(replicas), prod(replicas);
  std::optional<Trajectory> first;
  parallel_for(replicas, ctx.workers, [&](std::size_t r) {
    const NoisePath noise(field, derive_seed(ctx.seed, r));
    SolveOptions opt = options;
    if (r == 0 && mode != "none")
      for (double s = save_every; s < t - 1e-12; s += save_every) opt.save_times.push_back(s);
    const auto v = solve_pam(f_grid, t, noise, opt);
    vx[r] = v.back()[ix];
    prod[r] = v.back()[ix] * v.back()[iy];
    if (r == 0) first = v;
  });
  if (mode != "none" && first) {
    out.extras.push_back({"trajectory.csv", trajectory_csv(*first, mode)});
    out.extras.push_back({"trajectory.manifest", trajectory_manifest(*first, derive_seed(ctx.seed, 0), hash, mode)});
  }

  const Estimate mean = summarize(vx);
  const Estimate second = summarize(prod);
  rec.within_se("ito_mean", mean.mean, apply_heat_semigroup(f_grid, t)[ix], mean.se, 3.0);

  const MCConfig mc = mc_of(cfg, derive_seed(ctx.seed, 0xfc), ctx.workers);
  const Estimate oracle = pam_second_moment_oracle(f.f, t, grid.point(ix), grid.point(iy), kernel, mc);
  FkTable fk{hash};
  fk.add("pam_second_moment_oracle", oracle, mc);
  out.extras.push_back({"fk.csv", fk.body});

  const auto k = constant_value(f);
  const auto c = constant_kernel(kernel);
  if (k && c) {
    const double closed = (*k) * (*k) * std::exp(*c * t);
    rec.within_se("spde_second_moment", second.mean, closed, second.se, 3.0);
    rec.within_se("oracle_second_moment", oracle.mean, closed, oracle.se, 3.0);
  }
  rec.within_se("spde_vs_oracle", second.mean, oracle.mean, combined_se(second.se, oracle.se), 5.0);
}

// ---------------------------------------------------------------- comparison-suite

void comparison_suite(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec) {
  const Parts parts(cfg, {"heat", "domination", "comparison", "linearity", "stratonovich"});
  const Grid grid = cfg.grid();
  const double dt = cfg.dt();
  SolveOptions options;
  options.scheme = cfg.scheme();

  if (parts("heat")) {
    Rng rng(derive_seed(ctx.seed, 0x4ea7));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    GridFunction<double> f(grid);
    for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = uniform(rng);
    const double mass = integral(f);
    for (double t : {0.1, 1.0}) {
      const auto p = apply_heat_semigroup(f, t);
      rec.at_most("heat_mass_t" + tag(t), std::abs(integral(p) - mass), 0.0, 1e-10 * std::abs(mass));
      rec.at_least("heat_positivity_t" + tag(t), p.values().minCoeff(), 0.0, 0.0);
    }
    const double s = 0.1, t = 0.1;
    rec.at_most("heat_semigroup",
                sup_norm(apply_heat_semigroup(apply_heat_semigroup(f, t), s) - apply_heat_semigroup(f, s + t)), 0.0,
                1e-10);
    rec.within("heat_identity", sup_norm(apply_heat_semigroup(f, 0.0) - f), 0.0, 0.0);
    const GridFunction<double> one(grid, 1.0);
    rec.within("heat_constant", sup_norm(apply_heat_semigroup(one, 1.0) - one), 0.0, 1e-12);
  }

  if (parts("domination")) {
    const double t_max = cfg.number("model.domination_t", 1.0);
    for (double rho : cfg.list("model.rhos", {2, 4})) {
      for (double dv : cfg.list("model.domination_dims", {1, 3})) {
        const auto report = check_weight_domination(rho, static_cast<int>(dv), t_max);
        rec.info("domination_rho" + tag(rho) + "_d" + tag(dv), report.constant, 1.0, 0.0,
                 report.finite && report.constant >= 1.0);
      }
    }
  }

  const Readout f = cfg.readouts().front();
  const GridFunction<double> f_grid = on_grid(grid, f);
  const double T = cfg.number("model.t", 1.0);

  if (parts("comparison")) {
    const auto field = std::make_shared<const NoiseField>(cfg.kernel(), grid, dt);
    const std::size_t runs = count_of(cfg, "model.runs", 100);
    const double delta = cfg.number("model.delta", 0.1);
    const auto lambdas = cfg.list("model.lambdas", {0.5, 1.0});
    SolveOptions opt = options;
    for (double s = 0.1; s < T - 1e-12; s += 0.1) opt.save_times.push_back(s);

    struct Extremes {
      double min_u = std::numeric_limits<double>::infinity();
      double u_minus_lv = -std::numeric_limits<double>::infinity();
      double monotone = -std::numeric_limits<double>::infinity();
      double min_w = std::numeric_limits<double>::infinity();
      double w_minus_v = -std::numeric_limits<double>::infinity();
    };
    std::vector<Extremes> per_run(runs);
    parallel_for(runs, ctx.workers, [&](std::size_t r) {
      const NoisePath noise(field, derive_seed(ctx.seed, r));
      Extremes e;
      for (double lambda : lambdas) {
        const DerivativePair pair = derivative_quotient(f_grid, lambda, delta, T, noise, opt);
        for (std::size_t i = 0; i < pair.lower.slices.size(); ++i) {
          const auto& u = pair.lower.slices[i].values();
          const auto& u2 = pair.upper.slices[i].values();
          const auto& w = pair.quotient.slices[i].values();
          const auto& v = pair.linear.slices[i].values();
          e.min_u = std::min({e.min_u, u.minCoeff(), u2.minCoeff()});
          e.u_minus_lv = std::max(e.u_minus_lv, (u - lambda * v).maxCoeff());
          e.monotone = std::max(e.monotone, (u - u2).maxCoeff());
          e.min_w = std::min(e.min_w, w.minCoeff());
          e.w_minus_v = std::max(e.w_minus_v, (w - v).maxCoeff());
        }
      }
      per_run[r] = e;
    });
    Extremes all;
    for (const auto& e : per_run) {
      all.min_u = std::min(all.min_u, e.min_u);
      all.u_minus_lv = std::max(all.u_minus_lv, e.u_minus_lv);
      all.monotone = std::max(all.monotone, e.monotone);
      all.min_w = std::min(all.min_w, e.min_w);
      all.w_minus_v = std::max(all.w_minus_v, e.w_minus_v);
    }
    rec.at_least("comparison_u_nonnegative", all.min_u, 0.0, 0.0);
    rec.at_most("comparison_u_le_lambda_v", all.u_minus_lv, 0.0, 1e-12);
    rec.at_most("comparison_u_monotone_in_lambda", all.monotone, 0.0, 1e-12);
    rec.at_least("sandwich_w_nonnegative", all.min_w, 0.0, 1e-12);
    rec.at_most("sandwich_w_le_v", all.w_minus_v, 0.0, 1e-12);
  }

  if (parts("linearity")) {
    const auto field = std::make_shared<const NoiseField>(cfg.kernel(), grid, dt);
    const NoisePath noise(field, derive_seed(ctx.seed, 0x11ea));
    const GridFunction<double> g(grid, 1.0);
    const auto sum = solve_pam(f_grid + g, T, noise, options).back();
    const auto parts_sum = solve_pam(f_grid, T, noise, options).back() + solve_pam(g, T, noise, options).back();
    rec.at_most("pam_linearity", sup_norm(sum - parts_sum) / sup_norm(sum), 0.0, 1e-12);
  }

  if (parts("stratonovich")) {
    CovarianceKernel kernel = cfg.kernel();
    if (!kernel.scaled_theta()) kernel = CovarianceKernel::scaled_theta(grid.dim, cfg.number("model.strat_a", 1.0));
    const double sdt = cfg.number("model.strat_dt", 1e-4);
    const double st = cfg.number("model.strat_t", 1.0);
    const NoisePath noise = NoisePath::make(kernel, grid, sdt, derive_seed(ctx.seed, 0x57a7));
    const GridFunction<double> one(grid, 1.0);
    const auto identity = solve_stratonovich_pam(one, st, noise, options);
    const auto direct = solve_stratonovich_direct(one, st, noise, options);
    rec.at_most("stratonovich_identity", relative_sup_difference(direct, identity), 0.0, 1e-3);
  }
}

// ---------------------------------------------------------------- extinction-scan

void extinction_scan(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec) {
  const Parts parts(cfg, {"closed_form", "jensen"});
  const Grid grid = cfg.grid();
  const auto ks = cfg.list("model.ks", {1, 10});
  SolveOptions options;
  options.scheme = cfg.scheme();

  if (parts("closed_form")) {
    const double cdt = cfg.number("model.closed_dt", 1e-4);
    const double t_max = cfg.number("model.t_max", 4.0);
    SolveOptions opt = options;
    for (double s = 0.5; s < t_max - 1e-12; s += 0.5) opt.save_times.push_back(s);
    for (double k : ks) {
      const auto sol = solve_log_laplace_deterministic(GridFunction<double>(grid, k), t_max, cdt, opt);
      double worst = 0.0, mass_err = 0.0, mass_increase = -std::numeric_limits<double>::infinity();
      const auto mass = total_mass_series(sol);
      for (std::size_t i = 0; i < sol.slices.size(); ++i) {
        const double w = logistic_closed_form(sol.times[i], k);
        worst = std::max(worst, (sol.slices[i].values() - w).abs().maxCoeff());
        mass_err = std::max(mass_err, std::abs(mass[i] - grid.volume() * w));
        if (i > 0) mass_increase = std::max(mass_increase, mass[i] - mass[i - 1]);
      }
      rec.within("closed_form_k" + tag(k), worst, 0.0, 1e-6);
      rec.within("mass_closed_form_k" + tag(k), mass_err, 0.0, 1e-6 * grid.volume());
      rec.at_most("mass_nonincreasing_k" + tag(k), mass_increase, 0.0, 0.0);
    }
  }

  if (parts("jensen")) {
    const auto field = std::make_shared<const NoiseField>(cfg.kernel(), grid, cfg.dt());
    const std::size_t replicas = count_of(cfg, "mc.replicas", 200);
    const auto times = cfg.list("model.jensen_times", {1, 2, 4});
    const double T = *std::max_element(times.begin(), times.end());
    SolveOptions opt = options;
    opt.save_times = times;
    const Eigen::Index probe = grid.nearest(Eigen::VectorXd::Zero(grid.dim));
    for (std::size_t ik = 0; ik < ks.size(); ++ik) {
      const double k = ks[ik];
      std::vector<std::vector<double>> values(times.size(), std::vector<double>(replicas));
      std::vector<double> min_mass(replicas);
      parallel_for(replicas, ctx.workers, [&](std::size_t r) {
        const NoisePath noise(field, derive_seed(ctx.seed, r));
        const auto sol = solve_log_laplace(GridFunction<double>(grid, 1.0), k, T, noise, opt);
        for (std::size_t i = 0; i < times.size(); ++i) {
          const auto it = std::find_if(sol.times.begin(), sol.times.end(),
                                       [&](double s) { return std::abs(s - times[i]) < 0.5 * cfg.dt(); });
          values[i][r] = sol.slices[static_cast<std::size_t>(it - sol.times.begin())][probe];
        }
        const auto mass = total_mass_series(sol);
        min_mass[r] = *std::min_element(mass.begin(), mass.end());
      });
      for (std::size_t i = 0; i < times.size(); ++i) {
        const Estimate e = summarize(values[i]);
        rec.at_most("jensen_k" + tag(k) + "_t" + tag(times[i]), e.mean, logistic_closed_form(times[i], k), 3.0 * e.se,
                    e.se);
      }
      rec.at_least("mass_nonnegative_k" + tag(k), *std::min_element(min_mass.begin(), min_mass.end()), 0.0, 0.0);
    }
  }
}

// ---------------------------------------------------------------- moments-triangle

void moments_triangle(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec, RunOutput& out,
                      const std::string& hash) {
  const Parts parts(cfg, {"particles", "fk", "spde", "residual"});
  const auto readouts = cfg.readouts();
  const Readout& f = readouts.front();
  const int d = static_cast<int>(cfg.integer("grid.d", 1));
  const CovarianceKernel kernel = cfg.kernel(d);
  const double t = cfg.number("model.t", 1.0);
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(d);
  const AtomicMeasure nu{{origin, 1.0}};

  const double first_ref = first_moment_rhs(f.f, nu, t);
  std::optional<double> closed;
  if (const auto k = constant_value(f); k && constant_kernel(kernel)) {
    const double c = *constant_kernel(kernel);
    closed = (*k) * (*k) * (c > 0.0 ? std::exp(c * t) + std::expm1(c * t) / c : 1.0 + t);
  }

  std::optional<Estimate> particle, fk, spde;

  if (parts("particles")) {
    BranchingConfig bc;
    bc.n = static_cast<int>(cfg.integer("model.n", 200));
    bc.kernel = kernel;
    bc.initial = BranchingConfig::point_mass(origin, 1.0, bc.n);
    bc.horizon = t;
    bc.max_population = count_of(cfg, "model.max_population", 1'000'000);
    const std::size_t replicas = count_of(cfg, "mc.replicas", 1000);
    const auto snapshot_times = cfg.list("model.snapshot_times", {0.0, t});
    std::vector<double> save = snapshot_times;
    save.push_back(t);
    const std::size_t logged = std::min(replicas, count_of(cfg, "model.snapshot_replicas", 5));

    std::vector<double> first(replicas), second(replicas);
    std::vector<std::string> snapshot_rows(logged);
    std::vector<char> blown(replicas, 0);
    parallel_for(replicas, ctx.workers, [&](std::size_t r) {
      Rng rng(derive_seed(derive_seed(ctx.seed, 0x9a27), r));
      try {
        const auto snaps = run(bc, save, rng);
        const Pairing p = empirical_pairing(snaps.back(), f.f);
        first[r] = p.first;
        second[r] = p.second;
        if (r < logged) {
          for (const auto& s : snaps) {
            std::string row = std::to_string(r) + "," + num(s.time()) + "," + std::to_string(s.count());
            for (const auto& g : readouts) row += "," + num(empirical_pairing(s, g.f).first);
            snapshot_rows[r] += row + "\n";
          }
        }
      } catch (const PopulationCapExceeded&) {
        blown[r] = 1;
      }
    });
    std::string header = "replica,t,particle_count";
    for (std::size_t i = 0; i < readouts.size(); ++i) header += ",readout_" + std::to_string(i);
    std::string body = header + "\n";
    for (const auto& s : snapshot_rows) body += s;
    out.extras.push_back({"snapshots.csv", body});

    const auto blowups = static_cast<double>(std::count(blown.begin(), blown.end(), 1));
    rec.within("particle_blowups", blowups, 0.0, 0.0);
    const Estimate e1 = summarize(first);
    const Estimate e2 = summarize(second);
    rec.within_se("particle_first_moment", e1.mean, first_ref, e1.se, 3.0);
    if (closed) rec.within_se("particle_second_moment", e2.mean, *closed, e2.se, 5.0);
    particle = e2;
  }

  if (parts("fk")) {
    const MCConfig mc = mc_of(cfg, derive_seed(ctx.seed, 0xf4), ctx.workers);
    const Estimate e = second_moment_rhs(f.f, nu, t, kernel, mc);
    FkTable table{hash};
    table.add("second_moment_rhs", e, mc);
    out.extras.push_back({"fk.csv", table.body});
    if (closed) rec.within_se("fk_second_moment", e.mean, *closed, e.se, 3.0);
    rec.at_least("fk_variance_nonnegative", e.mean, first_ref * first_ref, 5.0 * e.se, e.se);
    fk = e;
  }

  if (parts("spde")) {
    // E<f,X_t>^2 = E[v(t,0)^2 - d^2/dlambda^2 u(lambda; t, 0)] at lambda = 0,
    // with a one-sided second-order difference in lambda on shared noise.
    Grid grid(d, cfg.integer("grid.cells", 8), cfg.number("grid.L", 1.0));
    const auto field = std::make_shared<const NoiseField>(kernel, grid, cfg.dt());
    const double delta = cfg.number("model.delta", 1e-3);
    const std::size_t replicas = count_of(cfg, "model.spde_replicas", 2000);
    const GridFunction<double> f_grid = on_grid(grid, f);
    const Eigen::Index probe = grid.nearest(origin);
    SolveOptions options;
    options.scheme = cfg.scheme();
    std::vector<double> samples(replicas);
    parallel_for(replicas, ctx.workers, [&](std::size_t r) {
      const NoisePath noise(field, derive_seed(derive_seed(ctx.seed, 0x5bde), r));
      const double v = solve_pam(f_grid, t, noise, options).back()[probe];
      double u[4] = {0.0, 0.0, 0.0, 0.0};
      for (int i = 1; i <= 3; ++i) u[i] = solve_log_laplace(f_grid, i * delta, t, noise, options).back()[probe];
      const double curvature = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (delta * delta);
      samples[r] = v * v - curvature;
    });
    const Estimate e = summarize(samples);
    if (closed) rec.within_se("spde_second_moment", e.mean, *closed, e.se, 5.0);
    spde = e;
  }

  if (particle && fk)
    rec.within_se("triangle_particle_fk", particle->mean, fk->mean, combined_se(particle->se, fk->se), 5.0);
  if (particle && spde)
    rec.within_se("triangle_particle_spde", particle->mean, spde->mean, combined_se(particle->se, spde->se), 5.0);
  if (fk && spde) rec.within_se("triangle_fk_spde", fk->mean, spde->mean, combined_se(fk->se, spde->se), 5.0);

  if (parts("residual")) {
    const Readout bump = readouts.size() > 1 ? readouts[1] : gaussian_bump(origin, 1.0);
    BranchingConfig bc;
    bc.n = static_cast<int>(cfg.integer("model.residual_n", 100));
    bc.kernel = kernel;
    bc.initial = BranchingConfig::point_mass(origin, 1.0, bc.n);
    const auto times = cfg.list("model.residual_times", {0.2, 0.4, 0.6, 0.8, 1.0});
    bc.horizon = *std::max_element(times.begin(), times.end());
    const std::size_t replicas = count_of(cfg, "model.residual_replicas", 1000);
    std::vector<double> every;
    const auto epochs = static_cast<std::size_t>(std::llround(bc.horizon * bc.n));
    for (std::size_t e = 0; e <= epochs; ++e) every.push_back(static_cast<double>(e) / bc.n);

    std::vector<std::vector<double>> residual(times.size(), std::vector<double>(replicas));
    std::vector<std::vector<double>> qv(times.size(), std::vector<double>(replicas));
    parallel_for(replicas, ctx.workers, [&](std::size_t r) {
      Rng rng(derive_seed(derive_seed(ctx.seed, 0x3e51), r));
      const auto traj = run(bc, every, rng);
      const MartingaleResidual m = martingale_residual(traj, bump, kernel);
      for (std::size_t i = 0; i < times.size(); ++i) {
        const auto idx = static_cast<std::size_t>(std::llround(times[i] * bc.n));
        residual[i][r] = m.residual[idx];
        qv[i][r] = m.quadratic_variation[idx];
      }
    });
    for (std::size_t i = 0; i < times.size(); ++i) {
      const Estimate e = summarize(residual[i]);
      rec.within_se("residual_mean_t" + tag(times[i]), e.mean, 0.0, e.se, 3.0);
      std::vector<double> sq(replicas);
      for (std::size_t r = 0; r < replicas; ++r) sq[r] = residual[i][r] * residual[i][r];
      const Estimate var = summarize(sq);
      const Estimate q = summarize(qv[i]);
      rec.within_se("residual_variance_t" + tag(times[i]), var.mean, q.mean, combined_se(var.se, q.se), 5.0);
    }
  }
}

// ---------------------------------------------------------------- duality-ladder

void duality_ladder(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec, RunOutput& out) {
  const Parts parts(cfg, {"zero", "ladder", "third"});
  const Grid grid = cfg.grid();
  const double dt = cfg.dt();
  const double t = cfg.number("model.t", 1.0);
  const GridFunction<double> phi = on_grid(grid, cfg.readouts().front());
  const std::string mu_kind = cfg.text("model.mu", "lebesgue");
  DualMeasure mu = DualMeasure::lebesgue(grid);
  if (mu_kind == "point") mu = DualMeasure::point_mass(point_of(cfg, "model.mu_point", grid.dim), cfg.number("model.mu_mass", 1.0));
  else if (mu_kind != "lebesgue") throw ConfigError("[model] mu must be lebesgue or point");
  const auto ladder = cfg.list("model.n_ladder", {10, 40, 160});
  DualConfig dual;
  dual.dt = dt;
  dual.scheme = cfg.scheme();

  if (parts("zero")) {
    const auto silent = std::make_shared<const NoiseField>(CovarianceKernel::constant(grid.dim, 0.0), grid, dt);
    dual.n = static_cast<int>(ladder.front());
    const DualityGap gap = duality_gap(phi, mu, t, silent, dual, count_of(cfg, "model.zero_replicas", 20),
                                       derive_seed(ctx.seed, 0x2e50), ctx.workers);
    rec.within_se("zero_kernel_gap", gap.gap, 0.0, gap.se, 2.0);
    if (const auto k = constant_value(cfg.readouts().front()); k && mu.kind == DualMeasure::Kind::Uniform)
      rec.within("zero_kernel_closed_form", gap.right.mean, std::exp(-mu.mass * logistic_closed_form(t, *k)), 1e-6);
  }

  const auto field = std::make_shared<const NoiseField>(cfg.kernel(), grid, dt);
  if (parts("ladder")) {
    const std::size_t replicas = count_of(cfg, "mc.replicas", 2000);
    std::vector<DualityGap> gaps;
    for (double nv : ladder) {
      dual.n = static_cast<int>(nv);
      gaps.push_back(duality_gap(phi, mu, t, field, dual, replicas, derive_seed(ctx.seed, 0x1ad0), ctx.workers));
      const DualityGap& g = gaps.back();
      rec.info("gap_n" + tag(nv), g.gap, 0.0, g.se, true);
      rec.within_se("jump_count_n" + tag(nv), g.jumps.mean, nv * t, g.jumps.se, 3.0);
    }
    for (std::size_t i = 1; i < gaps.size(); ++i) {
      const double se = combined_se(gaps[i].se, gaps[i - 1].se);
      rec.at_most("gap_nonincreasing_n" + tag(ladder[i]), gaps[i].gap, gaps[i - 1].gap, 2.0 * se, se);
    }
    const double se = combined_se(gaps.back().se, gaps.front().se);
    rec.at_most("gap_last_le_first", gaps.back().gap, gaps.front().gap, 2.0 * se, se);

    // Exact-replay jump logs for the first few replicas at the first rung.
    dual.n = static_cast<int>(ladder.front());
    std::string log = "replica,jump_time,field_seed\n";
    const std::size_t logged = count_of(cfg, "model.log_replicas", 3);
    for (std::size_t r = 0; r < logged; ++r) {
      const DualState s = evolve_dual(phi, t, *field, dual, derive_seed(derive_seed(ctx.seed, 0x1ad0), 2 * r + 1));
      for (const auto& j : s.jumps) log += std::to_string(r) + "," + num(j.time) + "," + std::to_string(j.field_seed) + "\n";
    }
    out.extras.push_back({"jumps.csv", log});
  }

  if (parts("third")) {
    std::vector<int> ns;
    for (double nv : ladder) ns.push_back(static_cast<int>(nv));
    const auto rows = third_moment_scan(phi, cfg.number("model.third_rho", 2.0), cfg.list("model.third_times", {t}), ns,
                                        field, dt, count_of(cfg, "model.third_replicas", 2000),
                                        derive_seed(ctx.seed, 0x3d3d), ctx.workers);
    std::map<double, std::pair<double, double>> span;  // t -> (min, max) over n
    for (const auto& row : rows) {
      rec.info("third_ratio_n" + std::to_string(row.n) + "_t" + tag(row.t), row.max_ratio, kNaN, 0.0,
               std::isfinite(row.max_ratio));
      auto [it, fresh] = span.try_emplace(row.t, row.max_ratio, row.max_ratio);
      if (!fresh) it->second = {std::min(it->second.first, row.max_ratio), std::max(it->second.second, row.max_ratio)};
    }
    for (const auto& [tt, mm] : span) {
      const double spread = mm.first > 0.0 ? (mm.second - mm.first) / mm.first : 0.0;
      rec.at_most("third_stability_t" + tag(tt), spread, 0.0, 0.5);
    }
  }
}

// ---------------------------------------------------------------- lyapunov-ladder

void lyapunov_ladder(const ExperimentConfig& cfg, const RunContext& ctx, Recorder& rec) {
  const Parts parts(cfg, {"lyapunov", "ldp_a", "ldp_t"});
  const Grid grid = cfg.grid();
  const double dt = cfg.dt();
  const RadialProfile theta = RadialProfile::by_name(cfg.text("kernel.theta", "gaussian"));

  if (parts("lyapunov")) {
    const auto ladder = cfg.list("model.a_ladder", {1, 4, 16, 64});
    std::vector<LyapunovReport> reports;
    double identity = 0.0;
    for (double a : ladder) {
      LyapunovConfig lc;
      lc.a = a;
      lc.theta = theta;
      lc.T = cfg.number("model.T", 32.0);
      lc.grid = grid;
      lc.dt = dt;
      lc.replicas = count_of(cfg, "mc.replicas", 40);
      lc.seed = derive_seed(ctx.seed, 0x1a90);
      lc.workers = ctx.workers;
      reports.push_back(lyapunov_estimate(lc));
      const auto& r = reports.back();
      rec.info("lyapunov_rate_a" + tag(a), r.median_rate, kNaN, 0.5 * (r.q75 - r.q25), r.plateau);
      for (std::size_t i = 0; i < r.slopes.size(); ++i)
        identity = std::max(identity, std::abs(r.slopes[i] - r.ito_slopes[i] - 0.5 * a));
    }
    const auto& lo = reports.front();
    const auto& hi = reports.back();
    std::size_t ordered = 0;
    for (std::size_t i = 0; i < lo.rates.size(); ++i) ordered += hi.rates[i] < lo.rates[i] ? 1 : 0;
    rec.at_least("lyapunov_paired_decrease", static_cast<double>(ordered) / static_cast<double>(lo.rates.size()), 0.9,
                 0.0);
    rec.within("lyapunov_ito_identity", identity, 0.0, 1e-9);
  }

  const double radius_scale = cfg.number("model.ldp_radius_per_t", 1.0);
  const std::size_t replicas = count_of(cfg, "model.ldp_replicas", 200);
  auto probe_ladder = [&](const std::string& name, const std::vector<std::pair<double, double>>& points) {
    std::vector<TailProbe> probes;
    for (const auto& [a, t] : points) {
      probes.push_back(ldp_tail_probe(a, theta, t, radius_scale * t, grid, dt, replicas,
                                      derive_seed(ctx.seed, 0x1d90), ctx.workers));
      const auto& p = probes.back();
      rec.info(name + "_a" + tag(a) + "_t" + tag(t), p.interval.p, kNaN, 0.5 * (p.interval.upper - p.interval.lower),
               true);
    }
    std::size_t violations = 0;
    for (std::size_t i = 1; i < probes.size(); ++i)
      violations += probes[i].interval.p > probes[i - 1].interval.upper ? 1 : 0;
    rec.within(name + "_monotone_violations", static_cast<double>(violations), 0.0, 0.0);
    rec.at_least(name + "_extremes_separated", probes.front().interval.lower - probes.back().interval.upper, 0.0, 0.0);
  };
  if (parts("ldp_a")) {
    const double t = cfg.number("model.ldp_t", 4.0);
    std::vector<std::pair<double, double>> points;
    for (double a : cfg.list("model.ldp_a", {1, 16, 256, 4096})) points.emplace_back(a, t);
    probe_ladder("ldp_a", points);
  }
  if (parts("ldp_t")) {
    const double a = cfg.number("model.ldp_t_a", 1024.0);
    std::vector<std::pair<double, double>> points;
    for (double t : cfg.list("model.ldp_times", {1, 2, 4, 8})) points.emplace_back(a, t);
    probe_ladder("ldp_t", points);
  }
}

}  // namespace

RunOutput run_experiment(const ExperimentConfig& config, const RunContext& context) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunOutput out;
  RunReport& report = out.report;
  report.experiment = config.experiment();
  report.seed = context.seed;
  report.config_hash = config.hash(context.seed);
  Recorder rec(report);
  const std::string& name = report.experiment;

  if (name == "threshold-table") threshold_table(config, rec);
  else if (name == "persistence-scan") persistence_scan(config, context, rec);
  else if (name == "pam-oracle") pam_oracle(config, context, rec, out, report.config_hash);
  else if (name == "comparison-suite") comparison_suite(config, context, rec);
  else if (name == "extinction-scan") extinction_scan(config, context, rec);
  else if (name == "moments-triangle") moments_triangle(config, context, rec, out, report.config_hash);
  else if (name == "duality-ladder") duality_ladder(config, context, rec, out);
  else if (name == "lyapunov-ladder") lyapunov_ladder(config, context, rec);
  else throw ConfigError("unknown experiment '" + name + "'");

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string report_csv(const RunReport& report) {
  std::string out = "config_hash,experiment,check,estimate,reference,se,tolerance,pass\n";
  for (const auto& r : report.rows) {
    out += report.config_hash + "," + report.experiment + "," + r.check + "," + num(r.estimate) + "," +
           num(r.reference) + "," + num(r.se) + "," + num(r.tolerance) + "," + (r.pass ? "1" : "0") + "\n";
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write '" + path.string() + "'");
  file << content;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::stringstream buf;
  buf << file.rdbuf();
  return buf.str();
}

std::string prefixed(const std::string& experiment, const std::string& name) { return experiment + "." + name; }

}  // namespace

WrittenRun write_run(const RunOutput& output, const ExperimentConfig& config, const RunContext& context,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const RunReport& report = output.report;
  WrittenRun written;
  written.csv = dir / (report.experiment + ".csv");
  written.manifest = dir / (report.experiment + ".manifest");
  const std::string csv = report_csv(report);
  write_file(written.csv, csv);

  std::ostringstream m;
  m << "version=" << kVersion << "\nexperiment=" << report.experiment << "\nconfig_path=" << config.path().string()
    << "\nconfig_hash=" << report.config_hash << "\nseed=" << context.seed << "\nworkers=" << context.workers
    << "\ncsv=" << written.csv.filename().string() << "\ncsv_hash=" << hex64(fnv1a64(csv)) << "\n";
  for (const auto& extra : output.extras) {
    const std::string name = prefixed(report.experiment, extra.name);
    write_file(dir / name, extra.content);
    m << "extra=" << name << ":" << hex64(fnv1a64(extra.content)) << "\n";
  }
  write_file(written.manifest, m.str());
  return written;
}

ReplayResult replay(const std::filesystem::path& manifest_path, std::optional<unsigned> workers) {
  ReplayResult result;
  std::map<std::string, std::string> manifest;
  std::vector<std::pair<std::string, std::string>> extras;
  {
    std::istringstream in(read_file(manifest_path));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "extra") {
        const auto colon = value.rfind(':');
        extras.emplace_back(value.substr(0, colon), value.substr(colon + 1));
      } else {
        manifest[key] = value;
      }
    }
  }
  for (const char* key : {"version", "experiment", "config_path", "config_hash", "seed", "csv", "csv_hash"}) {
    if (!manifest.count(key)) throw ConfigError(std::string("manifest is missing '") + key + "'");
  }
  if (manifest["version"] != kVersion) {
    result.refused = true;
    result.message = "version mismatch: manifest " + manifest["version"] + ", program " + kVersion;
    return result;
  }
  const ExperimentConfig config = ExperimentConfig::load(manifest["config_path"]);
  RunContext context;
  context.seed = std::stoull(manifest["seed"]);
  context.workers = workers ? *workers : static_cast<unsigned>(std::stoul(manifest.count("workers") ? manifest["workers"] : "1"));
  const std::string now = config.hash(context.seed);
  if (now != manifest["config_hash"]) {
    result.refused = true;
    result.message = "config hash mismatch: manifest " + manifest["config_hash"] + ", current " + now +
                     " (config at " + manifest["config_path"] + " changed)";
    return result;
  }

  result.output = run_experiment(config, context);
  const std::filesystem::path dir = manifest_path.parent_path();
  std::vector<std::string> differences;
  const std::string csv = report_csv(result.output.report);
  if (hex64(fnv1a64(csv)) != manifest["csv_hash"] || csv != read_file(dir / manifest["csv"]))
    differences.push_back(manifest["csv"]);
  for (const auto& [name, hash] : extras) {
    const auto it = std::find_if(result.output.extras.begin(), result.output.extras.end(), [&](const OutputFile& f) {
      return prefixed(result.output.report.experiment, f.name) == name;
    });
    if (it == result.output.extras.end() || hex64(fnv1a64(it->content)) != hash) differences.push_back(name);
  }
  result.identical = differences.empty();
  if (result.identical) {
    result.message = "replay identical";
  } else {
    result.message = "replay differs in:";
    for (const auto& d : differences) result.message += " " + d;
  }
  return result;
}

}  // namespace sbmre

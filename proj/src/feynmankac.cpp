#include "sbmre/feynmankac.hpp"

#include "sbmre/parallel.hpp"
#include "sbmre/quadrature.hpp"
#include "sbmre/random.hpp"
#include "sbmre/spde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbmre {

void MCConfig::validate() const {
  if (paths < 2) throw std::invalid_argument("MCConfig: need at least 2 paths");
  if (!(dt > 0.0)) throw std::invalid_argument("MCConfig: dt must be > 0");
}

namespace {

std::size_t mesh_steps(double t, double dt) {
  if (!(t >= 0.0)) throw std::invalid_argument("path mesh: t must be >= 0");
  const double ratio = t / dt;
  const auto steps = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-6 * std::max(1.0, ratio))
    throw std::invalid_argument("path mesh: dt must divide t");
  return steps;
}

Eigen::VectorXd normal_vector(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
  return z;
}

// One pair path of `steps` steps of length h; `sign` flips the increments
// for the antithetic partner.
double pair_functional(const PairFunction& F, Eigen::VectorXd b1, Eigen::VectorXd b2, std::size_t steps, double h,
                       const CovarianceKernel& kernel, const std::vector<Eigen::VectorXd>& noise, double sign) {
  const double sh = std::sqrt(h);
  double potential = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    potential += kernel(b1, b2) * h;
    b1 += sign * sh * noise[2 * s];
    b2 += sign * sh * noise[2 * s + 1];
  }
  const double value = F(b1, b2) * std::exp(potential);
  if (!std::isfinite(value)) throw std::runtime_error("Feynman-Kac functional is not finite");
  return value;
}

double pair_sample(const PairFunction& F, const Eigen::VectorXd& x, const Eigen::VectorXd& y, std::size_t steps,
                   double h, const CovarianceKernel& kernel, bool antithetic, Rng& rng) {
  std::vector<Eigen::VectorXd> noise(2 * steps);
  for (auto& z : noise) z = normal_vector(x.size(), rng);
  const double plain = pair_functional(F, x, y, steps, h, kernel, noise, 1.0);
  if (!antithetic) return plain;
  return 0.5 * (plain + pair_functional(F, x, y, steps, h, kernel, noise, -1.0));
}

template <typename Sampler>
Estimate monte_carlo(const MCConfig& mc, std::uint64_t stream_base, Sampler&& sampler) {
  mc.validate();
  std::vector<double> samples(mc.paths);
  const std::uint64_t root = derive_seed(mc.seed, stream_base);
  parallel_for(mc.paths, mc.workers, [&](std::size_t i) {
    Rng rng(derive_seed(root, i));
    samples[i] = sampler(rng);
  });
  return summarize(samples);
}

}  // namespace

Estimate qtc(const PairFunction& F, const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t,
             const CovarianceKernel& kernel, const MCConfig& mc) {
  if (x.size() != kernel.dim() || y.size() != kernel.dim()) throw std::invalid_argument("qtc: dimension mismatch");
  const std::size_t steps = mesh_steps(t, mc.dt);
  return monte_carlo(mc, 0x51, [&](Rng& rng) { return pair_sample(F, x, y, steps, mc.dt, kernel, mc.antithetic, rng); });
}

double heat_expectation(const PointFunction& f, const Eigen::VectorXd& x, double t, int order) {
  if (!(t >= 0.0)) throw std::invalid_argument("heat_expectation: t must be >= 0");
  if (t == 0.0) return f(x);
  const Eigen::Index d = x.size();
  const QuadratureRule gh = gauss_hermite(d >= 3 ? std::min(order, 32) : order);
  const Eigen::Index m = gh.nodes.size();
  Eigen::Index count = 1;
  for (Eigen::Index k = 0; k < d; ++k) count *= m;
  const double st = std::sqrt(t);
  double total = 0.0;
  Eigen::VectorXd z(d);
  for (Eigen::Index j = 0; j < count; ++j) {
    Eigen::Index rem = j;
    double w = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      const Eigen::Index i = rem % m;
      rem /= m;
      w *= gh.weights[i];
      z[k] = x[k] + st * gh.nodes[i];
    }
    total += w * f(z);
  }
  return total;
}

double first_moment_rhs(const PointFunction& f, const AtomicMeasure& nu, double t) {
  double total = 0.0;
  for (const auto& p : nu) total += p.weight * heat_expectation(f, p.x, t);
  return total;
}

Estimate second_moment_rhs(const PointFunction& f, const AtomicMeasure& nu, double t, const CovarianceKernel& kernel,
                           const MCConfig& mc) {
  if (nu.empty()) return {0.0, 0.0, mc.paths};
  for (const auto& p : nu)
    if (p.x.size() != kernel.dim()) throw std::invalid_argument("second_moment_rhs: dimension mismatch");
  const PairFunction F = tensor_square(f);
  mesh_steps(t, mc.dt);

  // First term: sum over ordered pairs of atoms.
  double first = 0.0, first_var = 0.0;
  std::uint64_t stream = 0;
  for (const auto& p : nu) {
    for (const auto& q : nu) {
      MCConfig sub = mc;
      sub.seed = derive_seed(mc.seed, 0x100 + stream++);
      const Estimate e = qtc(F, p.x, q.x, t, kernel, sub);
      first += p.weight * q.weight * e.mean;
      first_var += std::pow(p.weight * q.weight * e.se, 2);
    }
  }

  // Second term: t * E[ F(B_s, B'_s) exp(int C) ] started from (z, z) with
  // z = x + B_{t-s}, s ~ U(0, t).
  double second = 0.0, second_var = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const auto& p = nu[i];
    MCConfig sub = mc;
    sub.seed = derive_seed(mc.seed, 0x200 + i);
    const Estimate e = monte_carlo(sub, 0x52, [&](Rng& rng) {
      std::uniform_real_distribution<double> uniform(0.0, t);
      const double s = uniform(rng);
      const Eigen::VectorXd z = p.x + std::sqrt(t - s) * normal_vector(p.x.size(), rng);
      const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(s / mc.dt - 1e-9)));
      return t * pair_sample(F, z, z, steps, s / static_cast<double>(steps), kernel, mc.antithetic, rng);
    });
    second += p.weight * e.mean;
    second_var += std::pow(p.weight * e.se, 2);
  }
  return {first + second, std::sqrt(first_var + second_var), mc.paths};
}

Estimate pam_second_moment_oracle(const PointFunction& f, double t, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, const CovarianceKernel& kernel, const MCConfig& mc) {
  return qtc(tensor_square(f), x, y, t, kernel, mc);
}

Estimate annealed_moment_w(const RadialProfile& theta, double a, double t, const Eigen::VectorXd& x, int k,
                           const MCConfig& mc) {
  if (k < 1 || k > 4) throw std::invalid_argument("annealed_moment_w: k must be in 1..4");
  if (!(a > 0.0)) throw std::invalid_argument("annealed_moment_w: a must be > 0");
  const std::size_t steps = mesh_steps(t, mc.dt);
  const double sd = std::sqrt(mc.dt / a);
  const auto sample = [&](double sign, const std::vector<Eigen::VectorXd>& noise) {
    std::vector<Eigen::VectorXd> paths(static_cast<std::size_t>(k), x);
    double cross = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) cross += theta((paths[i] - paths[j]).norm()) * mc.dt;
      for (int i = 0; i < k; ++i) paths[i] += sign * sd * noise[s * k + i];
    }
    return std::exp(0.5 * k * t + cross);
  };
  return monte_carlo(mc, 0x53, [&](Rng& rng) {
    std::vector<Eigen::VectorXd> noise(steps * static_cast<std::size_t>(k));
    for (auto& z : noise) z = normal_vector(x.size(), rng);
    const double plain = sample(1.0, noise);
    return mc.antithetic ? 0.5 * (plain + sample(-1.0, noise)) : plain;
  });
}

namespace {

// log sup of the Ito PAM from f = 1, recorded on a time mesh, with the state
// renormalized by its max after every step.
struct LogMaxTrace {
  std::vector<double> times;
  std::vector<double> log_max;
};

LogMaxTrace trace_log_max(const NoisePath& noise, double T, double record_every,
                          const std::function<double(const GridFunction<double>&)>& readout) {
  LogMaxTrace trace;
  double log_scale = 0.0;
  const auto every = static_cast<std::size_t>(std::max(1.0, std::round(record_every / noise.dt())));
  SolveOptions options;
  options.observer = [&](std::size_t step, double t, GridFunction<double>& u) {
    const double m = u.values().maxCoeff();
    if (!(m > 0.0)) throw NonFiniteSolution("PAM solution vanished", step);
    if ((step + 1) % every == 0) {
      trace.times.push_back(t);
      trace.log_max.push_back(log_scale + std::log(readout(u)));
    }
    log_scale += std::log(m);
    u *= 1.0 / m;
  };
  const GridFunction<double> one(noise.grid(), 1.0);
  solve_pam(one, T, noise, options);
  return trace;
}

double window_slope(const LogMaxTrace& trace, double from, double to) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    if (trace.times[i] >= from - 1e-12 && trace.times[i] <= to + 1e-12) {
      x.push_back(trace.times[i]);
      y.push_back(trace.log_max[i]);
    }
  }
  return ls_slope(x, y);
}

}  // namespace

LyapunovReport lyapunov_estimate(const LyapunovConfig& config) {
  if (!(config.a >= 0.0)) throw std::invalid_argument("lyapunov_estimate: a must be >= 0");
  if (config.replicas < 1) throw std::invalid_argument("lyapunov_estimate: need replicas");
  LyapunovReport report;
  report.a = config.a;
  report.slopes.resize(config.replicas);
  report.early_slopes.resize(config.replicas);

  const auto kernel = CovarianceKernel::scaled_theta(config.grid.dim, config.a, config.theta);
  const auto field = std::make_shared<const NoiseField>(kernel, config.grid, config.dt);
  const auto sup = [](const GridFunction<double>& u) { return u.values().maxCoeff(); };
  parallel_for(config.replicas, config.workers, [&](std::size_t r) {
    const NoisePath noise(field, derive_seed(config.seed, r));
    const LogMaxTrace trace = trace_log_max(noise, config.T, config.record_every, sup);
    // Stratonovich solution = Ito solution * e^{a t / 2}.
    report.slopes[r] = window_slope(trace, 0.5 * config.T, config.T) + 0.5 * config.a;
    report.early_slopes[r] = window_slope(trace, 0.25 * config.T, 0.5 * config.T) + 0.5 * config.a;
  });

  for (double s : report.slopes) {
    report.rates.push_back(config.a > 0.0 ? s / config.a : 0.0);
    report.ito_slopes.push_back(s - 0.5 * config.a);
  }
  report.median_rate = median(report.rates);
  report.q25 = quantile(report.rates, 0.25);
  report.q75 = quantile(report.rates, 0.75);

  const double late = median(report.slopes), early = median(report.early_slopes);
  const double band = std::max(quantile(report.slopes, 0.75) - quantile(report.slopes, 0.25),
                               quantile(report.early_slopes, 0.75) - quantile(report.early_slopes, 0.25));
  report.plateau = std::abs(late - early) <= band;
  return report;
}

TailProbe ldp_tail_probe(double a, const RadialProfile& theta, double t, double radius, const Grid& grid, double dt,
                         std::size_t replicas, std::uint64_t seed, unsigned workers) {
  if (!(a > 0.0)) throw std::invalid_argument("ldp_tail_probe: a must be > 0");
  if (grid.extent < 2.0 * radius) throw std::invalid_argument("ldp_tail_probe: grid extent must be >= 2 * radius");
  if (replicas < 1) throw std::invalid_argument("ldp_tail_probe: need replicas");

  std::vector<Eigen::Index> window;
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    if (grid.point(j).norm() <= radius) window.push_back(j);
  const auto local_max = [&](const GridFunction<double>& u) {
    double m = 0.0;
    for (Eigen::Index j : window) m = std::max(m, u[j]);
    return m;
  };

  const auto kernel = CovarianceKernel::scaled_theta(grid.dim, a, theta);
  const auto field = std::make_shared<const NoiseField>(kernel, grid, dt);
  std::vector<char> hit(replicas, 0);
  parallel_for(replicas, workers, [&](std::size_t r) {
    const NoisePath noise(field, derive_seed(seed, r));
    const LogMaxTrace trace = trace_log_max(noise, t, t, local_max);
    hit[r] = trace.log_max.back() > -a * t / 3.0;
  });

  TailProbe probe;
  probe.a = a;
  probe.t = t;
  probe.trials = replicas;
  probe.hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  probe.interval = wilson_interval(probe.hits, probe.trials);
  return probe;
}

}  // namespace sbmre

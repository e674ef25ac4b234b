#include "sbmre/heatkernel.hpp"
#include "sbmre/parallel.hpp"
#include "sbmre/random.hpp"
#include "sbmre/readout.hpp"
#include "sbmre/spde.hpp"
#include "sbmre/stats.hpp"

#include <doctest.h>

#include <cmath>

using namespace sbmre;

namespace {

GridFunction<double> bump(const Grid& grid, double width = 1.0) {
  return GridFunction<double>::from_function(
      grid, [&](const Eigen::VectorXd& x) { return std::exp(-x.squaredNorm() / (2.0 * width * width)); });
}

}  // namespace

TEST_CASE("noise path replays bit for bit") {
  const Grid grid(1, 16, 4.0);
  const auto field = std::make_shared<const NoiseField>(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-2);
  const NoisePath a(field, 42), b(field, 42, true), c(field, 43);
  for (std::size_t k : {0u, 5u, 3u, 5u}) {
    CHECK((a.increment(k).array() == b.increment(k).array()).all());
    CHECK((a.increment(k).array() != c.increment(k).array()).any());
  }
  CHECK((a.increment(1).array() != a.increment(2).array()).any());
}

TEST_CASE("noise-off PAM is the heat flow") {
  const Grid grid(1, 256, 8.0);
  const auto f = bump(grid, 0.5);
  const NoisePath silent = NoisePath::make(CovarianceKernel::constant(1, 0.0), grid, 1e-3, 1);
  for (auto order : {SplittingOrder::Symmetric, SplittingOrder::Lie}) {
    SolveOptions opt;
    opt.scheme.order = order;
    CHECK(sup_norm(solve_pam(f, 1.0, silent, opt).back() - apply_heat_semigroup(f, 1.0)) < 1e-8);
  }
}

TEST_CASE("PAM saves requested times and starts from f") {
  const Grid grid(1, 32, 4.0);
  const auto f = bump(grid);
  const NoisePath noise = NoisePath::make(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-2, 3);
  SolveOptions opt;
  opt.save_times = {0.25, 0.5};
  const auto sol = solve_pam(f, 1.0, noise, opt);
  REQUIRE(sol.times.size() == 4);
  CHECK(sol.times.front() == 0.0);
  CHECK(sol.times[1] == doctest::Approx(0.25));
  CHECK(sol.times.back() == doctest::Approx(1.0));
  CHECK((sol.slices.front().values() == f.values()).all());
  // saving intermediate slices does not change the path
  CHECK(sup_norm(solve_pam(f, 1.0, noise).back() - sol.back()) < 1e-12);
}

TEST_CASE("PAM is linear in the initial data on a shared path") {
  const Grid grid(1, 64, 6.0);
  const NoisePath noise = NoisePath::make(CovarianceKernel::scaled_theta(1, 2.0), grid, 1e-3, 9);
  const auto f = bump(grid);
  const GridFunction<double> g(grid, 0.5);
  const auto lhs = solve_pam(2.0 * f + g, 0.5, noise).back();
  const auto rhs = 2.0 * solve_pam(f, 0.5, noise).back() + solve_pam(g, 0.5, noise).back();
  CHECK(sup_norm(lhs - rhs) <= 1e-12 * sup_norm(lhs));
}

TEST_CASE("PAM moments with a constant kernel") {
  // E v = 1 and E v^2 = e^{c t} from f = 1
  const Grid grid(1, 16, 4.0);
  const double c = 1.0, t = 1.0;
  const auto field = std::make_shared<const NoiseField>(CovarianceKernel::constant(1, c), grid, 1e-3);
  const std::size_t replicas = 1000;
  std::vector<double> first(replicas), second(replicas);
  parallel_for(replicas, 1, [&](std::size_t r) {
    const double v = solve_pam(GridFunction<double>(grid, 1.0), t, NoisePath(field, derive_seed(77, r))).back()[3];
    first[r] = v;
    second[r] = v * v;
  });
  const Estimate m1 = summarize(first), m2 = summarize(second);
  CHECK(std::abs(m1.mean - 1.0) <= 3.0 * m1.se);
  CHECK(std::abs(m2.mean - std::exp(c * t)) <= 3.0 * m2.se);
}

TEST_CASE("log-Laplace equation") {
  const Grid grid(1, 64, 8.0);
  const NoisePath noise = NoisePath::make(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-3, 5);
  const auto f = bump(grid);
  SUBCASE("lambda = 0 stays at zero") {
    const auto sol = solve_log_laplace(f, 0.0, 1.0, noise);
    CHECK(sup_norm(sol.back()) == 0.0);
  }
  SUBCASE("noise-off constant data follows 1/(t/2 + 1/k)") {
    for (double k : {1.0, 10.0}) {
      SolveOptions opt;
      opt.save_times = {0.5, 1.0, 2.0, 3.0};
      const auto sol = solve_log_laplace_deterministic(GridFunction<double>(grid, k), 4.0, 1e-4, opt);
      for (std::size_t i = 0; i < sol.times.size(); ++i)
        CHECK((sol.slices[i].values() - logistic_closed_form(sol.times[i], k)).abs().maxCoeff() < 1e-6);
      // mass series: non-increasing, closed form, exact at t = 0
      const auto mass = total_mass_series(sol);
      CHECK(mass.front() == doctest::Approx(k * grid.volume()).epsilon(1e-15));
      for (std::size_t i = 1; i < mass.size(); ++i) {
        CHECK(mass[i] <= mass[i - 1]);
        CHECK(mass[i] == doctest::Approx(grid.volume() * logistic_closed_form(sol.times[i], k)).epsilon(1e-6));
      }
    }
  }
  SUBCASE("small lambda linearises to lambda v") {
    const double lambda = 1e-3;
    const auto u = solve_log_laplace(f, lambda, 1.0, noise).back();
    const auto v = solve_pam(f, 1.0, noise).back();
    CHECK(sup_norm((1.0 / lambda) * u - v) / sup_norm(v) < 1e-2);
  }
}

TEST_CASE("comparison and sandwich on shared noise") {
  const Grid grid(1, 64, 8.0);
  const auto f = bump(grid);
  const auto field = std::make_shared<const NoiseField>(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-3);
  SolveOptions opt;
  opt.save_times = {0.25, 0.5, 0.75};
  for (std::uint64_t r = 0; r < 5; ++r) {
    const NoisePath noise(field, r);
    for (double lambda : {0.0, 0.5, 1.0}) {
      const auto pair = derivative_quotient(f, lambda, 0.1, 1.0, noise, opt);
      for (std::size_t i = 0; i < pair.lower.slices.size(); ++i) {
        const auto& u = pair.lower.slices[i].values();
        CHECK(u.minCoeff() >= 0.0);
        CHECK((u - lambda * pair.linear.slices[i].values()).maxCoeff() <= 1e-12);
        CHECK((u - pair.upper.slices[i].values()).maxCoeff() <= 1e-12);
        CHECK(pair.quotient.slices[i].values().minCoeff() >= -1e-12);
        CHECK((pair.linear.slices[i].values() - pair.quotient.slices[i].values()).minCoeff() >= -1e-12);
      }
    }
  }
}

TEST_CASE("difference quotient at lambda = 0 increases to v as delta shrinks") {
  const Grid grid(1, 64, 8.0);
  const auto f = bump(grid);
  const NoisePath noise = NoisePath::make(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-3, 2);
  std::vector<double> distance;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    const auto pair = derivative_quotient(f, 0.0, delta, 1.0, noise);
    distance.push_back(l2_norm(pair.linear.back() - pair.quotient.back()));
    CHECK((pair.linear.back().values() - pair.quotient.back().values()).minCoeff() >= -1e-12);
  }
  CHECK(distance[1] < distance[0]);
  CHECK(distance[2] < distance[1]);
}

TEST_CASE("noise-off difference quotient matches the closed form") {
  const Grid grid(1, 16, 4.0);
  const NoisePath silent = NoisePath::make(CovarianceKernel::constant(1, 0.0), grid, 1e-4, 1);
  const double k = 2.0, lambda = 0.5, delta = 0.1, t = 1.0;
  const auto pair = derivative_quotient(GridFunction<double>(grid, k), lambda, delta, t, silent);
  const double exact =
      (logistic_closed_form(t, (lambda + delta) * k) - logistic_closed_form(t, lambda * k)) / delta;
  CHECK((pair.quotient.back().values() - exact).abs().maxCoeff() < 1e-8);
}

TEST_CASE("Stratonovich solution") {
  const Grid grid(1, 64, 8.0);
  SUBCASE("a = 0 is the heat flow") {
    const auto f = bump(grid);
    const NoisePath silent = NoisePath::make(CovarianceKernel::scaled_theta(1, 0.0), grid, 1e-3, 1);
    CHECK(sup_norm(solve_stratonovich_direct(f, 1.0, silent).back() - apply_heat_semigroup(f, 1.0)) < 1e-8);
    CHECK(sup_norm(solve_stratonovich_pam(f, 1.0, silent).back() - apply_heat_semigroup(f, 1.0)) < 1e-8);
  }
  SUBCASE("direct scheme agrees with the Ito identity") {
    const NoisePath noise = NoisePath::make(CovarianceKernel::scaled_theta(1, 1.0), grid, 1e-4, 4);
    const GridFunction<double> one(grid, 1.0);
    CHECK(relative_sup_difference(solve_stratonovich_direct(one, 1.0, noise), solve_stratonovich_pam(one, 1.0, noise)) <
          1e-3);
  }
  SUBCASE("requires a scaled-theta kernel") {
    const NoisePath noise = NoisePath::make(CovarianceKernel::constant(1, 1.0), grid, 1e-3, 1);
    CHECK_THROWS_AS(solve_stratonovich_pam(GridFunction<double>(grid, 1.0), 1.0, noise), std::invalid_argument);
  }
  SUBCASE("mean is e^{a t / 2} P_t f") {
    const Grid small(1, 32, 8.0);
    const auto f = bump(small);
    const double a = 1.0, t = 1.0;
    const auto field = std::make_shared<const NoiseField>(CovarianceKernel::scaled_theta(1, a), small, 1e-3);
    const Eigen::Index probe = small.nearest(Eigen::VectorXd::Zero(1));
    std::vector<double> samples(400);
    for (std::size_t r = 0; r < samples.size(); ++r)
      samples[r] = solve_stratonovich_pam(f, t, NoisePath(field, r)).back()[probe];
    const Estimate e = summarize(samples);
    CHECK(std::abs(e.mean - std::exp(0.5 * a * t) * apply_heat_semigroup(f, t)[probe]) <= 3.0 * e.se);
  }
}

TEST_CASE("non-finite blow-up is reported with its step") {
  const Grid grid(1, 8, 1.0);
  const NoisePath noise = NoisePath::make(CovarianceKernel::constant(1, 1.0), grid, 1e-3, 1);
  GridFunction<double> f(grid, 1.0);
  f[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(solve_pam(f, 0.01, noise), NonFiniteSolution);
}

TEST_CASE("readouts") {
  const auto r = parse_readout("gaussian_bump(0.5, 2)", 1);
  CHECK(r(Eigen::VectorXd::Constant(1, 0.5)) == 1.0);
  // Laplacian of exp(-x^2/(2w^2)) checked by central differences
  const double h = 1e-4;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.3), xp = x, xm = x;
  xp[0] += h;
  xm[0] -= h;
  CHECK(r.laplacian(x) == doctest::Approx((r(xp) - 2.0 * r(x) + r(xm)) / (h * h)).epsilon(1e-5));
  CHECK(!parse_readout("indicator_ball(1)", 2).has_laplacian());
  CHECK(parse_readout("constant(3)", 3)(Eigen::VectorXd::Zero(3)) == 3.0);
  CHECK(parse_readout_catalog("constant(1); gaussian_bump(0, 0, 1), indicator_ball(2)", 2).size() == 3);
  CHECK_THROWS(parse_readout("sinc(1)", 1));
  CHECK_THROWS(parse_readout("gaussian_bump(0, 1)", 2));
}

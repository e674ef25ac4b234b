#include "sbmre/heatkernel.hpp"
#include "sbmre/particles.hpp"
#include "sbmre/feynmankac.hpp"
#include "sbmre/readout.hpp"
#include "sbmre/stats.hpp"

#include <doctest.h>

#include <cmath>

using namespace sbmre;

namespace {

BranchingConfig config_1d(int n, double c, double horizon, int particles_per_unit = -1) {
  BranchingConfig bc;
  bc.n = n;
  bc.kernel = CovarianceKernel::constant(1, c);
  bc.initial = BranchingConfig::point_mass(Eigen::VectorXd::Zero(1), 1.0, particles_per_unit > 0 ? particles_per_unit : n);
  bc.horizon = horizon;
  return bc;
}

}  // namespace

TEST_CASE("point mass holds round(mass * n) particles") {
  CHECK(BranchingConfig::point_mass(Eigen::VectorXd::Zero(2), 1.0, 50).cols() == 50);
  CHECK(BranchingConfig::point_mass(Eigen::VectorXd::Zero(2), 0.5, 50).cols() == 25);
  CHECK_THROWS(BranchingConfig::point_mass(Eigen::VectorXd::Zero(2), -1.0, 50));
}

TEST_CASE("T = 0 returns the initial population") {
  const auto bc = config_1d(20, 1.0, 1.0);
  Rng rng(1);
  const auto snaps = run(bc, {0.0}, rng);
  REQUIRE(snaps.size() == 1);
  CHECK(snaps[0].count() == 20);
  CHECK(snaps[0].mass() == 1.0);
  CHECK(snaps[0].positions() == bc.initial);
}

TEST_CASE("zero field: split probability one half") {
  const auto bc = config_1d(50, 0.0, 1.0);
  const FixedEnvironment zero([](const Eigen::VectorXd&) { return 0.0; });
  Rng rng(2);
  std::size_t splits = 0, trials = 0;
  ParticlePopulation pop(bc.n, Eigen::MatrixXd::Zero(1, 2000));
  for (int e = 0; e < 20; ++e) {
    EpochStats stats;
    step_epoch(pop, bc, zero, rng, &stats);
    splits += stats.splits;
    trials += stats.splits + stats.deaths;
  }
  const auto w = wilson_interval(splits, trials, 3.0);
  CHECK(w.lower <= 0.5);
  CHECK(w.upper >= 0.5);
}

TEST_CASE("maximal field: every particle splits, K 2^{floor(t n)}") {
  auto bc = config_1d(4, 1.0, 1.0, 3);
  const FixedEnvironment top([](const Eigen::VectorXd&) { return 1e9; });  // truncated to sqrt(n)
  Rng rng(3);
  const auto snaps = run(bc, {0.5, 1.0}, rng, &top);
  CHECK(snaps[0].count() == 3 * 4);
  CHECK(snaps[1].count() == 3 * 16);
}

TEST_CASE("population cap is enforced") {
  auto bc = config_1d(10, 1.0, 1.0, 10);
  bc.max_population = 100;
  const FixedEnvironment top([](const Eigen::VectorXd&) { return 1e9; });
  Rng rng(4);
  CHECK_THROWS_AS(run(bc, {1.0}, rng, &top), PopulationCapExceeded);
}

TEST_CASE("single particle, Constant(1): split frequency one half") {
  const auto bc = config_1d(25, 1.0, 1.0);
  const GaussianEnvironment env(bc.kernel);
  Rng rng(5);
  const int trials = 100000;
  std::vector<double> split(trials);
  const ParticlePopulation one(bc.n, Eigen::MatrixXd::Zero(1, 1));
  for (int i = 0; i < trials; ++i) {
    EpochStats stats;
    step_epoch(one, bc, env, rng, &stats);
    split[static_cast<std::size_t>(i)] = static_cast<double>(stats.splits);
  }
  const Estimate e = summarize(split);
  CHECK(std::abs(e.mean - 0.5) <= 3.0 * e.se);
}

TEST_CASE("truncation") {
  CHECK(truncate_field(10.0, 4) == 2.0);
  CHECK(truncate_field(-10.0, 4) == -2.0);
  CHECK(truncate_field(0.3, 4) == 0.3);
}

TEST_CASE("Gaussian environment: coincident positions share one value") {
  const GaussianEnvironment env(CovarianceKernel::scaled_theta(1, 1.0));
  Eigen::MatrixXd pos(1, 4);
  pos << 0.0, 1.0, 0.0, 1.0;
  Rng rng(6);
  const auto xi = env.sample(pos, rng);
  CHECK(xi[0] == xi[2]);
  CHECK(xi[1] == xi[3]);
  CHECK(xi[0] != xi[1]);
}

TEST_CASE("empirical pairing") {
  const auto f = [](const Eigen::VectorXd& x) { return 1.0 + x[0]; };
  const ParticlePopulation empty(10, Eigen::MatrixXd(1, 0));
  CHECK(empirical_pairing(empty, f).first == 0.0);
  CHECK(empirical_pairing(empty, f).second == 0.0);
  const ParticlePopulation one(10, Eigen::MatrixXd::Constant(1, 1, 2.0));
  CHECK(empirical_pairing(one, f).first == doctest::Approx(0.3));
  CHECK(empirical_pairing(one, f).second == doctest::Approx(0.09));
  const ParticlePopulation two(10, Eigen::MatrixXd::Zero(1, 2));
  const auto unit = [](const Eigen::VectorXd&) { return 1.0; };
  CHECK(empirical_pairing(two, unit).first == doctest::Approx(0.2));
  CHECK(empirical_pairing(two, unit).second == doctest::Approx(0.04));
}

TEST_CASE("critical branching preserves expected mass") {
  const auto bc = config_1d(50, 0.0, 1.0);
  const std::size_t replicas = 1000;
  std::vector<double> mass(replicas);
  for (std::size_t r = 0; r < replicas; ++r) {
    Rng rng(derive_seed(8, r));
    mass[r] = run(bc, {1.0}, rng).back().mass();
  }
  const Estimate e = summarize(mass);
  CHECK(std::abs(e.mean - 1.0) <= 3.0 * e.se);
}

TEST_CASE("mean measure is P_t f paired with the initial measure") {
  const auto bc = config_1d(100, 1.0, 1.0);
  const Readout f = gaussian_bump(Eigen::VectorXd::Constant(1, 0.5), 1.0);
  const std::size_t replicas = 1000;
  std::vector<double> pairing(replicas);
  for (std::size_t r = 0; r < replicas; ++r) {
    Rng rng(derive_seed(9, r));
    pairing[r] = empirical_pairing(run(bc, {1.0}, rng).back(), f.f).first;
  }
  const Estimate e = summarize(pairing);
  const double expected = heat_expectation(f.f, Eigen::VectorXd::Zero(1), 1.0);
  CHECK(std::abs(e.mean - expected) <= 3.0 * e.se);
}

TEST_CASE("martingale residual") {
  SUBCASE("f = 0 gives an identically zero residual") {
    auto bc = config_1d(20, 1.0, 0.5);
    Rng rng(10);
    std::vector<double> every;
    for (int e = 0; e <= 10; ++e) every.push_back(e / 20.0);
    Readout zero = gaussian_bump(Eigen::VectorXd::Zero(1), 1.0);
    zero.f = [](const Eigen::VectorXd&) { return 0.0; };
    zero.laplacian = zero.f;
    const auto m = martingale_residual(run(bc, every, rng), zero, bc.kernel);
    for (double r : m.residual) CHECK(r == 0.0);
  }
  SUBCASE("c = 0: variance is the int <f^2, X> term alone") {
    auto bc = config_1d(20, 0.0, 0.5);
    Rng rng(11);
    std::vector<double> every;
    for (int e = 0; e <= 10; ++e) every.push_back(e / 20.0);
    const auto traj = run(bc, every, rng);
    const Readout f = gaussian_bump(Eigen::VectorXd::Zero(1), 1.0);
    const auto m = martingale_residual(traj, f, bc.kernel);
    double qv = 0.0;
    for (std::size_t i = 1; i < traj.size(); ++i) {
      auto sq = [&](const ParticlePopulation& p) {
        return empirical_pairing(p, [&](const Eigen::VectorXd& x) { return f(x) * f(x); }).first;
      };
      qv += 0.5 * (traj[i].time() - traj[i - 1].time()) * (sq(traj[i]) + sq(traj[i - 1]));
    }
    CHECK(m.quadratic_variation.back() == doctest::Approx(qv).epsilon(1e-12));
  }
  SUBCASE("readout without a Laplacian is rejected") {
    auto bc = config_1d(20, 0.0, 0.5);
    Rng rng(12);
    CHECK_THROWS_AS(martingale_residual(run(bc, {0.0, 0.5}, rng), indicator_ball(Eigen::VectorXd::Zero(1), 1.0), bc.kernel),
                    std::invalid_argument);
  }
}

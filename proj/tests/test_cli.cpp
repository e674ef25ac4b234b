#include "sbmre/config.hpp"
#include "sbmre/experiments.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

using namespace sbmre;
namespace fs = std::filesystem;

namespace {

const char* kThreshold = R"(
[experiment]
name = threshold-table
seed = 3
[kernel]
variant = power
epsilon = 0.05
alpha = 3
[readout]
catalog = constant(1)
)";

// moments-triangle at a size that runs in a few seconds
const char* kSmallTriangle = R"(
[experiment]
name = moments-triangle
seed = 5
[kernel]
variant = constant
c = 1
[grid]
d = 1
L = 1
cells = 8
[scheme]
dt = 1e-2
[mc]
replicas = 200
paths = 200
[model]
n = 20
spde_replicas = 50
delta = 1e-2
residual_n = 20
residual_replicas = 50
residual_times = 0.5, 1
[readout]
catalog = constant(1); gaussian_bump(1)
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("sbmre_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& name, const std::string& content) const {
    std::ofstream(path / name) << content;
    return path / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(SBMRE_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and typed getters") {
  const auto cfg = ExperimentConfig::parse(kSmallTriangle);
  CHECK(cfg.experiment() == "moments-triangle");
  CHECK(cfg.seed() == 5);
  CHECK(cfg.number("scheme.dt") == 1e-2);
  CHECK(cfg.integer("model.n", 0) == 20);
  CHECK(cfg.list("model.residual_times", {}) == std::vector<double>{0.5, 1.0});
  CHECK(cfg.grid() == Grid(1, 8, 1.0));
  CHECK(cfg.readouts().size() == 2);
  CHECK(cfg.kernel().is_constant());
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("validation errors") {
  auto invalid = [](const std::string& text) { return ExperimentConfig::parse(text); };
  SUBCASE("empty readout catalog") {
    CHECK_THROWS_AS(invalid("[experiment]\nname = threshold-table\n[readout]\ncatalog =\n").validate(), ConfigError);
    CHECK_THROWS_AS(invalid("[experiment]\nname = threshold-table\n").validate(), ConfigError);
  }
  SUBCASE("unknown experiment") {
    CHECK_THROWS_AS(invalid("[experiment]\nname = nope\n[readout]\ncatalog = constant(1)\n").validate(), ConfigError);
  }
  SUBCASE("non-positive numeric fields") {
    CHECK_THROWS_AS(
        invalid("[experiment]\nname = pam-oracle\n[scheme]\ndt = -1\n[readout]\ncatalog = constant(1)\n").validate(),
        ConfigError);
    CHECK_THROWS_AS(
        invalid("[experiment]\nname = pam-oracle\n[grid]\ncells = 0\n[readout]\ncatalog = constant(1)\n").validate(),
        ConfigError);
    CHECK_THROWS_AS(
        invalid("[experiment]\nname = pam-oracle\n[mc]\nreplicas = abc\n[readout]\ncatalog = constant(1)\n").validate(),
        ConfigError);
  }
  SUBCASE("bad kernel") {
    CHECK_THROWS_AS(invalid("[experiment]\nname = pam-oracle\n[kernel]\nvariant = constant\nc = -1\n[readout]\n"
                            "catalog = constant(1)\n")
                        .validate(),
                    ConfigError);
    CHECK_THROWS_AS(invalid("[experiment]\nname = pam-oracle\n[kernel]\nvariant = wavelet\n[readout]\n"
                            "catalog = constant(1)\n")
                        .validate(),
                    ConfigError);
  }
}

TEST_CASE("config hash") {
  const auto a = ExperimentConfig::parse(kThreshold);
  CHECK(a.hash(1) == a.hash(1));
  CHECK(a.hash(1) != a.hash(2));
  CHECK(a.hash(1).size() == 16);
  // key order and whitespace do not matter; values do
  const auto reordered = ExperimentConfig::parse(
      "[readout]\ncatalog = constant(1)\n[kernel]\nalpha = 3\nepsilon =   0.05\nvariant = power\n"
      "[experiment]\nseed = 99\nname = threshold-table\n");
  CHECK(reordered.hash(1) == a.hash(1));
  const auto edited = ExperimentConfig::parse(std::string(kThreshold) + "[model]\nkernel_d = 4\n");
  CHECK(edited.hash(1) != a.hash(1));
}

TEST_CASE("threshold-table report") {
  RunContext ctx;
  const auto out = run_experiment(ExperimentConfig::parse(kThreshold), ctx);
  CHECK(out.report.all_pass());
  for (const char* check : {"threshold_d3", "threshold_d4", "threshold_d5"}) REQUIRE(out.report.find(check) != nullptr);
  CHECK(out.report.find("threshold_d4")->estimate == doctest::Approx(2.4674011003).epsilon(1e-10));
  const std::string csv = report_csv(out.report);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "config_hash,experiment,check,estimate,reference,se,tolerance,pass");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line.rfind(out.report.config_hash + ",threshold-table,", 0) == 0);
    ++rows;
  }
  CHECK(rows == out.report.rows.size());
}

TEST_CASE("unknown model part is a config error") {
  const auto cfg = ExperimentConfig::parse(
      std::regex_replace(std::string(kSmallTriangle), std::regex("\\[model\\]\n"), "[model]\nparts = particles, nonsense\n"));
  CHECK_THROWS_AS(run_experiment(cfg, {}), ConfigError);
}

TEST_CASE("replay") {
  TempDir dir("replay");
  SUBCASE("threshold-table replays to identical bytes") {
    const auto path = dir.write("t.ini", kThreshold);
    const auto cfg = ExperimentConfig::load(path);
    RunContext ctx{3, 1};
    const auto written = write_run(run_experiment(cfg, ctx), cfg, ctx, dir.path);
    const auto result = replay(written.manifest);
    CHECK(!result.refused);
    CHECK(result.identical);
    CHECK(report_csv(result.output.report) == slurp(written.csv));
  }
  SUBCASE("an edited config is refused") {
    const auto path = dir.write("t.ini", kThreshold);
    const auto cfg = ExperimentConfig::load(path);
    RunContext ctx{3, 1};
    const auto written = write_run(run_experiment(cfg, ctx), cfg, ctx, dir.path);
    dir.write("t.ini", std::string(kThreshold) + "[model]\nkernel_d = 4\n");
    const auto result = replay(written.manifest);
    CHECK(result.refused);
    CHECK(result.message.find("hash mismatch") != std::string::npos);
  }
  SUBCASE("a different program version is refused") {
    const auto path = dir.write("t.ini", kThreshold);
    const auto cfg = ExperimentConfig::load(path);
    RunContext ctx{3, 1};
    const auto written = write_run(run_experiment(cfg, ctx), cfg, ctx, dir.path);
    std::string manifest = slurp(written.manifest);
    manifest.replace(manifest.find(kVersion), std::string(kVersion).size(), "0.0.1");
    std::ofstream(written.manifest) << manifest;
    const auto result = replay(written.manifest);
    CHECK(result.refused);
    CHECK(result.message.find("version") != std::string::npos);
  }
  SUBCASE("moments-triangle: same estimates with 1 and 4 workers") {
    const auto path = dir.write("m.ini", kSmallTriangle);
    const auto cfg = ExperimentConfig::load(path);
    RunContext ctx{5, 1};
    const auto first = run_experiment(cfg, ctx);
    const auto written = write_run(first, cfg, ctx, dir.path);
    const auto result = replay(written.manifest, 4u);
    CHECK(result.identical);
    REQUIRE(result.output.report.rows.size() == first.report.rows.size());
    for (std::size_t i = 0; i < first.report.rows.size(); ++i)
      CHECK(result.output.report.rows[i].estimate == first.report.rows[i].estimate);
    CHECK(fs::exists(dir.path / "moments-triangle.snapshots.csv"));
    CHECK(fs::exists(dir.path / "moments-triangle.fk.csv"));
  }
}

TEST_CASE("command line") {
  TempDir dir("cli");
  const auto good = dir.write("t.ini", kThreshold);
  const std::string out = " --out " + dir.path.string();
  CHECK(run_cli("threshold-table --config " + good.string() + out) == 0);
  CHECK(fs::exists(dir.path / "threshold-table.csv"));
  CHECK(run_cli("replay --manifest " + (dir.path / "threshold-table.manifest").string()) == 0);
  CHECK(run_cli("validate --config " + good.string()) == 0);

  const auto bad = dir.write("bad.ini", "[experiment]\nname = threshold-table\n[readout]\ncatalog =\n");
  CHECK(run_cli("validate --config " + bad.string()) == 2);
  CHECK(run_cli("threshold-table --config " + bad.string() + out) == 2);
  // experiment name in the file must match the subcommand
  CHECK(run_cli("pam-oracle --config " + good.string() + out) == 2);

  // a coarse step makes the Stratonovich identity check fail: exit 1
  const auto failing = dir.write("f.ini",
                                 "[experiment]\nname = comparison-suite\n[kernel]\nvariant = scaled_theta\na = 4\n"
                                 "[grid]\ncells = 16\n[model]\nparts = stratonovich\nstrat_dt = 0.05\n"
                                 "[readout]\ncatalog = constant(1)\n");
  CHECK(run_cli("comparison-suite --config " + failing.string() + out) == 1);

  // environment overrides change the recorded seed
  CHECK(std::system(("SBMRE_SEED=11 " + std::string(SBMRE_CLI_PATH) + " threshold-table --config " + good.string() + out +
                     " > /dev/null 2>&1")
                        .c_str()) == 0);
  CHECK(slurp(dir.path / "threshold-table.manifest").find("seed=11\n") != std::string::npos);
  CHECK(std::system(("SBMRE_WORKERS=3 " + std::string(SBMRE_CLI_PATH) + " threshold-table --config " + good.string() +
                     " --seed 12" + out + " > /dev/null 2>&1")
                        .c_str()) == 0);
  const std::string manifest = slurp(dir.path / "threshold-table.manifest");
  CHECK(manifest.find("seed=12\n") != std::string::npos);
  CHECK(manifest.find("workers=3\n") != std::string::npos);
}

TEST_CASE("shipped configs validate") {
  for (const auto& entry : fs::directory_iterator(SBMRE_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(ExperimentConfig::load(entry.path()).validate());
  }
}

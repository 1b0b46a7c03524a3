#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tamd/config.hpp"

namespace fs = std::filesystem;
using Catch::Approx;

namespace {

struct Result {
  int code;
  std::string output;
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tamd_cli_" + std::to_string(getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Result run(const std::string& args, const std::string& env = "") {
  const auto log = fs::temp_directory_path() / ("tamd_cli_" + std::to_string(getpid()) + ".log");
  const std::string cmd = env + " " + TAMD_LAB_EXE + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path write(const fs::path& dir, const std::string& name, const std::string& text) {
  std::ofstream(dir / name) << text;
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> r;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) r.push_back(cell);
    rows.push_back(r);
  }
  return rows;
}

const std::string cfg = TAMD_CONFIG_DIR;

const char* small_sample = R"([potential]
kind = tilted
[params]
beta = 4
beta_bar = 1
delta = 0.2
dt = 1e-3
n_steps = 20000
stride = 10
seed = 3
replicas = 2
[experiment]
kind = sample
observables = cos_z, cos_q
output = s
)";

}  // namespace

TEST_CASE("fe on the separable example") {
  const auto out = scratch("fe");
  const auto r = run(cfg + "/fe_separable.ini --output-dir " + out.string());
  REQUIRE(r.code == 0);
  const auto rows = csv(out / "fe_separable_profile.csv");
  REQUIRE(rows.size() == 65);
  CHECK(rows[0] == std::vector<std::string>{"z", "A", "A1", "A2", "Z"});
  const double shift = std::log(boost::math::cyl_bessel_i(0, 1.0));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double z = std::stod(rows[i][0]), A = std::stod(rows[i][1]);
    CHECK(A == Approx(std::cos(2 * std::numbers::pi * z) + 0.23590).margin(2e-5));
    CHECK(A == Approx(std::cos(2 * std::numbers::pi * z) + shift).margin(1e-10));
  }
}

TEST_CASE("sweep reports the h_err slope in its trailer") {
  const auto out = scratch("sweep");
  const auto r = run(cfg + "/sweep.ini --output-dir " + out.string());
  REQUIRE(r.code == 0);
  const auto rows = csv(out / "sweep_sweep.csv");
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == std::vector<std::string>{"delta", "gap", "lambda_ref", "h_err", "var_delta", "var_ref"});
  REQUIRE(rows[5][0] == "slope");
  REQUIRE(rows[6][0] == "r2");
  const double slope = std::stod(rows[5][3]);
  CHECK(slope >= 1.7);
  CHECK(slope <= 2.3);
  CHECK(std::stod(rows[6][3]) >= 0.98);
}

TEST_CASE("misspelled key fails before any output") {
  const auto out = scratch("betta");
  const auto bad = write(out, "bad.ini", "[params]\nbetta = 2\n[experiment]\nkind = fe\noutput = x\n");
  const auto r = run(bad.string() + " --output-dir " + (out / "results").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("betta") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "results"));
}

TEST_CASE("exit codes separate config, guard and usage errors") {
  const auto out = scratch("codes");
  const auto unknown = write(out, "a.ini", "[nonsense]\nx = 1\n");
  CHECK(run(unknown.string()).code == 2);
  CHECK(run((out / "missing.ini").string()).code == 2);

  std::string stiff = small_sample;
  stiff.replace(stiff.find("delta = 0.2"), 11, "delta = 0.001");
  const auto s = write(out, "stiff.ini", stiff);
  const auto r = run(s.string() + " --output-dir " + out.string());
  CHECK(r.code == 3);
  CHECK(r.output.find("dt/delta") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "s_stats.csv"));

  std::string big = "[grid]\nn_q = 256\nn_z = 128\n[experiment]\nkind = fpe\n";
  CHECK(run(write(out, "big.ini", big).string() + " --dry-run").code == 3);
}

TEST_CASE("dry run prints the plan and writes nothing") {
  const auto out = scratch("dry");
  const auto r = run(cfg + "/fpe.ini --dry-run --output-dir " + (out / "x").string());
  REQUIRE(r.code == 0);
  CHECK(r.output.find("32 x 32") != std::string::npos);
  CHECK(r.output.find("tolerances") != std::string::npos);
  CHECK(r.output.find("fpe_density.csv: q, z, value") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "x"));
}

TEST_CASE("dry run warns about unused keys") {
  const auto out = scratch("warn");
  const auto c = write(out, "fe.ini", "[params]\ndelta_list = 0.1, 0.05\n[experiment]\nkind = fe\n");
  const auto r = run(c.string() + " --dry-run");
  REQUIRE(r.code == 0);
  CHECK(r.output.find("warning: params.delta_list is unused by kind=fe") != std::string::npos);
}

TEST_CASE("dry run echoes every default") {
  const auto out = scratch("defaults");
  const auto c = write(out, "min.ini", "[experiment]\nkind = fe\n");
  const auto r = run(c.string() + " --dry-run");
  REQUIRE(r.code == 0);
  std::size_t defaults = 0;
  for (std::size_t p = r.output.find("(default)"); p != std::string::npos; p = r.output.find("(default)", p + 1))
    ++defaults;
  CHECK(defaults == tamd::detail::key_table().size() - 1);
  for (const auto& ks : tamd::detail::key_table())
    CHECK(r.output.find("  " + ks.key + " = ") != std::string::npos);
}

TEST_CASE("reruns are byte-identical and the seed can be overridden") {
  const auto out = scratch("repro");
  const auto c = write(out, "s.ini", small_sample);
  REQUIRE(run(c.string() + " --output-dir " + (out / "a").string() + " --threads 2 --include-q").code == 0);
  REQUIRE(run(c.string() + " --output-dir " + (out / "b").string() + " --include-q").code == 0);
  for (const char* f : {"s_trajectory_0.csv", "s_trajectory_1.csv", "s_stats.csv", "s_histogram_z.csv"})
    CHECK(slurp(out / "a" / f) == slurp(out / "b" / f));
  CHECK(csv(out / "a" / "s_trajectory_0.csv")[0] ==
        std::vector<std::string>{"t", "z", "q", "obs_cos_z", "obs_cos_q"});
  CHECK(csv(out / "a" / "s_stats.csv")[0] ==
        std::vector<std::string>{"observable", "mean", "se", "batch_variance", "iat", "n_effective"});

  REQUIRE(run(c.string() + " --output-dir " + (out / "c").string() + " --include-q", "TAMD_LAB_SEED=99").code == 0);
  CHECK(slurp(out / "a" / "s_trajectory_0.csv") != slurp(out / "c" / "s_trajectory_0.csv"));
  const auto dry = run(c.string() + " --dry-run", "TAMD_LAB_SEED=99");
  CHECK(dry.output.find("seed = 99") != std::string::npos);
  CHECK(run(c.string() + " --dry-run", "TAMD_LAB_SEED=abc").code == 2);
}

TEST_CASE("config parsing") {
  std::istringstream ok("# comment\n[potential]\nkind = separable\nv_cos = 1, 0.5\n[experiment]\nkind = fe\n"
                        "observables = mixed(0.5, 1), cos_z\n");
  const auto c = tamd::parse_config(ok);
  CHECK(c.v_cos == std::vector<double>{1.0, 0.5});
  CHECK(c.observables == std::vector<std::string>{"mixed(0.5, 1)", "cos_z"});

  std::istringstream nokind("[params]\nbeta = 1\n");
  CHECK_THROWS_AS(tamd::parse_config(nokind), tamd::ConfigError);
  std::istringstream badnum("[params]\nbeta = abc\n[experiment]\nkind = fe\n");
  CHECK_THROWS_WITH(tamd::parse_config(badnum), Catch::Matchers::ContainsSubstring("beta"));
  std::istringstream badobs("[experiment]\nkind = sample\nobservables = cos_w\n");
  CHECK_THROWS_AS(tamd::parse_config(badobs), tamd::ConfigError);
}

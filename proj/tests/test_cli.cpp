#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

// End-to-end checks against the installed binary. Every invocation goes
// through std::system so the exit-code contract is tested as users see it.

namespace fs = std::filesystem;

namespace {

const std::string kBin = HUMCTL_BIN;
const std::string kConfigs = HUMCTL_CONFIG_DIR;

int run(const std::string& args) {
  const int rc = std::system((kBin + " " + args).c_str());
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::path("cli_scratch") / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const {
    return (path / leaf).string();
  }
};

nlohmann::json patched_baseline(const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json cfg;
  std::ifstream in(kConfigs + "/baseline.json");
  in >> cfg;
  edit(cfg);
  return cfg;
}

std::string write_config(const TempDir& dir, const std::string& name,
                         const nlohmann::json& cfg) {
  const std::string path = dir / name;
  std::ofstream out(path);
  out << cfg.dump(2);
  return path;
}

}  // namespace

TEST_CASE("control writes its outputs and exits 0", "[cli]") {
  TempDir dir("control");
  REQUIRE(run("control --config " + kConfigs + "/baseline.json --out " + (dir / "o") +
              " > " + (dir / "stdout.txt")) == 0);

  const std::string csv = slurp(dir.path / "o" / "control.csv");
  REQUIRE(csv.rfind("t,x,field,value\n", 0) == 0);
  REQUIRE(csv.find(",f,") != std::string::npos);

  const auto j = nlohmann::ordered_json::parse(slurp(dir.path / "o" / "control.json"));
  const std::vector<std::string> expected = {
      "epsilon",       "delta",           "mode",
      "control_norm_l2", "control_norm_lq", "q",
      "terminal_v_norm", "terminal_ue_norm", "bound_ratio",
      "iterations",    "converged"};
  std::vector<std::string> keys;
  for (const auto& item : j.items()) keys.push_back(item.key());
  REQUIRE(keys == expected);
  REQUIRE(j["converged"].get<bool>());
  REQUIRE(j["epsilon"].get<double>() == 0.01);
}

TEST_CASE("forward and adjoint write long-format trajectories", "[cli]") {
  TempDir dir("traj");
  REQUIRE(run("forward --config " + kConfigs + "/baseline.json --out " + (dir / "f") +
              " > /dev/null") == 0);
  const std::string fwd = slurp(dir.path / "f" / "trajectory.csv");
  REQUIRE(fwd.rfind("t,x,field,value\n", 0) == 0);
  REQUIRE(fwd.find(",v,") != std::string::npos);
  REQUIRE(fwd.find(",ue,") != std::string::npos);

  REQUIRE(run("adjoint --config " + kConfigs + "/baseline.json --out " + (dir / "a") +
              " > /dev/null") == 0);
  const std::string adj = slurp(dir.path / "a" / "adjoint.csv");
  REQUIRE(adj.find(",phi,") != std::string::npos);
  REQUIRE(adj.find(",phi_e,") != std::string::npos);
}

TEST_CASE("unknown subcommand prints usage on stderr and exits 1", "[cli]") {
  TempDir dir("usage");
  REQUIRE(run("frobnicate > " + (dir / "out.txt") + " 2> " + (dir / "err.txt")) == 1);
  REQUIRE(slurp(dir.path / "out.txt").empty());
  const std::string err = slurp(dir.path / "err.txt");
  REQUIRE(err.find("Usage:") != std::string::npos);
  REQUIRE(err.find("SUBCOMMAND") != std::string::npos);
}

TEST_CASE("config errors exit 1 and name the offending key", "[cli]") {
  TempDir dir("badcfg");
  const std::string bad = write_config(dir, "bad.json", patched_baseline([](auto& c) {
                                         c["physics"]["epsilon"] = -1.0;
                                       }));
  REQUIRE(run("control --config " + bad + " --out " + (dir / "o") + " 2> " +
              (dir / "err.txt")) == 1);
  REQUIRE(slurp(dir.path / "err.txt").find("/physics/epsilon") != std::string::npos);

  REQUIRE(run("control --config " + (dir / "missing.json") + " 2> /dev/null") == 1);
}

TEST_CASE("non-convergence exits 2 but still writes reports", "[cli]") {
  TempDir dir("stall");
  const std::string cfg = write_config(dir, "stall.json", patched_baseline([](auto& c) {
                                         c["hum"]["max_iters"] = 3;
                                       }));
  REQUIRE(run("control --config " + cfg + " --out " + (dir / "c") + " > /dev/null") == 2);
  const auto j = nlohmann::json::parse(slurp(dir.path / "c" / "control.json"));
  REQUIRE_FALSE(j["converged"].get<bool>());

  // a sweep whose rows exhaust the budget reports the flags and exits 2
  REQUIRE(run("sweep --config " + cfg + " --out " + (dir / "s") + " > /dev/null") == 2);
  const std::string csv = slurp(dir.path / "s" / "sweep.csv");
  REQUIRE(csv.find("false") != std::string::npos);
}

TEST_CASE("nonlinear-control demands a configured reaction", "[cli]") {
  TempDir dir("rx");
  REQUIRE(run("nonlinear-control --config " + kConfigs + "/baseline.json --out " +
              (dir / "o") + " 2> " + (dir / "err.txt")) == 1);
  REQUIRE(slurp(dir.path / "err.txt").find("/reaction/type") != std::string::npos);

  REQUIRE(run("nonlinear-control --config " + kConfigs + "/nonlinear.json --out " +
              (dir / "nl") + " > /dev/null") == 0);
  const auto j = nlohmann::json::parse(slurp(dir.path / "nl" / "nonlinear.json"));
  REQUIRE(j["outer_converged"].get<bool>());
}

TEST_CASE("outputs are bit-identical across reruns and job counts", "[cli]") {
  TempDir dir("repro");
  REQUIRE(run("control --config " + kConfigs + "/baseline.json --out " + (dir / "r1") +
              " > /dev/null") == 0);
  REQUIRE(run("control --config " + kConfigs + "/baseline.json --out " + (dir / "r2") +
              " > /dev/null") == 0);
  REQUIRE(slurp(dir.path / "r1" / "control.csv") == slurp(dir.path / "r2" / "control.csv"));
  REQUIRE(slurp(dir.path / "r1" / "control.json") ==
          slurp(dir.path / "r2" / "control.json"));

  REQUIRE(run("sweep --config " + kConfigs + "/sweep.json --jobs 1 --out " +
              (dir / "s1") + " > /dev/null") == 0);
  REQUIRE(run("sweep --config " + kConfigs + "/sweep.json --jobs 3 --out " +
              (dir / "s3") + " > /dev/null") == 0);
  REQUIRE(slurp(dir.path / "s1" / "sweep.csv") == slurp(dir.path / "s3" / "sweep.csv"));
  REQUIRE(slurp(dir.path / "s1" / "sweep.json") == slurp(dir.path / "s3" / "sweep.json"));
}

TEST_CASE("--seed overrides the config and changes seeded data", "[cli]") {
  TempDir dir("seed");
  REQUIRE(run("adjoint --config " + kConfigs + "/baseline.json --seed 7 --out " +
              (dir / "a7") + " > /dev/null") == 0);
  REQUIRE(run("adjoint --config " + kConfigs + "/baseline.json --seed 7 --out " +
              (dir / "b7") + " > /dev/null") == 0);
  REQUIRE(run("adjoint --config " + kConfigs + "/baseline.json --seed 8 --out " +
              (dir / "a8") + " > /dev/null") == 0);
  const std::string a7 = slurp(dir.path / "a7" / "adjoint.csv");
  REQUIRE(a7 == slurp(dir.path / "b7" / "adjoint.csv"));
  REQUIRE(a7 != slurp(dir.path / "a8" / "adjoint.csv"));
}

TEST_CASE("observability and carleman-check emit the diagnostics note", "[cli]") {
  TempDir dir("diag");
  REQUIRE(run("observability --config " + kConfigs + "/baseline.json --out " +
              (dir / "o") + " > /dev/null") == 0);
  const auto obs = nlohmann::json::parse(slurp(dir.path / "o" / "observability.json"));
  REQUIRE(obs["c_obs"].get<double>() > 0.0);
  REQUIRE(obs["note"].get<std::string>().find("not proofs") != std::string::npos);

  REQUIRE(run("carleman-check --config " + kConfigs + "/baseline.json --out " +
              (dir / "c") + " > " + (dir / "stdout.txt")) == 0);
  const auto carl = nlohmann::json::parse(slurp(dir.path / "c" / "carleman.json"));
  REQUIRE(carl.contains("variant_M"));
  REQUIRE(carl.contains("variant_Mi"));
  REQUIRE(carl.contains("energy"));
  const std::string out = slurp(dir.path / "stdout.txt");
  REQUIRE(out.find("not proofs") != std::string::npos);
}

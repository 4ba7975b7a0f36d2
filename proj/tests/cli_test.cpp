// Exercises the command-line surface end to end: config files, manifests,
// emitted CSV/JSON artifacts, and the exit-code contract.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ibinn/checkpoint.hpp"
#include "ibinn/datasets.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace ibinn;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return IBINN_CLI_PATH; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / "ibinn_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string config_file() {
  static const std::string path = [] {
    const std::string p = (work_dir() / "config.txt").string();
    std::ofstream out(p);
    out << "seed = 5\n"
           "generator = moons\n"
           "classes = 3\n"
           "n_train = 1000\n"
           "n_test = 400\n"
           "gamma = 1\n"
           "epochs = 3\n"
           "milestones = 2\n"
           "blocks = 2\n"
           "subnet_hidden = 16\n"
           "lr = 0.005\n";
    return p;
  }();
  return path;
}

// one shared training run for the checkpoint-consuming commands
std::string trained_checkpoint() {
  static const std::string path = [] {
    const std::string out = (work_dir() / "train").string();
    REQUIRE(run_cli("--config " + config_file() + " --out " + out + " train") == 0);
    return out + "/checkpoint.ibinn";
  }();
  return path;
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("train emits checkpoint, manifest, loss log, and summary") {
  const std::string ckpt = trained_checkpoint();
  const fs::path out = fs::path(ckpt).parent_path();
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "loss_log.csv"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "checkpoint_epoch2.ibinn"));

  const auto manifest = nlohmann::json::parse(std::ifstream((out / "manifest.json").string()));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["config"]["gamma"] == 1.0);
  CHECK(manifest["inputs"].size() == 1);  // the config file and its hash

  Model model = load_checkpoint(ckpt);
  CHECK(model.dim() == 2);
  CHECK(model.classes() == 3);
}

TEST_CASE("rerunning a command with equal inputs produces byte-identical outputs") {
  const std::string ckpt = trained_checkpoint();
  const fs::path out = fs::path(ckpt).parent_path();
  const auto first_ckpt = slurp(ckpt);
  const auto first_manifest = slurp(out / "manifest.json");
  const auto first_log = slurp(out / "loss_log.csv");
  const auto first_summary = slurp(out / "summary.json");

  REQUIRE(run_cli("--config " + config_file() + " --out " + out.string() + " train") == 0);
  CHECK(slurp(ckpt) == first_ckpt);
  CHECK(slurp(out / "manifest.json") == first_manifest);
  CHECK(slurp(out / "loss_log.csv") == first_log);
  CHECK(slurp(out / "summary.json") == first_summary);
}

TEST_CASE("eval consumes an exported dataset file and writes metrics") {
  const std::string ckpt = trained_checkpoint();

  DatasetSpec spec;
  spec.generator = "moons";
  spec.classes = 3;
  spec.n_train = 10;
  spec.n_test = 200;
  spec.seed = 5;
  const std::string data_path = (work_dir() / "test_set.csv").string();
  save_csv(make_inlier(spec).test, data_path);

  const std::string out = (work_dir() / "eval").string();
  REQUIRE(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --data " +
                  data_path + " --out " + out + " eval") == 0);
  const auto metrics = nlohmann::json::parse(std::ifstream(out + "/metrics.json"));
  CHECK(metrics.contains("bits_per_dim"));
  CHECK(metrics.contains("calibration"));

  // reliability CSV has one row per confidence bin
  std::ifstream rel(out + "/reliability.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(rel, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 20);  // header + 19 bins
}

TEST_CASE("eval without a checkpoint fails with a nonzero exit code") {
  CHECK(run_cli("--config " + config_file() + " --out " + (work_dir() / "evalfail").string() +
                " eval") != 0);
}

TEST_CASE("ood emits per-kind reports and ROC curves") {
  const std::string ckpt = trained_checkpoint();
  const std::string out = (work_dir() / "ood").string();
  REQUIRE(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --out " + out +
                  " ood --kinds rotate,noise") == 0);
  const auto report = nlohmann::json::parse(std::ifstream(out + "/ood.json"));
  REQUIRE(report["ood"].size() == 2);
  CHECK(report["ood"][0]["kind"] == "rotate");
  CHECK(fs::exists(fs::path(out) / "roc_rotate.csv"));
  CHECK(fs::exists(fs::path(out) / "roc_noise.csv"));
}

TEST_CASE("sampling with count 0 writes an empty file with a valid header") {
  const std::string ckpt = trained_checkpoint();
  const std::string out = (work_dir() / "sample0").string();
  REQUIRE(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --out " + out +
                  " sample --class 1 --count 0") == 0);
  const Dataset loaded = load_csv(out + "/samples.csv");
  CHECK(loaded.size() == 0);
  CHECK(loaded.dim == 2);
}

TEST_CASE("zero-temperature samples collapse to the inverted class mean") {
  const std::string ckpt = trained_checkpoint();
  const std::string out = (work_dir() / "sample_t0").string();
  REQUIRE(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --out " + out +
                  " sample --class 2 --count 4 --temperature 0") == 0);
  const Dataset samples = load_csv(out + "/samples.csv");
  REQUIRE(samples.size() == 4);

  Model model = load_checkpoint(ckpt);
  dvec expected;
  model.net.inverse(model.gmm.mean(1), expected);
  for (const dvec& x : samples.x) {
    for (int j = 0; j < 2; ++j) CHECK(x[j] == doctest::Approx(expected[j]).epsilon(1e-12));
  }
}

TEST_CASE("interpolation reproduces endpoints, the exact midpoint, and stays continuous") {
  const std::string ckpt = trained_checkpoint();
  const std::string out = (work_dir() / "interp").string();
  REQUIRE(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --out " + out +
                  " interpolate --xa 0.2,0.3 --xb 0.8,0.7 --steps 33") == 0);

  std::ifstream csv(out + "/interpolation.csv");
  std::string line;
  std::getline(csv, line);  // header
  std::vector<dvec> path;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    dvec row;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    path.push_back({row[2], row[3]});
  }
  REQUIRE(path.size() == 33);
  CHECK(std::abs(path.front()[0] - 0.2) < 1e-5);
  CHECK(std::abs(path.front()[1] - 0.3) < 1e-5);
  CHECK(std::abs(path.back()[0] - 0.8) < 1e-5);
  CHECK(std::abs(path.back()[1] - 0.7) < 1e-5);

  // midpoint of a 33-step path is the inverse of the latent midpoint
  Model model = load_checkpoint(ckpt);
  dvec za, zb, mid, x_mid;
  double ld = 0.0;
  model.net.forward({0.2, 0.3}, za, ld);
  model.net.forward({0.8, 0.7}, zb, ld);
  mid = {0.5 * (za[0] + zb[0]), 0.5 * (za[1] + zb[1])};
  model.net.inverse(mid, x_mid);
  CHECK(path[16][0] == doctest::Approx(x_mid[0]).epsilon(1e-9));
  CHECK(path[16][1] == doctest::Approx(x_mid[1]).epsilon(1e-9));

  // continuity: each increment obeys a local Lipschitz bound of the inverse
  // map, estimated by finite differences along the latent segment
  const dvec dz = {(zb[0] - za[0]) / 32.0, (zb[1] - za[1]) / 32.0};
  const double step_norm = std::sqrt(dz[0] * dz[0] + dz[1] * dz[1]);
  for (std::size_t s = 0; s + 1 < path.size(); ++s) {
    dvec z(2), x0, x1;
    for (int j = 0; j < 2; ++j) z[j] = za[j] + (zb[j] - za[j]) * (s + 0.5) / 32.0;
    // largest singular value of the inverse Jacobian near the segment center
    const double h = 1e-6;
    dvec jac(4);
    for (int c = 0; c < 2; ++c) {
      dvec zp = z, zm = z;
      zp[c] += h;
      zm[c] -= h;
      model.net.inverse(zp, x0);
      model.net.inverse(zm, x1);
      for (int r = 0; r < 2; ++r) jac[r * 2 + c] = (x0[r] - x1[r]) / (2.0 * h);
    }
    const double frob = std::sqrt(jac[0] * jac[0] + jac[1] * jac[1] + jac[2] * jac[2] +
                                  jac[3] * jac[3]);
    const double inc = std::sqrt(squared_distance(path[s], path[s + 1]));
    CHECK(inc <= 1.5 * frob * step_norm + 1e-12);
  }

  CHECK(run_cli("--config " + config_file() + " --checkpoint " + ckpt + " --out " + out +
                " interpolate --xa 0.2,0.3 --xb 0.8,0.7 --steps 1") != 0);
}

TEST_CASE("gradcheck command reports per-block errors and exits cleanly") {
  const std::string out = (work_dir() / "gradcheck").string();
  REQUIRE(run_cli("--config " + config_file() + " --out " + out + " gradcheck --coords 12") == 0);
  const auto report = nlohmann::json::parse(std::ifstream(out + "/gradcheck.json"));
  CHECK(report["passed"] == true);
  CHECK(report["max_rel_error"].get<double>() < 1e-4);
  CHECK(report["per_block_max"].size() >= 1);
}

TEST_CASE("bound-check emits a CSV and exits zero when the bound holds") {
  const std::string out = (work_dir() / "bound").string();
  REQUIRE(run_cli("--out " + out + " bound-check --levels 8 --trials 3") == 0);
  std::ifstream csv(out + "/bound_check.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "trial,sigma_over_delta,measured_max,bound,within");
}

TEST_CASE("config parser rejects unknown keys with the offending line") {
  const std::string bad = (work_dir() / "bad.txt").string();
  {
    std::ofstream out(bad);
    out << "seed = 1\nnot_a_key = 2\n";
  }
  CHECK(run_cli("--config " + bad + " --out " + (work_dir() / "badout").string() + " train") != 0);
}

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "tmcda/error.hpp"
#include "tmcda/lasso.hpp"
#include "tmcda/seed.hpp"
#include "tmcda/synthetic.hpp"
#include "tmcda/text.hpp"

namespace fs = std::filesystem;
using namespace tmcda;

namespace {

struct Run {
  int status = -1;
  std::string out, err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("tmcda_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the real executable.
Run tmcda_cmd(const std::string& args) {
  const char* exe = std::getenv("TMCDA_CLI");
  REQUIRE(exe != nullptr);
  const fs::path o = scratch() / "stdout.txt", e = scratch() / "stderr.txt";
  const std::string cmd = std::string(exe) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::vector<std::vector<std::string>> rows(const std::string& csv) {
  std::vector<std::vector<std::string>> r;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) r.push_back(text::split_csv(line));
  return r;
}

// A small labeled network on disk, with a fast config next to it.
const fs::path& small_data() {
  static const fs::path path = [] {
    const auto dir = scratch() / "small";
    const auto r = tmcda_cmd("synth --seed 5 --intersections 2 --intervals 8 --shift 1 --out-dir " +
                             dir.string());
    REQUIRE(r.status == 0);
    write_file(scratch() / "fast.cfg",
               "# quick settings\nboosting.n_stages = 30\nlasso.n_lambdas = 10\ngmm.n_init = 2\n"
               "left.gmm.n_samples = 20\nthrough.gmm.n_samples = 20\nright.gmm.n_samples = 20\n"
               "gmm.n_components = 2\n");
    return dir / "synthetic.csv";
  }();
  return path;
}

std::string fast_cfg() {
  small_data();  // also writes the config
  return (scratch() / "fast.cfg").string();
}

}  // namespace

TEST_CASE("synth is deterministic and validates its flags") {
  const auto a = tmcda_cmd("synth --seed 9 --intersections 3 --intervals 8 --out-dir " +
                           (scratch() / "s1").string());
  const auto b = tmcda_cmd("synth --seed 9 --intersections 3 --intervals 8 --out-dir " +
                           (scratch() / "s2").string());
  REQUIRE(a.status == 0);
  REQUIRE(b.status == 0);
  const auto text_a = slurp(scratch() / "s1" / "synthetic.csv");
  CHECK(text_a == slurp(scratch() / "s2" / "synthetic.csv"));
  std::ostringstream direct;
  write_table(generate_synthetic_network(9, 3, 1.0, 8), direct);
  CHECK(text_a == direct.str());

  const auto manifest = nlohmann::json::parse(slurp(scratch() / "s1" / "manifest.json"));
  CHECK(manifest["seed"] == 9);
  CHECK(manifest["outputs"][0]["sha256"] == cli::sha256_file(scratch() / "s1" / "synthetic.csv"));

  CHECK(tmcda_cmd("synth --intersections 1 --out-dir " + (scratch() / "s3").string()).status == cli::kUsage);
  CHECK(tmcda_cmd("synth --shift -1").status == cli::kUsage);
  CHECK(tmcda_cmd("").status == cli::kUsage);
  CHECK(tmcda_cmd("teleport").status == cli::kUsage);
  CHECK(tmcda_cmd("synth --help").status == cli::kOk);
}

TEST_CASE("default synth output runs through loo cleanly") {
  const auto dir = scratch() / "default";
  REQUIRE(tmcda_cmd("synth --out-dir " + dir.string()).status == 0);
  const auto r = tmcda_cmd("loo --data " + (dir / "synthetic.csv").string() + " --config " +
                           fast_cfg() + " --movement left --variant source-only --out-dir " +
                           (dir / "loo").string());
  CHECK(r.status == 0);
  CHECK(r.err.empty());
  CHECK(rows(slurp(dir / "loo" / "folds.csv")).size() == 1 + 6);
}

TEST_CASE("select matches a direct library fit") {
  const auto data_path = small_data();
  const auto dir = scratch() / "select";
  const auto r = tmcda_cmd("select --data " + data_path.string() + " --seed 3 --out-dir " + dir.string());
  REQUIRE(r.status == 0);
  const auto data = load_table(data_path);
  std::array<LassoModel, 3> models;
  for (Movement m : kMovements) {
    LassoCvOptions cv;
    cv.seed = derive_seed(3, "lasso");
    const double lambda = cross_validate_lambda(data.features(), data.labels(m), cv).best_lambda;
    models[static_cast<std::size_t>(m)] = fit_lasso(data.features(), data.labels(m), lambda);
  }
  std::ostringstream direct;
  write_coefficient_report(coefficient_report(models), direct);
  const auto table = slurp(dir / "coefficients.csv");
  CHECK(table == direct.str());
  CHECK(rows(table).size() == 26);

  // Large lambda: nothing survives.
  const auto big = scratch() / "select_big";
  REQUIRE(tmcda_cmd("select --data " + data_path.string() + " --lambda 1e9 --out-dir " + big.string()).status == 0);
  const auto zero = rows(slurp(big / "coefficients.csv"));
  REQUIRE(zero.size() == 26);
  for (std::size_t i = 1; i < zero.size(); ++i) {
    CHECK(zero[i][2] == "0");
    CHECK(zero[i][3] == "0");
    CHECK(zero[i][4] == "0");
  }

  const auto one = scratch() / "select_one";
  REQUIRE(tmcda_cmd("select --data " + data_path.string() + " --movement right --lambda 0.5 --out-dir " +
                    one.string()).status == 0);
  const auto single = rows(slurp(one / "coefficients.csv"));
  CHECK(single.size() == 26);
  CHECK(single[0] == std::vector<std::string>{"variable", "description", "right"});
}

TEST_CASE("loo reports equal the library and are reproducible") {
  const auto data_path = small_data();
  const std::string args = "loo --data " + data_path.string() + " --config " + fast_cfg() +
                           " --seed 11 --variant itml-gbbw --out-dir ";
  const auto a = tmcda_cmd(args + (scratch() / "loo1").string());
  const auto b = tmcda_cmd(args + (scratch() / "loo2").string() + " --jobs 2");
  REQUIRE(a.status == 0);
  REQUIRE(b.status == 0);
  const auto folds = slurp(scratch() / "loo1" / "folds.csv");
  const auto summary = slurp(scratch() / "loo1" / "summary.csv");
  CHECK(folds == slurp(scratch() / "loo2" / "folds.csv"));
  CHECK(summary == slurp(scratch() / "loo2" / "summary.csv"));
  CHECK(rows(folds).size() == 1 + 6);
  CHECK(summary.find("MAE,ITML-GBBW,") != std::string::npos);

  // Same result through the library.
  auto configs = cli::configs_from(cli::read_key_values(fast_cfg()),
                                   {Movement::left, Movement::through, Movement::right});
  for (auto& c : configs) c = with_variant(c, Variant::itml_gbbw), c.seed = 11;
  const auto report = leave_one_out(load_table(data_path), configs);
  std::ostringstream f, s;
  write_folds(report, f);
  write_summary(report, s);
  CHECK(folds == f.str());
  CHECK(summary == s.str());

  const auto manifest = nlohmann::json::parse(slurp(scratch() / "loo1" / "manifest.json"));
  CHECK(manifest["inputs"][0]["sha256"] == cli::sha256_file(data_path));
  CHECK(manifest["seed"] == 11);
}

TEST_CASE("configuration problems are reported together") {
  write_file(scratch() / "bad.cfg",
             "gmm.n_component = 3\nboosting.alpha = 1.5\nnot a pair\nleft.seed = 4\nitml.gamma = x\n");
  const auto r = tmcda_cmd("loo --data " + small_data().string() + " --config " +
                           (scratch() / "bad.cfg").string() + " --out-dir " + (scratch() / "bad").string());
  CHECK(r.status == cli::kValidation);
  for (const char* needle : {"gmm.n_component", "boosting.alpha", "line 3", "left.seed", "itml.gamma"})
    CHECK(r.err.find(needle) != std::string::npos);
  CHECK_FALSE(fs::exists(scratch() / "bad" / "summary.csv"));

  // Movement-specific keys win over shared ones, only for that movement.
  std::istringstream in("gmm.n_samples = 7\nright.gmm.n_samples = 9\n");
  const auto configs = cli::configs_from(cli::parse_key_values(in, "inline"),
                                         {Movement::left, Movement::right});
  CHECK(configs[0].gmm.samples == 7);
  CHECK(configs[1].gmm.samples == 9);
}

TEST_CASE("input errors exit with the validation status") {
  write_file(scratch() / "broken.csv", "intersection_id,foo\nI01,1\n");
  const auto r = tmcda_cmd("loo --data " + (scratch() / "broken.csv").string() + " --out-dir " +
                           (scratch() / "broken").string());
  CHECK(r.status == cli::kValidation);
  CHECK_FALSE(r.err.empty());
  CHECK(tmcda_cmd("loo --out-dir x").status == cli::kUsage);
  CHECK(tmcda_cmd("loo --data /nonexistent/file.csv").status == cli::kUsage);
  CHECK(tmcda_cmd("select --data " + small_data().string() + " --lambda nope --out-dir " +
                  (scratch() / "nope").string()).status == cli::kValidation);
}

TEST_CASE("a failing stage exits with the runtime status after writing reports") {
  write_file(scratch() / "huge.cfg", "gmm.n_components = 100000\nboosting.n_stages = 10\n");
  const auto dir = scratch() / "huge";
  const auto r = tmcda_cmd("loo --data " + small_data().string() + " --config " +
                           (scratch() / "huge.cfg").string() + " --movement left --variant full --out-dir " +
                           dir.string());
  CHECK(r.status == cli::kRuntime);
  CHECK(r.err.find("failed") != std::string::npos);
  CHECK(fs::exists(dir / "folds.csv"));
}

TEST_CASE("sweep") {
  const auto data_path = small_data();
  write_file(scratch() / "one.grid", "grid.n_components = 2\ngrid.n_samples = 20\ngrid.alpha = 0.5\n");
  const auto dir = scratch() / "sweep1";
  REQUIRE(tmcda_cmd("sweep --data " + data_path.string() + " --grid " + (scratch() / "one.grid").string() +
                    " --config " + fast_cfg() + " --movement through --out-dir " + dir.string()).status == 0);
  const auto sweep = rows(slurp(dir / "sweep.csv"));
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[1][3] == "ok");

  const auto loo_dir = scratch() / "sweep1_loo";
  REQUIRE(tmcda_cmd("loo --data " + data_path.string() + " --config " + fast_cfg() +
                    " --movement through --variant full --out-dir " + loo_dir.string()).status == 0);
  const auto summary = rows(slurp(loo_dir / "summary.csv"));
  // header, MAE row, RMSE row; columns metric,model,left,through,right
  REQUIRE(summary.size() == 3);
  CHECK(sweep[1][4] == summary[1][3]);
  CHECK(sweep[1][5] == summary[2][3]);

  write_file(scratch() / "alpha.grid",
             "grid.n_components = 2\ngrid.n_samples = 20\ngrid.alpha = 0, 0.25, 0.5, 0.75, 1\n");
  const auto adir = scratch() / "sweep_alpha";
  REQUIRE(tmcda_cmd("sweep --data " + data_path.string() + " --grid " + (scratch() / "alpha.grid").string() +
                    " --config " + fast_cfg() + " --movement left --out-dir " + adir.string()).status == 0);
  CHECK(rows(slurp(adir / "sweep.csv")).size() == 6);

  write_file(scratch() / "audit.grid", "grid.n_components = 2, 3\ngrid.n_samples = 40\ngrid.alpha = 0.5\n");
  const auto mdir = scratch() / "sweep_audit";
  REQUIRE(tmcda_cmd("sweep --data " + data_path.string() + " --grid " + (scratch() / "audit.grid").string() +
                    " --config " + fast_cfg() + " --out-dir " + mdir.string()).status == 0);
  const auto manifest = nlohmann::json::parse(slurp(mdir / "manifest.json"));
  const auto& cell = manifest["cells"][0];
  CHECK(cell["n_components"] == 2);
  CHECK(cell["n_samples"] == 40);
  CHECK(cell["alpha"] == 0.5);
  for (const char* m : {"left", "through", "right"}) {
    CHECK(cell["configs"][m]["gmm.n_components"] == "2");
    CHECK(cell["configs"][m]["gmm.n_samples"] == "40");
    CHECK(cell["configs"][m]["boosting.alpha"] == "0.5");
  }

  write_file(scratch() / "bad.grid", "grid.n_components = 0\ngrid.alpha = 2\n");
  const auto bad = tmcda_cmd("sweep --data " + data_path.string() + " --grid " + (scratch() / "bad.grid").string());
  CHECK(bad.status == cli::kValidation);
  CHECK(bad.err.find("grid.n_samples") != std::string::npos);
  CHECK(bad.err.find("grid.alpha") != std::string::npos);
}

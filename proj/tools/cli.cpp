#include "cli.hpp"

#include <unistd.h>

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tmcda/error.hpp"
#include "tmcda/lasso.hpp"
#include "tmcda/seed.hpp"
#include "tmcda/synthetic.hpp"
#include "tmcda/text.hpp"

namespace tmcda::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---- config files ----

KeyValueFile parse_key_values(std::istream& in, std::string_view source) {
  KeyValueFile file;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    const std::string where = std::string(source) + " line " + std::to_string(number);
    if (eq == std::string_view::npos) {
      file.problems.push_back(where + ": expected 'key = value'");
      continue;
    }
    const auto key = text::trim(body.substr(0, eq));
    const auto value = text::trim(body.substr(eq + 1));
    if (key.empty()) {
      file.problems.push_back(where + ": missing key");
      continue;
    }
    file.entries.emplace_back(std::string(key), std::string(value));
  }
  return file;
}

KeyValueFile read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  return parse_key_values(in, path.string());
}

namespace {

std::optional<Movement> movement_prefix(std::string_view key, std::string_view* rest) {
  for (Movement m : kMovements) {
    const std::string prefix = std::string(movement_name(m)) + ".";
    if (key.rfind(prefix, 0) == 0) {
      *rest = key.substr(prefix.size());
      return m;
    }
  }
  return std::nullopt;
}

std::string join(const std::vector<std::string>& lines) {
  std::string all;
  for (const auto& l : lines) all += (all.empty() ? "" : "\n") + l;
  return all;
}

}  // namespace

std::vector<PipelineConfig> configs_from(const KeyValueFile& file,
                                         const std::vector<Movement>& movements) {
  std::vector<std::string> problems = file.problems;
  std::vector<PipelineConfig> configs;
  for (Movement m : movements) configs.push_back(PipelineConfig::defaults(m));

  // Shared keys first, then movement-specific ones.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& [key, value] : file.entries) {
      std::string_view rest = key;
      const auto only = movement_prefix(key, &rest);
      if ((pass == 0) != !only) continue;
      if (rest == "model" || rest == "movement") {
        if (pass == 0) problems.push_back(key + ": set by the command, not the config file");
        continue;
      }
      if (only && rest == "seed") {
        problems.push_back(key + ": the seed is shared by all movements");
        continue;
      }
      // Validate the key even when its movement is not being run.
      PipelineConfig probe = PipelineConfig::defaults(only.value_or(Movement::left));
      try {
        set_config_value(probe, rest, value);
      } catch (const ValidationError& e) {
        problems.push_back(e.what());
        continue;
      }
      for (auto& c : configs)
        if (!only || c.movement == *only) set_config_value(c, rest, value);
    }
  }
  for (const auto& c : configs)
    for (const auto& p : c.problems())
      problems.push_back(std::string(movement_name(c.movement)) + ": " + p);
  if (!problems.empty()) throw ValidationError("invalid configuration:\n" + join(problems));
  return configs;
}

SweepGrid grid_from(const KeyValueFile& file) {
  std::vector<std::string> problems = file.problems;
  SweepGrid grid;
  bool seen[3] = {false, false, false};
  for (const auto& [key, value] : file.entries) {
    std::vector<double> values;
    try {
      values = text::parse_number_list(value);
    } catch (const Error& e) {
      problems.push_back(key + ": " + e.what());
      continue;
    }
    auto integers = [&](auto& out) {
      for (double v : values) {
        if (v != std::floor(v) || v < 0) {
          problems.push_back(key + ": expected non-negative integers");
          return;
        }
        out.push_back(static_cast<std::remove_reference_t<decltype(out[0])>>(v));
      }
    };
    if (key == "grid.n_components") {
      integers(grid.components);
      seen[0] = true;
    } else if (key == "grid.n_samples") {
      integers(grid.samples);
      seen[1] = true;
    } else if (key == "grid.alpha") {
      grid.alphas = values;
      seen[2] = true;
    } else {
      problems.push_back("unknown grid key '" + key + "'");
    }
  }
  const char* names[3] = {"grid.n_components", "grid.n_samples", "grid.alpha"};
  for (int i = 0; i < 3; ++i)
    if (!seen[i]) problems.push_back(std::string(names[i]) + ": missing");
  for (int k : grid.components)
    if (k < 1) problems.push_back("grid.n_components: values must be >= 1");
  for (double a : grid.alphas)
    if (!(a >= 0.0 && a <= 1.0)) problems.push_back("grid.alpha: values must lie in [0, 1]");
  if (!problems.empty()) throw ValidationError("invalid grid:\n" + join(problems));
  return grid;
}

std::vector<Movement> parse_movements(std::string_view name) {
  if (text::lowercase(name) == "all") return {kMovements.begin(), kMovements.end()};
  try {
    return {parse_movement(name)};
  } catch (const Error&) {
    throw ValidationError("unknown movement '" + std::string(name) + "'");
  }
}

// ---- files ----

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

void write_atomically(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json config_json(const PipelineConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : config_entries(c)) j[k] = v;
  j["hash"] = hex64(config_hash(c));
  return j;
}

/// Collects what one command read and wrote.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed) : started_(utc_now()) {
    doc_["command"] = std::move(command);
    doc_["seed"] = seed;
    doc_["schema_version"] = FeatureSchema::kVersion;
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  void input(const fs::path& path) {
    doc_["inputs"].push_back({{"path", path.string()}, {"sha256", sha256_file(path)}});
  }
  json& operator[](const char* key) { return doc_[key]; }

  // Writes an artifact and records it.
  void output(const fs::path& path, const std::string& content) {
    write_atomically(path, content);
    doc_["outputs"].push_back({{"path", path.string()}, {"sha256", sha256_file(path)}});
  }

  void finish(const fs::path& path) {
    doc_["started"] = started_;
    doc_["finished"] = utc_now();
    write_atomically(path, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::string started_;
};

struct Common {
  std::string data;
  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string movement = "all";
};

std::vector<PipelineConfig> load_configs(const Common& o) {
  const auto movements = parse_movements(o.movement);
  KeyValueFile file;
  if (!o.config.empty()) file = read_key_values(o.config);
  auto configs = configs_from(file, movements);
  if (o.seed)
    for (auto& c : configs) c.seed = *o.seed;
  return configs;
}

std::uint64_t master_seed(const std::vector<PipelineConfig>& configs) {
  return configs.empty() ? 0 : configs.front().seed;
}

template <class Write>
std::string render(Write write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

// ---- commands ----

int cmd_synth(std::uint64_t seed, std::size_t n, double shift, std::size_t intervals,
              const std::string& out_dir, std::ostream& out) {
  const Dataset data = generate_synthetic_network(seed, n, shift, intervals);
  Manifest manifest("synth", seed);
  manifest["parameters"] = {{"n_intersections", n}, {"shift", shift}, {"n_intervals", intervals}};
  const fs::path path = fs::path(out_dir) / "synthetic.csv";
  manifest.output(path, render([&](std::ostream& s) { write_table(data, s); }));
  manifest.finish(fs::path(out_dir) / "manifest.json");
  out << "wrote " << path.string() << " (" << data.size() << " instances)\n";
  return kOk;
}

int cmd_select(const Common& o, const std::string& lambda_mode, std::ostream& out) {
  auto configs = load_configs(o);
  if (lambda_mode != "auto") {
    const auto v = text::parse_number(lambda_mode);
    if (!v || *v < 0) throw ValidationError("--lambda: expected 'auto' or a number >= 0");
    for (auto& c : configs) c.lasso.lambda = *v;
  }
  const Dataset data = load_table(o.data);
  if (!data.labeled()) throw ValidationError(o.data + ": feature selection needs labeled data");
  Manifest manifest("select", master_seed(configs));
  manifest.input(o.data);

  const Eigen::MatrixXd x = data.features();
  std::array<LassoModel, 3> models;
  json fits = json::object();
  for (const auto& c : configs) {
    const Eigen::VectorXd y = data.labels(c.movement);
    double lambda = 0.0;
    if (c.lasso.lambda) {
      lambda = *c.lasso.lambda;
    } else {
      LassoCvOptions cv;
      cv.folds = c.lasso.folds;
      cv.n_lambdas = c.lasso.n_lambdas;
      cv.min_ratio = c.lasso.min_ratio;
      cv.tol = c.lasso.tol;
      cv.max_sweeps = c.lasso.max_sweeps;
      cv.seed = derive_seed(c.seed, "lasso");
      lambda = cross_validate_lambda(x, y, cv).best_lambda;
    }
    auto& model = models[static_cast<std::size_t>(c.movement)];
    model = fit_lasso(x, y, lambda, c.lasso.tol, c.lasso.max_sweeps);
    json selected = json::array();
    for (std::size_t j : model.selected) selected.push_back(FeatureSchema::names()[j]);
    fits[std::string(movement_name(c.movement))] = {
        {"lambda", lambda}, {"converged", model.converged}, {"selected", selected},
        {"config", config_json(c)}};
  }
  manifest["fits"] = fits;

  std::string table;
  if (configs.size() == 3) {
    table = render([&](std::ostream& s) { write_coefficient_report(coefficient_report(models), s); });
  } else {
    const auto& model = models[static_cast<std::size_t>(configs[0].movement)];
    std::ostringstream s;
    s << "variable,description," << movement_name(configs[0].movement) << '\n';
    for (std::size_t j = 0; j < FeatureSchema::kSize; ++j)
      s << FeatureSchema::names()[j] << ',' << text::csv_field(FeatureSchema::description(j)) << ','
        << text::format_number(model.coefficients(static_cast<Eigen::Index>(j))) << '\n';
    table = s.str();
  }
  const fs::path path = fs::path(o.out_dir) / "coefficients.csv";
  manifest.output(path, table);
  manifest.finish(fs::path(o.out_dir) / "manifest.json");
  out << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_loo(const Common& o, const std::vector<std::string>& variant_names, std::ostream& out,
            std::ostream& err) {
  std::vector<Variant> variants;
  for (const auto& v : variant_names) variants.push_back(parse_variant(v));
  if (variants.empty()) variants = {Variant::full, Variant::itml_gbbw, Variant::source_only};
  const auto bases = load_configs(o);
  std::vector<PipelineConfig> configs;
  for (const auto& b : bases)
    for (Variant v : variants) configs.push_back(with_variant(b, v));

  const Dataset data = load_table(o.data);
  Manifest manifest("loo", master_seed(configs));
  manifest.input(o.data);
  json cfg = json::array();
  for (const auto& c : configs) cfg.push_back(config_json(c));
  manifest["configs"] = cfg;

  const auto report = leave_one_out(data, configs, o.jobs);
  manifest.output(fs::path(o.out_dir) / "summary.csv",
                  render([&](std::ostream& s) { write_summary(report, s); }));
  manifest.output(fs::path(o.out_dir) / "folds.csv",
                  render([&](std::ostream& s) { write_folds(report, s); }));
  manifest["failed_folds"] = report.failures();
  manifest.finish(fs::path(o.out_dir) / "manifest.json");

  out << "wrote " << report.rows.size() << " fold rows to " << o.out_dir << '\n';
  if (report.failures() > 0) {
    for (const auto& row : report.rows)
      if (!row.metrics)
        err << "fold " << row.model << '/' << movement_name(row.movement) << '/'
            << row.intersection_id << " failed: " << row.message << '\n';
    return kRuntime;
  }
  return kOk;
}

int cmd_sweep(const Common& o, const std::string& grid_path, std::ostream& out, std::ostream& err) {
  const auto grid = grid_from(read_key_values(grid_path));
  const auto bases = load_configs(o);
  const Dataset data = load_table(o.data);
  Manifest manifest("sweep", master_seed(bases));
  manifest.input(o.data);
  manifest.input(grid_path);

  const auto result = ablation_sweep(data, grid, bases, o.jobs);
  json cells = json::array();
  for (const auto& cell : result.cells) {
    json cfg = json::object();
    for (const auto& b : bases) {
      PipelineConfig c = b;
      c.gmm.components = cell.components;
      c.gmm.samples = cell.samples;
      c.boosting.alpha = cell.alpha;
      cfg[std::string(movement_name(c.movement))] = config_json(c);
    }
    cells.push_back({{"n_components", cell.components},
                     {"n_samples", cell.samples},
                     {"alpha", cell.alpha},
                     {"status", cell.status},
                     {"configs", cfg}});
  }
  manifest["cells"] = cells;
  manifest.output(fs::path(o.out_dir) / "sweep.csv",
                  render([&](std::ostream& s) { write_sweep(result, s); }));
  manifest.finish(fs::path(o.out_dir) / "manifest.json");

  out << "wrote " << result.cells.size() << " grid cells to " << o.out_dir << '\n';
  bool failed = false;
  for (const auto& cell : result.cells)
    if (cell.status == "failed") {
      failed = true;
      err << "cell K=" << cell.components << " M=" << cell.samples << " alpha=" << cell.alpha
          << " failed: " << cell.message << '\n';
    }
  return failed ? kRuntime : kOk;
}

void add_common(CLI::App* cmd, Common& o, bool with_jobs) {
  cmd->add_option("--data", o.data, "Delimited data file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--movement", o.movement, "left|through|right|all")
      ->check(CLI::IsMember({"left", "through", "right", "all"}));
  if (with_jobs) cmd->add_option("--jobs", o.jobs, "Parallel folds")->check(CLI::Range(1, 1024));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Turning movement count estimation by domain adaptation"};
  app.name("tmcda");
  app.require_subcommand(1);

  std::uint64_t synth_seed = 0;
  std::size_t n_intersections = 6, n_intervals = 96;
  double shift = 1.0;
  std::string synth_out = ".";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic intersection network");
  synth->add_option("--seed", synth_seed, "Master seed");
  synth->add_option("--intersections", n_intersections, "Number of intersections")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  synth->add_option("--shift", shift, "Shift strength")->check(CLI::NonNegativeNumber);
  synth->add_option("--intervals", n_intervals, "15-minute intervals per approach")
      ->check(CLI::PositiveNumber);
  synth->add_option("--out-dir", synth_out, "Output directory");

  Common select_opts;
  std::string lambda_mode = "auto";
  auto* select = app.add_subcommand("select", "Lasso feature selection per movement");
  add_common(select, select_opts, false);
  select->add_option("--lambda", lambda_mode, "auto (cross-validated) or a value");

  Common loo_opts;
  std::vector<std::string> variants;
  auto* loo = app.add_subcommand("loo", "Leave-one-intersection-out evaluation");
  add_common(loo, loo_opts, true);
  loo->add_option("--variant", variants, "full|itml-gbbw|source-only (repeatable)")
      ->check(CLI::IsMember({"full", "itml-gbbw", "source-only"}));

  Common sweep_opts;
  std::string grid_path;
  auto* sweep = app.add_subcommand("sweep", "Ablation sweep over (K, M, alpha)");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--grid", grid_path, "Grid file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_seed, n_intersections, shift, n_intervals, synth_out, out);
    if (*select) return cmd_select(select_opts, lambda_mode, out);
    if (*loo) return cmd_loo(loo_opts, variants, out, err);
    if (*sweep) return cmd_sweep(sweep_opts, grid_path, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace tmcda::cli

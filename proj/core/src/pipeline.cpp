#include "tmcda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "tmcda/error.hpp"
#include "tmcda/seed.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using text::format_number;

template <class Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i = 0;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(workers, n); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(std::string_view key, std::string_view v) {
  const std::string s = text::lowercase(text::trim(v));
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

double parse_real(std::string_view key, std::string_view v) {
  auto d = text::parse_number(text::trim(v));
  if (!d) throw ValidationError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return *d;
}

long long parse_integer(std::string_view key, std::string_view v) {
  const double d = parse_real(key, v);
  if (d != std::floor(d) || std::abs(d) > 9e15)
    throw ValidationError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  return static_cast<long long>(d);
}

std::uint64_t parse_seed(std::string_view key, std::string_view v) {
  const std::string s(text::trim(v));
  std::uint64_t out = 0;
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ValidationError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
  try {
    out = std::stoull(s);
  } catch (const std::exception&) {
    throw ValidationError(std::string(key) + ": value out of range");
  }
  return out;
}

std::string optional_text(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string("auto");
}

std::optional<double> parse_optional(std::string_view key, std::string_view v) {
  if (text::lowercase(text::trim(v)) == "auto") return std::nullopt;
  return parse_real(key, v);
}

// Settings that the shared selection, metric and matching stages depend on.
std::string prepare_key(const PipelineConfig& c) {
  std::string key;
  for (const auto& [k, v] : config_entries(c)) {
    if (k == "movement" || k == "seed" || k.rfind("lasso.", 0) == 0 ||
        k.rfind("constraints.", 0) == 0 || k.rfind("itml.", 0) == 0)
      key += k + '=' + v + '\n';
  }
  return key;
}

// Mixture and boosting settings on top of the shared stages.
std::string finish_key(const PipelineConfig& c) {
  std::string key;
  for (const auto& [k, v] : config_entries(c))
    if (k.rfind("gmm.", 0) == 0 || k == "pipeline.project_synthetic") key += k + '=' + v + '\n';
  return key;
}

std::vector<std::string> checked_ids(const Dataset& data) {
  auto ids = data.intersection_ids();
  if (ids.size() < 2)
    throw ValidationError("leave-one-out needs at least two intersections, found " +
                          std::to_string(ids.size()));
  if (!data.labeled()) throw ValidationError("leave-one-out needs labels on every instance");
  return ids;
}

MatrixXd standardized(const MatrixXd& x, const StandardizationParams& p,
                      const std::vector<std::size_t>& columns) {
  MatrixXd z(x.rows(), static_cast<Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto j = static_cast<Index>(columns[c]);
    z.col(static_cast<Index>(c)) = (x.col(j).array() - p.mean(j)) / p.scale(j);
  }
  return z;
}

// Synthetic rows are rounded to valid codes for count and categorical columns and clipped
// to the per-column range of the matched rows they were drawn from.
void project_to_schema(LabeledSet& pseudo, const PreparedFold& fold) {
  const Index n0 = fold.matched.size();
  for (Index j = 0; j < pseudo.x.cols(); ++j) {
    const auto column = fold.selected[static_cast<std::size_t>(j)];
    const bool discrete = FeatureSchema::kind(column) != FeatureSchema::Kind::real;
    const double lo = fold.matched.x.col(j).minCoeff();
    const double hi = fold.matched.x.col(j).maxCoeff();
    for (Index i = n0; i < pseudo.x.rows(); ++i) {
      double v = std::clamp(pseudo.x(i, j), lo, hi);
      if (discrete) v = std::clamp(std::round(v), lo, hi);
      pseudo.x(i, j) = v;
    }
  }
}

std::string cell_text(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace

// ---------------------------------------------------------------------------------------------

Variant parse_variant(std::string_view name) {
  const std::string s = text::lowercase(text::trim(name));
  if (s == "full" || s == "itmlgmm-gbbw") return Variant::full;
  if (s == "itml-gbbw") return Variant::itml_gbbw;
  if (s == "source-only" || s == "gb") return Variant::source_only;
  throw ValidationError("unknown variant '" + std::string(name) +
                        "' (expected full, itml-gbbw or source-only)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::itml_gbbw: return "itml-gbbw";
    case Variant::source_only: return "source-only";
  }
  return "?";
}

std::string_view variant_model(Variant v) {
  switch (v) {
    case Variant::full: return "ITMLGMM-GBBW";
    case Variant::itml_gbbw: return "ITML-GBBW";
    case Variant::source_only: return "GB";
  }
  return "?";
}

GmmSettings default_gmm(Movement m) {
  GmmSettings g;
  switch (m) {
    case Movement::left: g.components = 2; g.samples = 40; break;
    case Movement::through: g.components = 4; g.samples = 100; break;
    case Movement::right: g.components = 5; g.samples = 180; break;
  }
  return g;
}

PipelineConfig PipelineConfig::defaults(Movement m) {
  PipelineConfig c;
  c.movement = m;
  c.gmm = default_gmm(m);
  return c;
}

std::vector<std::string> PipelineConfig::problems() const {
  std::vector<std::string> out;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) out.push_back(what);
  };
  need(!model.empty() && model.find_first_of(",\n\r\"") == std::string::npos,
       "model: label must be non-empty and free of commas, quotes and newlines");
  if (lasso.lambda) need(*lasso.lambda >= 0.0, "lasso.lambda: must be >= 0 or auto");
  need(lasso.folds >= 2, "lasso.folds: must be >= 2");
  need(lasso.n_lambdas >= 1, "lasso.n_lambdas: must be >= 1");
  need(lasso.min_ratio > 0.0 && lasso.min_ratio < 1.0, "lasso.min_ratio: must lie in (0, 1)");
  need(lasso.tol > 0.0, "lasso.tol: must be > 0");
  need(lasso.max_sweeps >= 1, "lasso.max_sweeps: must be >= 1");
  need(constraints.similar_percentile > 0.0 && constraints.similar_percentile < 50.0,
       "constraints.similar_percentile: must lie in (0, 50)");
  need(constraints.max_per_set >= 1, "constraints.max_per_set: must be >= 1");
  need(constraints.candidate_pairs >= 1, "constraints.candidate_pairs: must be >= 1");
  need(constraints.upper_percentile >= 0.0 && constraints.upper_percentile <= 100.0,
       "constraints.upper_percentile: must lie in [0, 100]");
  need(constraints.lower_percentile >= 0.0 && constraints.lower_percentile <= 100.0,
       "constraints.lower_percentile: must lie in [0, 100]");
  need(constraints.upper_percentile < constraints.lower_percentile,
       "constraints: upper_percentile must be below lower_percentile");
  need(itml.gamma > 0.0, "itml.gamma: must be > 0");
  need(itml.max_passes >= 1, "itml.max_passes: must be >= 1");
  need(itml.tol > 0.0, "itml.tol: must be > 0");
  need(gmm.components >= 1, "gmm.n_components: must be >= 1");
  need(gmm.tol > 0.0, "gmm.tol: must be > 0");
  need(gmm.max_iter >= 1, "gmm.max_iter: must be >= 1");
  need(gmm.n_init >= 1, "gmm.n_init: must be >= 1");
  if (gmm.ridge) need(*gmm.ridge >= 0.0, "gmm.ridge: must be >= 0 or auto");
  need(boosting.n_stages >= 0, "boosting.n_stages: must be >= 0");
  need(boosting.max_depth >= 0, "boosting.max_depth: must be >= 0");
  need(boosting.min_samples_leaf >= 1, "boosting.min_samples_leaf: must be >= 1");
  need(boosting.shrinkage > 0.0 && boosting.shrinkage <= 1.0,
       "boosting.shrinkage: must lie in (0, 1]");
  need(boosting.alpha >= 0.0 && boosting.alpha <= 1.0, "boosting.alpha: must lie in [0, 1]");
  return out;
}

void PipelineConfig::validate() const {
  const auto list = problems();
  if (list.empty()) return;
  std::string msg = "invalid pipeline configuration:";
  for (const auto& p : list) msg += "\n  " + p;
  throw ValidationError(msg);
}

PipelineConfig with_variant(PipelineConfig config, Variant v) {
  config.model = std::string(variant_model(v));
  if (v == Variant::itml_gbbw) config.gmm.samples = 0;
  if (v == Variant::source_only) config.boosting.alpha = 0.0;
  return config;
}

std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> e;
  auto add = [&](const char* k, std::string v) { e.emplace_back(k, std::move(v)); };
  add("model", c.model);
  add("movement", std::string(movement_name(c.movement)));
  add("seed", std::to_string(c.seed));
  add("lasso.lambda", optional_text(c.lasso.lambda));
  add("lasso.folds", std::to_string(c.lasso.folds));
  add("lasso.n_lambdas", std::to_string(c.lasso.n_lambdas));
  add("lasso.min_ratio", format_number(c.lasso.min_ratio));
  add("lasso.tol", format_number(c.lasso.tol));
  add("lasso.max_sweeps", std::to_string(c.lasso.max_sweeps));
  add("constraints.similar_percentile", format_number(c.constraints.similar_percentile));
  add("constraints.max_per_set", std::to_string(c.constraints.max_per_set));
  add("constraints.candidate_pairs", std::to_string(c.constraints.candidate_pairs));
  add("constraints.upper_percentile", format_number(c.constraints.upper_percentile));
  add("constraints.lower_percentile", format_number(c.constraints.lower_percentile));
  add("itml.gamma", format_number(c.itml.gamma));
  add("itml.max_passes", std::to_string(c.itml.max_passes));
  add("itml.tol", format_number(c.itml.tol));
  add("gmm.n_components", std::to_string(c.gmm.components));
  add("gmm.n_samples", std::to_string(c.gmm.samples));
  add("gmm.tol", format_number(c.gmm.tol));
  add("gmm.max_iter", std::to_string(c.gmm.max_iter));
  add("gmm.ridge", optional_text(c.gmm.ridge));
  add("gmm.n_init", std::to_string(c.gmm.n_init));
  add("boosting.n_stages", std::to_string(c.boosting.n_stages));
  add("boosting.max_depth", std::to_string(c.boosting.max_depth));
  add("boosting.min_samples_leaf", std::to_string(c.boosting.min_samples_leaf));
  add("boosting.shrinkage", format_number(c.boosting.shrinkage));
  add("boosting.alpha", format_number(c.boosting.alpha));
  add("pipeline.exclude_matched", bool_text(c.exclude_matched_from_source));
  add("pipeline.clamp", bool_text(c.clamp_predictions));
  add("pipeline.round", bool_text(c.round_predictions));
  add("pipeline.project_synthetic", bool_text(c.project_synthetic));
  return e;
}

void set_config_value(PipelineConfig& c, std::string_view key, std::string_view value) {
  const std::string k(key);
  auto integer = [&] { return parse_integer(key, value); };
  auto count = [&] {
    const long long v = integer();
    if (v < 0) throw ValidationError(k + ": must be >= 0");
    return static_cast<std::size_t>(v);
  };
  auto real = [&] { return parse_real(key, value); };
  auto as_int = [&] {
    const long long v = integer();
    if (v < -2147483647LL || v > 2147483647LL) throw ValidationError(k + ": value out of range");
    return static_cast<int>(v);
  };

  if (k == "model") c.model = std::string(text::trim(value));
  else if (k == "movement") c.movement = parse_movement(text::trim(value));
  else if (k == "seed") c.seed = parse_seed(key, value);
  else if (k == "lasso.lambda") c.lasso.lambda = parse_optional(key, value);
  else if (k == "lasso.folds") c.lasso.folds = as_int();
  else if (k == "lasso.n_lambdas") c.lasso.n_lambdas = as_int();
  else if (k == "lasso.min_ratio") c.lasso.min_ratio = real();
  else if (k == "lasso.tol") c.lasso.tol = real();
  else if (k == "lasso.max_sweeps") c.lasso.max_sweeps = as_int();
  else if (k == "constraints.similar_percentile") c.constraints.similar_percentile = real();
  else if (k == "constraints.max_per_set") c.constraints.max_per_set = count();
  else if (k == "constraints.candidate_pairs") c.constraints.candidate_pairs = count();
  else if (k == "constraints.upper_percentile") c.constraints.upper_percentile = real();
  else if (k == "constraints.lower_percentile") c.constraints.lower_percentile = real();
  else if (k == "itml.gamma") c.itml.gamma = real();
  else if (k == "itml.max_passes") c.itml.max_passes = as_int();
  else if (k == "itml.tol") c.itml.tol = real();
  else if (k == "gmm.n_components") c.gmm.components = as_int();
  else if (k == "gmm.n_samples") c.gmm.samples = count();
  else if (k == "gmm.tol") c.gmm.tol = real();
  else if (k == "gmm.max_iter") c.gmm.max_iter = as_int();
  else if (k == "gmm.ridge") c.gmm.ridge = parse_optional(key, value);
  else if (k == "gmm.n_init") c.gmm.n_init = as_int();
  else if (k == "boosting.n_stages") c.boosting.n_stages = as_int();
  else if (k == "boosting.max_depth") c.boosting.max_depth = as_int();
  else if (k == "boosting.min_samples_leaf") c.boosting.min_samples_leaf = as_int();
  else if (k == "boosting.shrinkage") c.boosting.shrinkage = real();
  else if (k == "boosting.alpha") c.boosting.alpha = real();
  else if (k == "pipeline.exclude_matched") c.exclude_matched_from_source = parse_bool(key, value);
  else if (k == "pipeline.clamp") c.clamp_predictions = parse_bool(key, value);
  else if (k == "pipeline.round") c.round_predictions = parse_bool(key, value);
  else if (k == "pipeline.project_synthetic") c.project_synthetic = parse_bool(key, value);
  else throw ValidationError("unknown configuration key '" + k + "'");
}

std::uint64_t config_hash(const PipelineConfig& config) {
  std::string all;
  for (const auto& [k, v] : config_entries(config)) all += k + '=' + v + '\n';
  return stable_hash(all);
}

std::uint64_t fold_seed(std::uint64_t master, std::string_view target_id, Movement m) {
  return derive_seed(derive_seed(master, "fold:" + std::string(target_id)), movement_name(m));
}

// ---------------------------------------------------------------------------------------------

PreparedFold prepare_fold(const Dataset& source, const TargetFeatures& target,
                          const PipelineConfig& config) {
  config.validate();
  if (!source.labeled()) throw StageError("input", "source instances must all carry labels");
  if (target.size() == 0) throw StageError("input", "target has no instances");

  PreparedFold fold;
  fold.movement = config.movement;
  const MatrixXd x = source.features();
  const VectorXd y = source.labels(config.movement);

  in_stage("lasso", [&] {
    if (config.lasso.lambda) {
      fold.lambda = *config.lasso.lambda;
    } else {
      LassoCvOptions cv;
      cv.folds = config.lasso.folds;
      cv.n_lambdas = config.lasso.n_lambdas;
      cv.min_ratio = config.lasso.min_ratio;
      cv.tol = config.lasso.tol;
      cv.max_sweeps = config.lasso.max_sweeps;
      cv.seed = derive_seed(config.seed, "lasso");
      fold.lambda = cross_validate_lambda(x, y, cv).best_lambda;
    }
    fold.lasso = fit_lasso(x, y, fold.lambda, config.lasso.tol, config.lasso.max_sweeps);
    if (!fold.lasso.converged)
      fold.warnings.push_back("lasso: coordinate descent stopped at max_sweeps before converging");
    fold.selected = select_features(fold.lasso);
    if (fold.selected.empty()) {
      fold.selection_fallback = true;
      fold.selected.resize(FeatureSchema::kSize);
      for (std::size_t j = 0; j < FeatureSchema::kSize; ++j) fold.selected[j] = j;
      fold.warnings.push_back("lasso: no feature selected; using the full feature set");
    }
  });

  std::vector<Index> cols(fold.selected.begin(), fold.selected.end());
  fold.source.x = x(Eigen::all, cols);
  fold.source.y = y;
  const MatrixXd target_all = target.features();
  fold.target_x = target_all(Eigen::all, cols);

  const auto& params = fold.lasso.standardization;
  const MatrixXd zs = standardized(x, params, fold.selected);
  const MatrixXd zt = standardized(target_all, params, fold.selected);
  const auto a0 = MetricMatrix::identity(static_cast<Index>(cols.size()));

  in_stage("itml", [&] {
    ConstraintOptions opts = config.constraints;
    opts.seed = derive_seed(config.seed, "constraints");
    fold.constraints = build_constraints(zs, y, a0, opts);
    for (const auto& w : fold.constraints.warnings) fold.warnings.push_back("constraints: " + w);
    fold.itml = fit_itml(zs, fold.constraints, a0, config.itml);
    if (!fold.itml.converged)
      fold.warnings.push_back("itml: stopped at max_passes before converging");
    for (const auto& w : fold.itml.warnings) fold.warnings.push_back("itml: " + w);
  });

  in_stage("matching", [&] {
    fold.matched_index = match_source_to_target(fold.itml.metric, zt, zs);
    std::vector<Index> rows(fold.matched_index.begin(), fold.matched_index.end());
    fold.matched.x = fold.source.x(rows, Eigen::all);
    fold.matched.y = y(rows);
  });
  return fold;
}

LabeledSet substitute_target(const LabeledSet& matched, const AugmentedSet& augmented) {
  if (augmented.y.size() == 0) throw ValidationError("substitute: augmented set is empty");
  if (augmented.x.rows() != augmented.y.size())
    throw ValidationError("substitute: augmented features and labels differ in length");
  if (augmented.original != static_cast<std::size_t>(matched.size()) ||
      augmented.x.cols() != matched.x.cols())
    throw ValidationError("substitute: augmented set was not produced from this matched set");
  return LabeledSet{augmented.x, augmented.y};
}

LabeledSet build_pseudo_target(const PreparedFold& fold, const PipelineConfig& config) {
  if (config.gmm.samples == 0) return fold.matched;
  return in_stage("gmm", [&] {
    if (config.gmm.components > fold.matched.size())
      throw ValidationError("n_components " + std::to_string(config.gmm.components) +
                            " exceeds the matched-set size " + std::to_string(fold.matched.size()));
    EMConfig em;
    em.tol = config.gmm.tol;
    em.max_iter = config.gmm.max_iter;
    em.ridge = config.gmm.ridge;
    em.n_init = config.gmm.n_init;
    em.seed = derive_seed(config.seed, "gmm");
    const AugmentedSet aug = augment(fold.matched.x, fold.matched.y, config.gmm.components,
                                     config.gmm.samples, em);
    LabeledSet pseudo = substitute_target(fold.matched, aug);
    if (config.project_synthetic) project_to_schema(pseudo, fold);
    return pseudo;
  });
}

EstimationResult train_and_predict(const PreparedFold& fold, const LabeledSet& pseudo_target,
                                   const PipelineConfig& config) {
  EstimationResult out;
  out.pseudo_target_size = config.uses_pseudo_target() ? static_cast<std::size_t>(pseudo_target.size()) : 0;
  in_stage("boosting", [&] {
    TrainConfig train = config.boosting;
    train.seed = derive_seed(config.seed, "boosting");
    LabeledSet source = fold.source;
    if (config.exclude_matched_from_source && config.uses_pseudo_target()) {
      std::vector<bool> drop(static_cast<std::size_t>(source.size()), false);
      for (auto i : fold.matched_index) drop[i] = true;
      std::vector<Index> keep;
      for (Index i = 0; i < source.size(); ++i)
        if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
      if (keep.empty()) throw ValidationError("every source row is matched; nothing left to exclude from");
      source = LabeledSet{fold.source.x(keep, Eigen::all), fold.source.y(keep)};
    }
    out.model = config.uses_pseudo_target() ? fit_gbbw(source, pseudo_target, train)
                                            : fit_gradient_boosting(source, train);
  });
  out.predictions = predict(out.model, fold.target_x);
  if (config.clamp_predictions) out.predictions = out.predictions.cwiseMax(0.0);
  if (config.round_predictions) out.predictions = out.predictions.array().round();
  return out;
}

Estimation run_estimation(const Dataset& source, const TargetFeatures& target,
                          const PipelineConfig& config) {
  Estimation e;
  e.fold = prepare_fold(source, target, config);
  const LabeledSet pseudo =
      config.uses_pseudo_target() ? build_pseudo_target(e.fold, config) : LabeledSet{};
  e.result = train_and_predict(e.fold, pseudo, config);
  e.result.warnings.insert(e.result.warnings.begin(), e.fold.warnings.begin(), e.fold.warnings.end());
  return e;
}

Metrics evaluate(const VectorXd& y_true, const VectorXd& y_pred) {
  if (y_true.size() != y_pred.size())
    throw ValidationError("evaluate: " + std::to_string(y_true.size()) + " labels but " +
                          std::to_string(y_pred.size()) + " predictions");
  if (y_true.size() == 0) throw ValidationError("evaluate: empty vectors");
  const VectorXd d = y_true - y_pred;
  const auto n = static_cast<double>(d.size());
  Metrics m;
  m.mae = d.cwiseAbs().sum() / n;
  m.rmse = std::sqrt(d.squaredNorm() / n);
  return m;
}

// ---------------------------------------------------------------------------------------------

std::optional<Metrics> EvaluationReport::mean(std::string_view model, Movement m) const {
  Metrics sum;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.model != model || r.movement != m || !r.metrics) continue;
    sum.mae += r.metrics->mae;
    sum.rmse += r.metrics->rmse;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return Metrics{sum.mae / static_cast<double>(n), sum.rmse / static_cast<double>(n)};
}

std::size_t EvaluationReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const FoldRow& r) { return !r.metrics; }));
}

EvaluationReport leave_one_out(const Dataset& data, const std::vector<PipelineConfig>& configs,
                               int jobs) {
  if (configs.empty()) throw ValidationError("leave-one-out: no configuration given");
  for (const auto& c : configs) c.validate();
  const auto ids = checked_ids(data);

  // Configs sharing the selection/metric stages, in first-seen order.
  std::vector<std::vector<std::size_t>> groups;
  {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      auto [it, fresh] = index.emplace(prepare_key(configs[i]), groups.size());
      if (fresh) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  }

  std::vector<std::vector<FoldRow>> per_fold(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t f) {
    const DomainSplit split = split_domains(data, ids[f]);
    auto& out = per_fold[f];
    out.resize(configs.size());
    for (std::size_t i = 0; i < configs.size(); ++i) {
      out[i].model = configs[i].model;
      out[i].movement = configs[i].movement;
      out[i].intersection_id = ids[f];
      out[i].n_instances = split.target_features.size();
    }
    for (const auto& group : groups) {
      PipelineConfig first = configs[group.front()];
      first.seed = fold_seed(first.seed, ids[f], first.movement);
      std::optional<PreparedFold> fold;
      try {
        fold = prepare_fold(split.source, split.target_features, first);
      } catch (const Error& e) {
        for (auto i : group) out[i].message = e.what();
        continue;
      }
      std::map<std::string, LabeledSet> pseudo_cache;
      for (auto i : group) {
        PipelineConfig c = configs[i];
        c.seed = first.seed;
        try {
          LabeledSet pseudo;
          if (c.uses_pseudo_target()) {
            const std::string key = finish_key(c);
            auto it = pseudo_cache.find(key);
            if (it == pseudo_cache.end())
              it = pseudo_cache.emplace(key, build_pseudo_target(*fold, c)).first;
            pseudo = it->second;
          }
          const auto result = train_and_predict(*fold, pseudo, c);
          out[i].metrics = evaluate(split.held_out_labels.movement(c.movement), result.predictions);
        } catch (const Error& e) {
          out[i].message = e.what();
        }
      }
    }
  });

  EvaluationReport report;
  report.seed = configs.front().seed;
  std::string hashes;
  for (const auto& c : configs) {
    if (std::find(report.models.begin(), report.models.end(), c.model) == report.models.end())
      report.models.push_back(c.model);
    hashes += std::to_string(config_hash(c)) + ';';
  }
  report.config_hash = configs.size() == 1 ? config_hash(configs.front()) : stable_hash(hashes);
  for (auto& fold_rows : per_fold)
    for (auto& r : fold_rows) report.rows.push_back(std::move(r));
  auto model_rank = [&](const std::string& m) {
    return std::find(report.models.begin(), report.models.end(), m) - report.models.begin();
  };
  std::stable_sort(report.rows.begin(), report.rows.end(), [&](const FoldRow& a, const FoldRow& b) {
    const auto ra = model_rank(a.model), rb = model_rank(b.model);
    if (ra != rb) return ra < rb;
    if (a.movement != b.movement) return a.movement < b.movement;
    return a.intersection_id < b.intersection_id;
  });
  return report;
}

EvaluationReport leave_one_out(const Dataset& data, const PipelineConfig& config, int jobs) {
  return leave_one_out(data, std::vector<PipelineConfig>{config}, jobs);
}

SweepResult ablation_sweep(const Dataset& data, const SweepGrid& grid,
                           const std::vector<PipelineConfig>& base, int jobs) {
  if (grid.size() == 0) throw ValidationError("sweep: every grid axis needs at least one value");
  if (base.empty()) throw ValidationError("sweep: no base configuration given");
  for (int k : grid.components)
    if (k < 1) throw ValidationError("sweep: n_components values must be >= 1");
  for (double a : grid.alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("sweep: alpha values must lie in [0, 1]");
  for (const auto& c : base) c.validate();
  const auto ids = checked_ids(data);

  const std::size_t n_cells = grid.size();
  const std::size_t n_alpha = grid.alphas.size();
  auto cell_index = [&](std::size_t ki, std::size_t mi, std::size_t ai) {
    return (ki * grid.samples.size() + mi) * n_alpha + ai;
  };
  auto cell_config = [&](const PipelineConfig& b, std::size_t cell) {
    PipelineConfig c = b;
    c.gmm.components = grid.components[cell / (grid.samples.size() * n_alpha)];
    c.gmm.samples = grid.samples[(cell / n_alpha) % grid.samples.size()];
    c.boosting.alpha = grid.alphas[cell % n_alpha];
    return c;
  };

  struct Outcome {
    std::optional<Metrics> metrics;
    bool skipped = false;
    std::string message;
  };
  // outcome[fold][base][cell]
  std::vector<std::vector<std::vector<Outcome>>> outcome(
      ids.size(), std::vector<std::vector<Outcome>>(base.size(), std::vector<Outcome>(n_cells)));

  parallel_for(ids.size(), jobs, [&](std::size_t f) {
    const DomainSplit split = split_domains(data, ids[f]);
    const VectorXd truth_cache[3] = {split.held_out_labels.movement(Movement::left),
                                     split.held_out_labels.movement(Movement::through),
                                     split.held_out_labels.movement(Movement::right)};
    for (std::size_t b = 0; b < base.size(); ++b) {
      auto& cells = outcome[f][b];
      PipelineConfig first = base[b];
      first.seed = fold_seed(first.seed, ids[f], first.movement);
      std::optional<PreparedFold> fold;
      try {
        fold = prepare_fold(split.source, split.target_features, first);
      } catch (const Error& e) {
        for (auto& o : cells) o.message = e.what();
        continue;
      }
      const VectorXd& truth = truth_cache[static_cast<int>(first.movement)];
      for (std::size_t ki = 0; ki < grid.components.size(); ++ki) {
        for (std::size_t mi = 0; mi < grid.samples.size(); ++mi) {
          std::optional<LabeledSet> pseudo;
          std::string pseudo_error;
          for (std::size_t ai = 0; ai < n_alpha; ++ai) {
            const std::size_t cell = cell_index(ki, mi, ai);
            PipelineConfig c = cell_config(first, cell);
            auto& o = cells[cell];
            if (c.uses_mixture() && c.gmm.components > fold->matched.size()) {
              o.skipped = true;
              o.message = "n_components exceeds the matched-set size";
              continue;
            }
            try {
              LabeledSet p;
              if (c.uses_pseudo_target()) {
                if (!pseudo && pseudo_error.empty()) {
                  try {
                    pseudo = build_pseudo_target(*fold, c);
                  } catch (const Error& e) {
                    pseudo_error = e.what();
                  }
                }
                if (!pseudo) throw StageError("gmm", pseudo_error);
                p = *pseudo;
              }
              o.metrics = evaluate(truth, train_and_predict(*fold, p, c).predictions);
            } catch (const StageError& e) {
              o.message = pseudo_error.empty() ? e.what() : pseudo_error;
            } catch (const Error& e) {
              o.message = e.what();
            }
          }
        }
      }
    }
  });

  SweepResult result;
  result.seed = base.front().seed;
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    const PipelineConfig shape = cell_config(base.front(), cell);
    SweepCell out;
    out.components = shape.gmm.components;
    out.samples = shape.gmm.samples;
    out.alpha = shape.boosting.alpha;
    out.status = "ok";
    for (std::size_t b = 0; b < base.size(); ++b) {
      Metrics sum;
      std::size_t n = 0;
      for (std::size_t f = 0; f < ids.size(); ++f) {
        const auto& o = outcome[f][b][cell];
        if (o.skipped) {
          out.status = "skipped";
          if (out.message.empty())
            out.message = std::string(movement_name(base[b].movement)) + " fold " + ids[f] + ": " + o.message;
        } else if (!o.metrics) {
          if (out.status == "ok") out.status = "failed";
          if (out.message.empty())
            out.message = std::string(movement_name(base[b].movement)) + " fold " + ids[f] + ": " + o.message;
        } else {
          sum.mae += o.metrics->mae;
          sum.rmse += o.metrics->rmse;
          ++n;
        }
      }
      std::optional<Metrics> mean;
      if (n > 0 && out.status != "skipped")
        mean = Metrics{sum.mae / static_cast<double>(n), sum.rmse / static_cast<double>(n)};
      out.metrics.emplace_back(base[b].movement, mean);
    }
    result.cells.push_back(std::move(out));
  }
  return result;
}

// ---------------------------------------------------------------------------------------------

void write_summary(const EvaluationReport& report, std::ostream& out) {
  out << "metric,model,left,through,right\n";
  for (const char* metric : {"MAE", "RMSE"}) {
    for (const auto& model : report.models) {
      out << metric << ',' << text::csv_field(model);
      for (Movement m : kMovements) {
        const auto mean = report.mean(model, m);
        std::optional<double> v;
        if (mean) v = metric[0] == 'M' ? mean->mae : mean->rmse;
        out << ',' << cell_text(v);
      }
      out << '\n';
    }
  }
}

void write_folds(const EvaluationReport& report, std::ostream& out) {
  out << "model,movement,intersection_id,n_instances,mae,rmse,status,message\n";
  for (const auto& r : report.rows) {
    out << text::csv_field(r.model) << ',' << movement_name(r.movement) << ','
        << text::csv_field(r.intersection_id) << ',' << r.n_instances << ',';
    if (r.metrics)
      out << format_number(r.metrics->mae) << ',' << format_number(r.metrics->rmse) << ",ok,";
    else
      out << ",,failed,";
    out << text::csv_field(r.message) << '\n';
  }
}

void write_sweep(const SweepResult& result, std::ostream& out) {
  out << "n_components,n_samples,alpha,status";
  std::vector<Movement> movements;
  if (!result.cells.empty())
    for (const auto& [m, _] : result.cells.front().metrics) movements.push_back(m);
  for (Movement m : movements) out << ',' << movement_name(m) << "_mae," << movement_name(m) << "_rmse";
  out << ",message\n";
  for (const auto& c : result.cells) {
    out << c.components << ',' << c.samples << ',' << format_number(c.alpha) << ',' << c.status;
    for (const auto& [m, metrics] : c.metrics) {
      if (metrics)
        out << ',' << format_number(metrics->mae) << ',' << format_number(metrics->rmse);
      else
        out << ",,";
    }
    out << ',' << text::csv_field(c.message) << '\n';
  }
}

}  // namespace tmcda

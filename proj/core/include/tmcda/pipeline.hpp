#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tmcda/boosting.hpp"
#include "tmcda/dataset.hpp"
#include "tmcda/gmm.hpp"
#include "tmcda/itml.hpp"
#include "tmcda/lasso.hpp"

namespace tmcda {

enum class Variant { full, itml_gbbw, source_only };

Variant parse_variant(std::string_view name);  // full | itml-gbbw | source-only
std::string_view variant_name(Variant v);
// Row label used in summary reports: ITMLGMM-GBBW, ITML-GBBW, GB.
std::string_view variant_model(Variant v);

struct LassoSettings {
  std::optional<double> lambda;  // unset: chosen by cross-validation
  int folds = 5;
  int n_lambdas = 50;
  double min_ratio = 1e-3;
  double tol = 1e-7;
  int max_sweeps = 10000;
};

struct GmmSettings {
  int components = 2;
  std::size_t samples = 40;
  double tol = 1e-6;
  int max_iter = 300;
  std::optional<double> ridge;
  int n_init = 5;
};

// Mixture size and sample count tuned per movement: left (2, 40), through (4, 100), right (5, 180).
GmmSettings default_gmm(Movement m);

struct PipelineConfig {
  Movement movement = Movement::left;
  std::string model = "ITMLGMM-GBBW";  // label carried into reports
  LassoSettings lasso;
  ConstraintOptions constraints;  // seed is overwritten from `seed`
  ItmlOptions itml;
  GmmSettings gmm;
  TrainConfig boosting;  // seed is overwritten from `seed`
  bool exclude_matched_from_source = false;
  bool clamp_predictions = true;
  bool round_predictions = false;
  // Round and clip synthetic rows onto the schema and the matched-set range.
  bool project_synthetic = true;
  std::uint64_t seed = 0;

  static PipelineConfig defaults(Movement m);

  // Empty when valid; otherwise one message per problem.
  std::vector<std::string> problems() const;
  void validate() const;  // throws ValidationError listing every problem

  // The pseudo-target set takes part in training.
  bool uses_pseudo_target() const noexcept { return boosting.alpha > 0.0; }
  bool uses_mixture() const noexcept { return uses_pseudo_target() && gmm.samples > 0; }
};

// Applies a named variant: itml-gbbw drops the mixture samples, source-only sets alpha to 0.
PipelineConfig with_variant(PipelineConfig config, Variant v);

// Every tunable setting as (dotted key, value) pairs, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& config);
// Sets one dotted key; throws ValidationError for unknown keys or malformed values.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);
std::uint64_t config_hash(const PipelineConfig& config);

// Per-fold, per-movement seed derived from the master seed.
std::uint64_t fold_seed(std::uint64_t master, std::string_view target_id, Movement m);

/// Stages that do not depend on the mixture or the balance weight: feature selection,
/// metric learning and matching.
struct PreparedFold {
  Movement movement = Movement::left;
  double lambda = 0.0;
  LassoModel lasso;
  std::vector<std::size_t> selected;  // schema columns feeding later stages
  bool selection_fallback = false;
  ConstraintSet constraints;
  ItmlResult itml{MetricMatrix::identity(1), {}, {}, false, 0, 0, {}, {}};
  LabeledSet source;         // selected columns, original units
  Eigen::MatrixXd target_x;  // selected columns, original units
  LabeledSet matched;        // source rows matched to each target row, original units
  std::vector<std::size_t> matched_index;
  std::vector<std::string> warnings;
};

PreparedFold prepare_fold(const Dataset& source, const TargetFeatures& target,
                          const PipelineConfig& config);

// The augmented set stands in for labeled target data. Throws ValidationError when empty.
LabeledSet substitute_target(const LabeledSet& matched, const AugmentedSet& augmented);

// Matched set, augmented by the mixture when the config asks for samples.
LabeledSet build_pseudo_target(const PreparedFold& fold, const PipelineConfig& config);

struct EstimationResult {
  Eigen::VectorXd predictions;
  BoostedModel model;
  std::size_t pseudo_target_size = 0;
  std::vector<std::string> warnings;
};

EstimationResult train_and_predict(const PreparedFold& fold, const LabeledSet& pseudo_target,
                                   const PipelineConfig& config);

struct Estimation {
  PreparedFold fold;
  EstimationResult result;
};

/// Select, learn the metric, match, augment, substitute, train and predict for one movement.
/// Only source labels are visible here. Stage failures surface as StageError.
Estimation run_estimation(const Dataset& source, const TargetFeatures& target,
                          const PipelineConfig& config);

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
};

Metrics evaluate(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

struct FoldRow {
  std::string model;
  Movement movement = Movement::left;
  std::string intersection_id;
  std::size_t n_instances = 0;
  std::optional<Metrics> metrics;  // empty for a failed fold
  std::string message;
};

struct EvaluationReport {
  std::vector<std::string> models;  // in first-seen order
  std::vector<FoldRow> rows;        // sorted by model order, movement, intersection
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  // Arithmetic mean over successful folds; empty when none succeeded or none ran.
  std::optional<Metrics> mean(std::string_view model, Movement m) const;
  std::size_t failures() const;
};

/// Each intersection in turn is the target; every config is run on every fold and scored
/// against the held-out labels. Configs that share selection and metric settings share
/// those stages. A failed fold is recorded with its message and the run continues.
EvaluationReport leave_one_out(const Dataset& data, const std::vector<PipelineConfig>& configs,
                               int jobs = 1);
EvaluationReport leave_one_out(const Dataset& data, const PipelineConfig& config, int jobs = 1);

struct SweepGrid {
  std::vector<int> components;
  std::vector<std::size_t> samples;
  std::vector<double> alphas;

  std::size_t size() const noexcept { return components.size() * samples.size() * alphas.size(); }
};

struct SweepCell {
  int components = 0;
  std::size_t samples = 0;
  double alpha = 0.0;
  std::string status;  // ok | skipped | failed
  std::string message;
  std::vector<std::pair<Movement, std::optional<Metrics>>> metrics;  // one per base config
};

struct SweepResult {
  std::vector<SweepCell> cells;  // components-major, then samples, then alpha
  std::uint64_t seed = 0;
};

/// Leave-one-out for every (K, M, alpha) cell, once per base config (one per movement).
/// A cell is skipped when K exceeds the matched-set size of some fold.
SweepResult ablation_sweep(const Dataset& data, const SweepGrid& grid,
                           const std::vector<PipelineConfig>& base, int jobs = 1);

// Reports. Numbers use the shortest round-trip form.
void write_summary(const EvaluationReport& report, std::ostream& out);
void write_folds(const EvaluationReport& report, std::ostream& out);
void write_sweep(const SweepResult& result, std::ostream& out);

}  // namespace tmcda

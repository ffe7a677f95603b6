#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace tmcda {

enum class Loss { squared_error };

Loss parse_loss(std::string_view name);
std::string_view loss_name(Loss loss);

// Negative gradient of the loss at F; for squared error, y - F.
Eigen::VectorXd pseudo_residuals(Loss loss, const Eigen::VectorXd& y, const Eigen::VectorXd& f);

struct TreeConfig {
  int max_depth = 3;
  int min_samples_leaf = 2;
};

/// Binary axis-aligned regression tree. Node 0 is the root; leaves have feature == -1.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  RegressionTree() = default;
  explicit RegressionTree(std::vector<Node> nodes);

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t leaf_count() const;
  int depth() const;

 private:
  std::vector<Node> nodes_;
};

/// Greedy weighted variance-reduction tree. Leaves hold the weighted mean residual.
/// Zero-weight rows take no part in split search, thresholds, leaf sizes or leaf values.
/// Split ties resolve to the lowest feature index, then the lowest threshold.
RegressionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& residuals,
                        const Eigen::VectorXd& weights, const TreeConfig& config);

// Weighted line search for squared loss: sum w r h / sum w h^2 with r = y - F (0 if h == 0).
double compute_gamma(const Eigen::VectorXd& f_prev, const Eigen::VectorXd& h,
                     const Eigen::VectorXd& y, const Eigen::VectorXd& w);

struct TrainConfig {
  int n_stages = 200;
  int max_depth = 3;
  int min_samples_leaf = 2;
  double shrinkage = 0.1;
  double alpha = 0.5;  // weight of the pseudo-target set; source rows get 1 - alpha
  // No step of the fit is random; the seed is carried for provenance.
  std::uint64_t seed = 0;
};

struct LabeledSet {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const noexcept { return y.size(); }
};

struct BoostedStage {
  double gamma = 0.0;
  RegressionTree tree;
};

struct BoostedModel {
  double init = 0.0;  // F_0
  std::vector<BoostedStage> stages;
  double shrinkage = 1.0;
  double alpha = 0.0;
  Loss loss = Loss::squared_error;
  Eigen::Index n_features = 0;
};

// Per-stage diagnostics: weighted training loss (1 - alpha) sum L_source + alpha sum L_target.
struct BoostingTrace {
  std::vector<double> weighted_loss;  // index 0 is F_0, then one entry per stage
};

/// Gradient boosting with balanced weighting of a source set (weight 1 - alpha) and a
/// pseudo-target set (weight alpha).
BoostedModel fit_gbbw(const LabeledSet& source, const LabeledSet& pseudo_target,
                      const TrainConfig& config, BoostingTrace* trace = nullptr);

/// Plain gradient boosting with unit weights; the alpha of `config` is ignored.
BoostedModel fit_gradient_boosting(const LabeledSet& data, const TrainConfig& config,
                                   BoostingTrace* trace = nullptr);

// F_0 + sum over the first `stages` stages of shrinkage * gamma_m * h_m(x).
Eigen::VectorXd predict(const BoostedModel& model, const Eigen::MatrixXd& x);
Eigen::VectorXd predict(const BoostedModel& model, const Eigen::MatrixXd& x, std::size_t stages);
Eigen::VectorXd predict_counts(const BoostedModel& model, const Eigen::MatrixXd& x);  // clamped at 0

void save_model(const BoostedModel& model, std::ostream& out);
BoostedModel load_model(std::istream& in);

}  // namespace tmcda

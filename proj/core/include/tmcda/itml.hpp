#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace tmcda {

/// Symmetric positive-definite matrix parameterising d_A(x, y) = (x - y)' A (x - y).
class MetricMatrix {
 public:
  // Throws NumericalError unless `a` is square, symmetric within 1e-10 and positive definite.
  explicit MetricMatrix(Eigen::MatrixXd a);

  static MetricMatrix identity(Eigen::Index dim);

  const Eigen::MatrixXd& matrix() const noexcept { return a_; }
  Eigen::Index dim() const noexcept { return a_.rows(); }

 private:
  Eigen::MatrixXd a_;
};

double mahalanobis_distance(const MetricMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& xi,
                            const Eigen::Ref<const Eigen::VectorXd>& xj);

// tr(A A0^-1) - log det(A A0^-1) - n
double logdet_divergence(const MetricMatrix& a, const MetricMatrix& a0);

using IndexPair = std::pair<std::size_t, std::size_t>;

struct ConstraintSet {
  std::vector<IndexPair> similar;
  std::vector<IndexPair> dissimilar;
  double upper = 0.0;  // u
  double lower = 0.0;  // l
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return similar.size() + dissimilar.size(); }
};

struct ConstraintOptions {
  double similar_percentile = 10.0;  // s; dissimilar pairs use 100 - s
  std::size_t max_per_set = 200;
  std::size_t candidate_pairs = 4000;  // all pairs are used when there are fewer
  double upper_percentile = 5.0;
  double lower_percentile = 95.0;
  std::uint64_t seed = 0;
};

// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// Builds similarity/dissimilarity pairs from label differences.
///
/// Candidate pairs are sampled (or enumerated when few). A pair is dissimilar when
/// |y_i - y_j| > 0 and lies at or above the (100 - s)-th percentile of the candidate label
/// differences, otherwise similar when it lies at or below the s-th percentile. u and l are
/// percentiles of the candidate distances under A0.
ConstraintSet build_constraints(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const MetricMatrix& a0, const ConstraintOptions& options);

struct ItmlOptions {
  double gamma = 1.0;  // slack trade-off
  int max_passes = 100;
  double tol = 1e-3;  // on the largest dual change within a pass
  // Check positive definiteness after every single projection instead of once per pass.
  bool verify_each_projection = false;
  bool record_trace = true;
};

struct ItmlPass {
  int pass = 0;
  double max_dual_change = 0.0;
  std::size_t violations = 0;  // constraints outside their slack-adjusted bound after the pass
  double divergence = 0.0;     // D_ld(A, A0)
  double slack_divergence = 0.0;  // D_ld(diag(xi), diag(xi0))
  double objective = 0.0;         // divergence + gamma * slack_divergence
  double dual = 0.0;              // Lagrangian value at the current multipliers
};

struct ItmlResult {
  MetricMatrix metric;
  Eigen::VectorXd slack;    // xi, one entry per constraint (similar first)
  Eigen::VectorXd duals;    // lambda, one entry per constraint
  bool converged = false;
  int passes = 0;
  std::size_t skipped = 0;  // projections skipped for zero-distance pairs
  std::vector<ItmlPass> trace;
  std::vector<std::string> warnings;
};

/// LogDet metric learning by cyclic Bregman projections with slack.
/// Rows of `x` are instances; constraints index rows.
ItmlResult fit_itml(const Eigen::MatrixXd& x, const ConstraintSet& constraints,
                    const MetricMatrix& a0, const ItmlOptions& options);

void write_itml_trace(const std::vector<ItmlPass>& trace, std::ostream& out);

/// For each target row, the index of the source row with the smallest d_A; ties go to the
/// lowest source index.
std::vector<std::size_t> match_source_to_target(const MetricMatrix& a,
                                                const Eigen::MatrixXd& target,
                                                const Eigen::MatrixXd& source);

struct MatchedSet {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::size_t> source_index;
};

MatchedSet match_labeled(const MetricMatrix& a, const Eigen::MatrixXd& target,
                         const Eigen::MatrixXd& source_x, const Eigen::VectorXd& source_y);

}  // namespace tmcda

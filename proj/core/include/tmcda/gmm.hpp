#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace tmcda {

struct GaussianMixture {
  Eigen::VectorXd weights;  // pi_k, non-negative, sum to 1
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  std::size_t components() const noexcept { return means.size(); }
  Eigen::Index dim() const noexcept { return means.empty() ? 0 : means.front().size(); }

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  // Sum of log densities over the rows of x.
  double log_likelihood(const Eigen::MatrixXd& x) const;
};

struct EMConfig {
  double tol = 1e-6;  // relative log-likelihood improvement
  int max_iter = 300;
  std::optional<double> ridge;  // absolute; default 1e-6 * mean diagonal variance of the data
  int n_init = 5;
  std::uint64_t seed = 0;
};

double gaussian_log_pdf(const Eigen::Ref<const Eigen::VectorXd>& mean,
                        const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                        const Eigen::Ref<const Eigen::VectorXd>& x);
// Density via a Cholesky-factorised log density. Throws NumericalError for a singular covariance.
double gaussian_pdf(const Eigen::Ref<const Eigen::VectorXd>& mean,
                    const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                    const Eigen::Ref<const Eigen::VectorXd>& x);

// gamma_ik for every row of x; rows sum to one.
Eigen::MatrixXd responsibilities(const GaussianMixture& model, const Eigen::MatrixXd& x);

struct GmmFit {
  GaussianMixture model;
  std::vector<double> log_likelihood_trace;  // after each EM iteration of the chosen restart
  int iterations = 0;
  bool converged = false;
  int restart = 0;  // index of the chosen restart
  double ridge = 0.0;
  int reinitialisations = 0;
};

/// EM for a full-covariance mixture. Restarts are seeded k-means++ style from data points with
/// uniform weights and the pooled covariance; the restart with the highest final
/// log-likelihood wins (ties go to the lower restart index).
GmmFit fit_gmm(const Eigen::MatrixXd& x, int components, const EMConfig& config);

// M draws; rows are samples. Deterministic in seed.
Eigen::MatrixXd sample_gmm(const GaussianMixture& model, std::size_t count, std::uint64_t seed);

void write_em_trace(const GmmFit& fit, std::ostream& out);

struct AugmentedSet {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::size_t original = 0;  // the first `original` rows are the input rows
};

/// Fits a mixture to joint (features, label) vectors, draws `samples` synthetic joint vectors,
/// clamps their labels at zero and appends them to the input.
AugmentedSet augment(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int components,
                     std::size_t samples, const EMConfig& config);

}  // namespace tmcda

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

namespace tmcda {

/// Column centring/scaling used internally by the Lasso solver.
/// Scales are population standard deviations; zero-variance columns are flagged constant,
/// excluded from penalisation and never selected.
struct StandardizationParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> constant;
  double response_mean = 0.0;

  static StandardizationParams fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
};

/// L1-penalised least squares fit.
///
/// The solver minimises, over the standardised coefficients b,
///   (1 / 2n) * sum_i (y_i - b0 - sum_j z_ij b_j)^2 + lambda * sum_j |b_j|
/// with z the standardised predictors. Reported coefficients are mapped back to the original
/// column scale: beta_j = b_j / scale_j and intercept = mean(y) - sum_j beta_j mean_j, so
/// `objective` equals (1 / 2n) RSS(intercept, beta) + lambda * sum_j scale_j |beta_j|.
struct LassoModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;               // original scale
  Eigen::VectorXd standardized_coefficients;  // solver scale
  double lambda = 0.0;
  std::vector<std::size_t> selected;  // { j : coefficients[j] != 0 }, ascending
  double objective = 0.0;
  bool converged = false;
  int sweeps = 0;
  std::vector<double> objective_trace;  // objective after each sweep
  StandardizationParams standardization;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

LassoModel fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                     double tol = 1e-7, int max_sweeps = 10000);

// Objective of `model` re-evaluated on (x, y) from its original-scale coefficients.
double lasso_objective(const LassoModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Smallest lambda for which every coefficient is zero: max_j |<z_j, y - mean(y)>| / n.
double lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

std::vector<std::size_t> select_features(const LassoModel& model);

struct LassoCvOptions {
  int folds = 5;
  int n_lambdas = 50;
  double min_ratio = 1e-3;
  double tol = 1e-7;
  int max_sweeps = 10000;
  std::uint64_t seed = 0;
};

struct LassoCvResult {
  std::vector<double> lambdas;   // descending, lambda_max first
  std::vector<double> mean_mse;  // mean held-out squared error per lambda
  std::size_t best = 0;
  double best_lambda = 0.0;
};

/// K-fold cross-validation over a logarithmic grid from lambda_max down to
/// lambda_max * min_ratio; picks the lambda with the smallest mean validation error.
LassoCvResult cross_validate_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const LassoCvOptions& options);

/// Per-movement coefficient table over the feature schema (left, through, right columns).
struct CoefficientTable {
  std::array<Eigen::VectorXd, 3> columns;
};

CoefficientTable coefficient_report(const std::array<LassoModel, 3>& models);
void write_coefficient_report(const CoefficientTable& table, std::ostream& out);

}  // namespace tmcda

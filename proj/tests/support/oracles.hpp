#pragma once

// Independent reference implementations used only by tests. None of these call into the
// library's solvers; they share nothing but Eigen.

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// ---- lasso ----

struct Standardized {
  Eigen::MatrixXd z;  // centred, unit population variance; constant columns zeroed
  Eigen::VectorXd yc;
  Eigen::VectorXd mean, scale;
  double ymean = 0.0;
};

Standardized standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// FISTA on (1/2n)|yc - Z b|^2 + lambda |b|_1. Returns b on the standardized scale.
Eigen::VectorXd lasso_fista(const Standardized& s, double lambda, int max_iter = 200000,
                            double tol = 1e-14);

double lasso_objective(const Standardized& s, const Eigen::VectorXd& b, double lambda);

// Largest violation of the subgradient conditions at b (standardized scale).
double kkt_violation(const Standardized& s, const Eigen::VectorXd& b, double lambda);

// Ordinary least squares with intercept: returns (intercept, beta).
std::pair<double, Eigen::VectorXd> ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// ---- itml ----

double percentile_by_sort(std::vector<double> v, double q);

// Brute-force nearest source row (lowest index on ties) under d_A.
std::vector<std::size_t> nearest(const Eigen::MatrixXd& a, const Eigen::MatrixXd& target,
                                 const Eigen::MatrixXd& source);

double logdet_div(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a0);

// ---- gmm ----

// Direct evaluation of sum_i log sum_k pi_k N(x_i | mu_k, S_k) via LU determinants.
double mixture_loglik(const Eigen::VectorXd& weights, const std::vector<Eigen::VectorXd>& means,
                      const std::vector<Eigen::MatrixXd>& covs, const Eigen::MatrixXd& x);

// ---- boosting ----

struct Stump {
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;
};

// Best weighted single split by exhaustive search over every feature and midpoint; rows with
// zero weight are ignored. Ties keep the first candidate found (feature, then threshold).
Stump best_split(const Eigen::MatrixXd& x, const Eigen::VectorXd& r, const Eigen::VectorXd& w,
                 int min_leaf);

// argmin over a uniform grid of sum w (y - f - g h)^2.
double gamma_grid(const Eigen::VectorXd& f, const Eigen::VectorXd& h, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& w, double lo, double hi, int steps);

// Straight-line gradient boosting with balanced weights: F0 from the weighted mean, then per
// stage residuals, an exhaustively searched weighted tree, the closed-form step and the update.
Eigen::VectorXd gbbw_reference(const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                               const Eigen::MatrixXd& xt, const Eigen::VectorXd& yt, double alpha,
                               int stages, int depth, int min_leaf, double shrinkage,
                               const Eigen::MatrixXd& query);

// ---- random helpers ----

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace oracle

#include "tmcda/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "tmcda/dataset.hpp"
#include "tmcda/error.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double soft_threshold(double value, double threshold) {
  if (value > threshold) return value - threshold;
  if (value < -threshold) return value + threshold;
  return 0.0;
}

void check_inputs(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() != y.size()) throw ValidationError("lasso: row count of X and length of y differ");
  if (x.rows() < 2) throw ValidationError("lasso: at least two instances are required");
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("lasso: non-finite input");
}

// Covariance-update form of the problem: everything a sweep needs is p x p.
struct GramProblem {
  StandardizationParams params;
  std::vector<Index> active;  // non-constant columns
  MatrixXd gram;              // Z_a' Z_a / n
  VectorXd corr;              // Z_a' (y - ybar) / n
  double centred_ss = 0.0;    // |y - ybar|^2 / n
};

GramProblem make_problem(const MatrixXd& x, const VectorXd& y) {
  GramProblem prob;
  prob.params = StandardizationParams::fit(x, y);
  for (Index j = 0; j < x.cols(); ++j)
    if (!prob.params.constant[static_cast<std::size_t>(j)]) prob.active.push_back(j);
  const auto n = static_cast<double>(x.rows());
  MatrixXd z(x.rows(), static_cast<Index>(prob.active.size()));
  for (Index a = 0; a < z.cols(); ++a) {
    const Index j = prob.active[static_cast<std::size_t>(a)];
    z.col(a) = (x.col(j).array() - prob.params.mean(j)) / prob.params.scale(j);
  }
  const VectorXd yc = y.array() - prob.params.response_mean;
  prob.gram = z.transpose() * z / n;
  prob.corr = z.transpose() * yc / n;
  prob.centred_ss = yc.squaredNorm() / n;
  return prob;
}

double gram_objective(const GramProblem& prob, const VectorXd& b, double lambda) {
  const double rss_over_n = prob.centred_ss - 2.0 * prob.corr.dot(b) + b.dot(prob.gram * b);
  return 0.5 * std::max(rss_over_n, 0.0) + lambda * b.lpNorm<1>();
}

struct SolveResult {
  bool converged = false;
  int sweeps = 0;
  std::vector<double> trace;
};

// Cyclic coordinate descent on the active columns, starting from `b`.
SolveResult solve(const GramProblem& prob, double lambda, double tol, int max_sweeps, VectorXd& b,
                  bool keep_trace) {
  SolveResult result;
  const Index p = b.size();
  VectorXd grad = prob.corr - prob.gram * b;  // Z'(y - ybar - Zb) / n
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < p; ++j) {
      const double gjj = prob.gram(j, j);
      const double rho = grad(j) + gjj * b(j);
      const double updated = soft_threshold(rho, lambda) / gjj;
      const double delta = updated - b(j);
      if (delta != 0.0) {
        grad.noalias() -= prob.gram.col(j) * delta;
        b(j) = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    result.sweeps = sweep;
    if (keep_trace) result.trace.push_back(gram_objective(prob, b, lambda));
    if (max_change < tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

LassoModel assemble(const GramProblem& prob, const VectorXd& b, double lambda, Index cols) {
  LassoModel model;
  model.lambda = lambda;
  model.standardization = prob.params;
  model.standardized_coefficients = VectorXd::Zero(cols);
  model.coefficients = VectorXd::Zero(cols);
  for (std::size_t a = 0; a < prob.active.size(); ++a) {
    const Index j = prob.active[a];
    model.standardized_coefficients(j) = b(static_cast<Index>(a));
    model.coefficients(j) = b(static_cast<Index>(a)) / prob.params.scale(j);
  }
  model.intercept = prob.params.response_mean - model.coefficients.dot(prob.params.mean);
  for (Index j = 0; j < cols; ++j)
    if (model.coefficients(j) != 0.0) model.selected.push_back(static_cast<std::size_t>(j));
  model.objective = gram_objective(prob, b, lambda);
  return model;
}

}  // namespace

StandardizationParams StandardizationParams::fit(const MatrixXd& x, const VectorXd& y) {
  StandardizationParams p;
  const auto n = static_cast<double>(x.rows());
  p.mean = x.colwise().mean().transpose();
  p.scale = VectorXd::Ones(x.cols());
  p.constant.assign(static_cast<std::size_t>(x.cols()), false);
  for (Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - p.mean(j)).square().sum() / n;
    const double sd = std::sqrt(var);
    // Relative cut-off: columns that are constant up to rounding noise.
    if (!(sd > 1e-12 * std::max(1.0, std::abs(p.mean(j))))) {
      p.constant[static_cast<std::size_t>(j)] = true;
    } else {
      p.scale(j) = sd;
    }
  }
  p.response_mean = y.size() > 0 ? y.mean() : 0.0;
  return p;
}

VectorXd LassoModel::predict(const MatrixXd& x) const {
  if (x.cols() != coefficients.size())
    throw ValidationError("lasso predict: feature dimension mismatch");
  return (x * coefficients).array() + intercept;
}

LassoModel fit_lasso(const MatrixXd& x, const VectorXd& y, double lambda, double tol,
                     int max_sweeps) {
  check_inputs(x, y);
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ValidationError("lasso: lambda must be a finite value >= 0");
  if (!(tol > 0.0)) throw ValidationError("lasso: tol must be > 0");
  if (max_sweeps < 1) throw ValidationError("lasso: max_sweeps must be >= 1");

  const GramProblem prob = make_problem(x, y);
  VectorXd b = VectorXd::Zero(static_cast<Index>(prob.active.size()));
  const SolveResult solved = solve(prob, lambda, tol, max_sweeps, b, true);
  LassoModel model = assemble(prob, b, lambda, x.cols());
  model.converged = solved.converged;
  model.sweeps = solved.sweeps;
  model.objective_trace = solved.trace;
  return model;
}

double lasso_objective(const LassoModel& model, const MatrixXd& x, const VectorXd& y) {
  const VectorXd r = y - model.predict(x);
  double penalty = 0.0;
  for (Index j = 0; j < model.coefficients.size(); ++j)
    penalty += model.standardization.scale(j) * std::abs(model.coefficients(j));
  return r.squaredNorm() / (2.0 * static_cast<double>(x.rows())) + model.lambda * penalty;
}

double lambda_max(const MatrixXd& x, const VectorXd& y) {
  check_inputs(x, y);
  const GramProblem prob = make_problem(x, y);
  return prob.corr.size() == 0 ? 0.0 : prob.corr.cwiseAbs().maxCoeff();
}

std::vector<std::size_t> select_features(const LassoModel& model) { return model.selected; }

LassoCvResult cross_validate_lambda(const MatrixXd& x, const VectorXd& y,
                                    const LassoCvOptions& options) {
  check_inputs(x, y);
  if (options.folds < 2) throw ValidationError("lasso cv: folds must be >= 2");
  if (options.n_lambdas < 1) throw ValidationError("lasso cv: n_lambdas must be >= 1");
  if (!(options.min_ratio > 0.0 && options.min_ratio <= 1.0))
    throw ValidationError("lasso cv: min_ratio must lie in (0, 1]");
  const Index n = x.rows();
  if (n < options.folds) throw ValidationError("lasso cv: fewer instances than folds");

  LassoCvResult result;
  const double top = lambda_max(x, y);
  for (int k = 0; k < options.n_lambdas; ++k) {
    const double frac = options.n_lambdas == 1 ? 0.0 : static_cast<double>(k) / (options.n_lambdas - 1);
    result.lambdas.push_back(top * std::pow(options.min_ratio, frac));
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    fold_of[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(options.folds));

  std::vector<double> total(result.lambdas.size(), 0.0);
  for (int fold = 0; fold < options.folds; ++fold) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == fold ? test : train).push_back(i);
    const MatrixXd xt = x(train, Eigen::all);
    const VectorXd yt = y(train);
    const MatrixXd xv = x(test, Eigen::all);
    const VectorXd yv = y(test);

    const GramProblem prob = make_problem(xt, yt);
    VectorXd b = VectorXd::Zero(static_cast<Index>(prob.active.size()));
    for (std::size_t k = 0; k < result.lambdas.size(); ++k) {
      solve(prob, result.lambdas[k], options.tol, options.max_sweeps, b, false);
      const LassoModel model = assemble(prob, b, result.lambdas[k], x.cols());
      total[k] += (yv - model.predict(xv)).squaredNorm() / static_cast<double>(test.size());
    }
  }
  for (double t : total) result.mean_mse.push_back(t / options.folds);
  result.best = static_cast<std::size_t>(
      std::min_element(result.mean_mse.begin(), result.mean_mse.end()) - result.mean_mse.begin());
  result.best_lambda = result.lambdas[result.best];
  return result;
}

CoefficientTable coefficient_report(const std::array<LassoModel, 3>& models) {
  CoefficientTable table;
  for (std::size_t m = 0; m < 3; ++m) {
    if (models[m].coefficients.size() != static_cast<Index>(FeatureSchema::kSize))
      throw SchemaError("coefficient report: model for movement " +
                        std::string(movement_name(kMovements[m])) + " has " +
                        std::to_string(models[m].coefficients.size()) + " coefficients, expected " +
                        std::to_string(FeatureSchema::kSize));
    table.columns[m] = models[m].coefficients;
  }
  return table;
}

void write_coefficient_report(const CoefficientTable& table, std::ostream& out) {
  out << "variable,description,left,through,right\n";
  for (std::size_t j = 0; j < FeatureSchema::kSize; ++j) {
    out << FeatureSchema::names()[j] << ',' << text::csv_field(FeatureSchema::description(j));
    for (const auto& column : table.columns)
      out << ',' << text::format_number(column.size() ? column(static_cast<Index>(j)) : 0.0);
    out << '\n';
  }
}

}  // namespace tmcda

#include "tmcda/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include <Eigen/Cholesky>

#include "tmcda/error.hpp"
#include "tmcda/seed.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
// Responsibility mass below which a component counts as collapsed.
constexpr double kCollapsedMass = 1e-8;

struct Factor {
  Eigen::LLT<MatrixXd> llt;
  double log_norm = 0.0;  // -0.5 * (d log 2pi + log det Sigma)
};

Factor factorise(const MatrixXd& covariance) {
  Factor f{Eigen::LLT<MatrixXd>(covariance), 0.0};
  if (f.llt.info() != Eigen::Success)
    throw NumericalError("gaussian density: covariance is singular or not positive definite");
  const MatrixXd lower = f.llt.matrixL();
  const double logdet = 2.0 * lower.diagonal().array().log().sum();
  if (!std::isfinite(logdet))
    throw NumericalError("gaussian density: covariance is singular");
  f.log_norm = -0.5 * (static_cast<double>(covariance.rows()) * kLog2Pi + logdet);
  return f;
}

double log_pdf(const Factor& f, const VectorXd& mean, const Eigen::Ref<const VectorXd>& x) {
  const VectorXd z = f.llt.matrixL().solve(x - mean);
  return f.log_norm - 0.5 * z.squaredNorm();
}

// Row-wise log(pi_k N(x_i | mu_k, Sigma_k)).
MatrixXd weighted_log_densities(const GaussianMixture& model, const MatrixXd& x) {
  const auto k_count = static_cast<Index>(model.components());
  MatrixXd out(x.rows(), k_count);
  for (Index k = 0; k < k_count; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Factor f = factorise(model.covariances[uk]);
    const MatrixXd centred = x.rowwise() - model.means[uk].transpose();
    const MatrixXd z = f.llt.matrixL().solve(centred.transpose());
    const double log_weight =
        model.weights(k) > 0.0 ? std::log(model.weights(k)) : -std::numeric_limits<double>::infinity();
    out.col(k) = (f.log_norm + log_weight - 0.5 * z.colwise().squaredNorm().array()).transpose();
  }
  return out;
}

double log_sum_exp(const Eigen::Ref<const VectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

// E-step. Returns the log-likelihood and fills the responsibilities.
double expectation(const GaussianMixture& model, const MatrixXd& x, MatrixXd& resp) {
  resp = weighted_log_densities(model, x);
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double norm = log_sum_exp(resp.row(i).transpose());
    total += norm;
    resp.row(i) = (resp.row(i).array() - norm).exp();
  }
  return total;
}

MatrixXd biased_covariance(const MatrixXd& x) {
  const VectorXd mean = x.colwise().mean().transpose();
  const MatrixXd centred = x.rowwise() - mean.transpose();
  return centred.transpose() * centred / static_cast<double>(x.rows());
}

// k-means++ seeding of means from data points.
std::vector<VectorXd> seed_means(const MatrixXd& x, int components, std::mt19937_64& rng) {
  const Index n = x.rows();
  std::vector<VectorXd> means;
  std::uniform_int_distribution<Index> first(0, n - 1);
  means.push_back(x.row(first(rng)).transpose());
  VectorXd nearest = (x.rowwise() - means.back().transpose()).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(means.size()) < components) {
    const double total = nearest.sum();
    Index chosen = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double running = 0.0;
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        running += nearest(i);
        if (running >= target && nearest(i) > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = first(rng);
    }
    means.push_back(x.row(chosen).transpose());
    nearest = nearest.cwiseMin((x.rowwise() - means.back().transpose()).rowwise().squaredNorm());
  }
  return means;
}

struct RunResult {
  GaussianMixture model;
  std::vector<double> trace;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  int reinitialisations = 0;
};

// Covariance-dependent part of sum_i r_ik log N(x_i | mu, Sigma), given the scatter about mu.
double expected_loglik(const MatrixXd& cov, const MatrixXd& scatter, double mass) {
  const Factor f = factorise(cov);
  return mass * f.log_norm - 0.5 * f.llt.solve(scatter).trace();
}

RunResult run_em(const MatrixXd& x, int components, const EMConfig& config, double ridge,
                 const MatrixXd& pooled, std::uint64_t seed) {
  const Index n = x.rows();
  const Index d = x.cols();
  const MatrixXd ridge_eye = ridge * MatrixXd::Identity(d, d);
  std::mt19937_64 rng(seed);

  RunResult run;
  run.model.weights = VectorXd::Constant(components, 1.0 / components);
  run.model.means = seed_means(x, components, rng);
  run.model.covariances.assign(static_cast<std::size_t>(components), pooled + ridge_eye);

  MatrixXd resp;
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    const double ll = expectation(run.model, x, resp);
    if (!std::isfinite(ll)) throw NumericalError("em: log-likelihood is not finite");
    run.trace.push_back(ll);
    run.log_likelihood = ll;
    if (iter > 0 && ll - previous <= config.tol * std::abs(ll)) {
      run.converged = true;
      break;
    }
    if (iter >= config.max_iter) break;
    previous = ll;

    // M-step
    const VectorXd mass = resp.colwise().sum().transpose();
    for (Index k = 0; k < components; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      if (!(mass(k) > kCollapsedMass)) {
        if (run.reinitialisations > 0)
          throw NumericalError("em: component " + std::to_string(k) +
                               " collapsed again after re-initialisation");
        ++run.reinitialisations;
        // Restart the component at the worst-explained point.
        const MatrixXd logs = weighted_log_densities(run.model, x);
        Index worst = 0;
        double worst_value = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i) {
          const double v = log_sum_exp(logs.row(i).transpose());
          if (v < worst_value) {
            worst_value = v;
            worst = i;
          }
        }
        run.model.means[uk] = x.row(worst).transpose();
        run.model.covariances[uk] = pooled + ridge_eye;
        run.model.weights(k) = 1.0 / components;
        run.model.weights /= run.model.weights.sum();
        run.trace.clear();
        previous = -std::numeric_limits<double>::infinity();
        continue;
      }
      run.model.weights(k) = mass(k) / static_cast<double>(n);
      const VectorXd mean = (x.transpose() * resp.col(k)) / mass(k);
      const MatrixXd centred = x.rowwise() - mean.transpose();
      MatrixXd scatter = centred.transpose() * resp.col(k).asDiagonal() * centred;
      scatter = 0.5 * (scatter + scatter.transpose());
      const MatrixXd cov = scatter / mass(k) + ridge_eye;
      run.model.means[uk] = mean;
      // The ridge makes this a generalised EM step: keep the previous covariance when the
      // ridged update would lower the expected complete-data log-likelihood.
      if (expected_loglik(cov, scatter, mass(k)) >= expected_loglik(run.model.covariances[uk], scatter, mass(k)))
        run.model.covariances[uk] = cov;
    }
    run.model.weights /= run.model.weights.sum();
    run.iterations = iter + 1;
  }
  return run;
}

}  // namespace

double GaussianMixture::log_density(const Eigen::Ref<const VectorXd>& x) const {
  VectorXd terms(static_cast<Index>(components()));
  for (std::size_t k = 0; k < components(); ++k)
    terms(static_cast<Index>(k)) =
        std::log(weights(static_cast<Index>(k))) + gaussian_log_pdf(means[k], covariances[k], x);
  return log_sum_exp(terms);
}

double GaussianMixture::log_likelihood(const MatrixXd& x) const {
  const MatrixXd logs = weighted_log_densities(*this, x);
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += log_sum_exp(logs.row(i).transpose());
  return total;
}

double gaussian_log_pdf(const Eigen::Ref<const VectorXd>& mean,
                        const Eigen::Ref<const MatrixXd>& covariance,
                        const Eigen::Ref<const VectorXd>& x) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size() || x.size() != mean.size())
    throw ValidationError("gaussian density: dimension mismatch");
  const Factor f = factorise(covariance);
  return log_pdf(f, mean, x);
}

double gaussian_pdf(const Eigen::Ref<const VectorXd>& mean,
                    const Eigen::Ref<const MatrixXd>& covariance,
                    const Eigen::Ref<const VectorXd>& x) {
  return std::exp(gaussian_log_pdf(mean, covariance, x));
}

MatrixXd responsibilities(const GaussianMixture& model, const MatrixXd& x) {
  MatrixXd resp;
  expectation(model, x, resp);
  return resp;
}

GmmFit fit_gmm(const MatrixXd& x, int components, const EMConfig& config) {
  if (components < 1) throw ValidationError("gmm: component count must be >= 1");
  if (x.cols() < 1) throw ValidationError("gmm: data dimension must be >= 1");
  if (x.rows() < components)
    throw ValidationError("gmm: " + std::to_string(x.rows()) + " instances cannot support " +
                          std::to_string(components) + " components");
  if (!x.allFinite()) throw ValidationError("gmm: non-finite input");
  if (!(config.tol > 0.0)) throw ValidationError("gmm: tol must be > 0");
  if (config.max_iter < 1) throw ValidationError("gmm: max_iter must be >= 1");
  if (config.n_init < 1) throw ValidationError("gmm: n_init must be >= 1");
  if (config.ridge && !(*config.ridge >= 0.0)) throw ValidationError("gmm: ridge must be >= 0");

  const MatrixXd pooled = biased_covariance(x);
  double ridge = 0.0;
  if (config.ridge) {
    ridge = *config.ridge;
  } else {
    const double mean_var = pooled.diagonal().mean();
    ridge = mean_var > 0.0 ? 1e-6 * mean_var : 1e-6;
  }

  GmmFit best;
  double best_ll = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (int r = 0; r < config.n_init; ++r) {
    RunResult run =
        run_em(x, components, config, ridge, pooled, derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    if (!have || run.log_likelihood > best_ll) {
      have = true;
      best_ll = run.log_likelihood;
      best.model = std::move(run.model);
      best.log_likelihood_trace = std::move(run.trace);
      best.iterations = run.iterations;
      best.converged = run.converged;
      best.restart = r;
      best.reinitialisations = run.reinitialisations;
    }
  }
  best.ridge = ridge;
  return best;
}

MatrixXd sample_gmm(const GaussianMixture& model, std::size_t count, std::uint64_t seed) {
  const Index d = model.dim();
  MatrixXd out(static_cast<Index>(count), d);
  if (count == 0) return out;
  if (model.components() == 0) throw ValidationError("gmm sample: empty mixture");

  std::vector<MatrixXd> lowers;
  for (const auto& cov : model.covariances) lowers.push_back(factorise(cov).llt.matrixL());
  std::vector<double> cumulative(model.components());
  double running = 0.0;
  for (std::size_t k = 0; k < model.components(); ++k) {
    running += model.weights(static_cast<Index>(k));
    cumulative[k] = running;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd z(d);
  for (std::size_t s = 0; s < count; ++s) {
    const double u = unit(rng) * running;
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    k = std::min(k, model.components() - 1);
    for (Index j = 0; j < d; ++j) z(j) = normal(rng);
    out.row(static_cast<Index>(s)) = (model.means[k] + lowers[k] * z).transpose();
  }
  return out;
}

void write_em_trace(const GmmFit& fit, std::ostream& out) {
  out << "iteration,log_likelihood\n";
  for (std::size_t i = 0; i < fit.log_likelihood_trace.size(); ++i)
    out << i << ',' << text::format_number(fit.log_likelihood_trace[i]) << '\n';
}

AugmentedSet augment(const MatrixXd& x, const VectorXd& y, int components, std::size_t samples,
                     const EMConfig& config) {
  if (x.rows() == 0) throw ValidationError("augment: matched set is empty");
  if (x.rows() != y.size()) throw ValidationError("augment: features and labels differ in length");
  AugmentedSet out{x, y, static_cast<std::size_t>(x.rows())};
  if (samples == 0) return out;

  const Index n = x.rows();
  const Index q = x.cols();
  MatrixXd joint(n, q + 1);
  joint << x, y;

  // EM runs on column-standardised joint vectors so the ridge acts evenly across units.
  const VectorXd centre = joint.colwise().mean().transpose();
  VectorXd scale = ((joint.rowwise() - centre.transpose()).array().square().colwise().sum() /
                    static_cast<double>(n))
                       .sqrt()
                       .transpose();
  for (Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 0.0)) scale(j) = 1.0;
  const MatrixXd standardised =
      (joint.rowwise() - centre.transpose()).array().rowwise() / scale.transpose().array();

  const GmmFit fit = fit_gmm(standardised, components, config);
  const MatrixXd drawn = sample_gmm(fit.model, samples, derive_seed(config.seed, "sample"));
  const MatrixXd synthetic =
      (drawn.array().rowwise() * scale.transpose().array()).rowwise() + centre.transpose().array();

  out.x.conservativeResize(n + static_cast<Index>(samples), q);
  out.y.conservativeResize(n + static_cast<Index>(samples));
  out.x.bottomRows(static_cast<Index>(samples)) = synthetic.leftCols(q);
  out.y.tail(static_cast<Index>(samples)) = synthetic.col(q).cwiseMax(0.0);
  return out;
}

}  // namespace tmcda

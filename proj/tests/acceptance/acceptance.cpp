// Acceptance runner: one PASS/FAIL line per criterion, followed by indented detail lines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "tmcda/boosting.hpp"
#include "tmcda/gmm.hpp"
#include "tmcda/itml.hpp"
#include "tmcda/lasso.hpp"
#include "tmcda/pipeline.hpp"
#include "tmcda/synthetic.hpp"

using namespace tmcda;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Shift strength used for the "high shift" synthetic networks.
constexpr double kHighShift = 2.0;
constexpr int kSeeds = 20;

class Criterion {
 public:
  Criterion(int id, std::string title, double budget_s)
      : id_(id), title_(std::move(title)), budget_(budget_s) {}

  // Records a named sub-check. `detail` is printed either way.
  void check(bool ok, const std::string& what, const std::string& detail = {}) {
    ok_ = ok_ && ok;
    lines_.push_back(std::string(ok ? "ok   " : "FAIL ") + what + (detail.empty() ? "" : ": " + detail));
  }
  void note(const std::string& text) { lines_.push_back("     " + text); }

  bool finish(double seconds) {
    const bool in_time = seconds < budget_;
    const bool pass = ok_ && in_time;
    std::printf("%s criterion %d: %s (%.1f s, budget %.0f s)\n", pass ? "PASS" : "FAIL", id_,
                title_.c_str(), seconds, budget_);
    for (const auto& l : lines_) std::printf("    %s\n", l.c_str());
    if (!in_time) std::printf("    FAIL runtime over budget\n");
    std::fflush(stdout);
    return pass;
  }

 private:
  int id_;
  std::string title_;
  double budget_;
  bool ok_ = true;
  std::vector<std::string> lines_;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------------------------

void lasso_criterion(Criterion& c) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.02, 0.9);
  std::normal_distribution<double> normal;
  double worst_kkt = 0.0, worst_obj = 0.0, worst_ols = 0.0;
  for (int t = 0; t < 50; ++t) {
    MatrixXd x = oracle::gaussian_matrix(rng, 50, 5);
    x.col(1) = 0.6 * x.col(0) + 0.8 * x.col(1);  // some correlation
    x.col(3) *= 4.0;
    VectorXd beta(5);
    for (int j = 0; j < 5; ++j) beta(j) = (j % 2 ? 0.0 : normal(rng) * 2.0);
    const VectorXd y = (x * beta).array() + 1.5 + normal(rng) * 0.0;
    VectorXd noisy = y;
    for (int i = 0; i < 50; ++i) noisy(i) += normal(rng);

    const auto s = oracle::standardize(x, noisy);
    const double lam = unit(rng) * lambda_max(x, noisy);
    const auto fit = fit_lasso(x, noisy, lam, 1e-13, 100000);
    worst_kkt = std::max(worst_kkt, oracle::kkt_violation(s, fit.standardized_coefficients, lam));
    const VectorXd ref = oracle::lasso_fista(s, lam);
    worst_obj = std::max(worst_obj, std::abs(oracle::lasso_objective(s, fit.standardized_coefficients, lam) -
                                             oracle::lasso_objective(s, ref, lam)));

    const auto zero = fit_lasso(x, noisy, 0.0, 1e-15, 100000);
    const auto [b0, b] = oracle::ols(x, noisy);
    worst_ols = std::max({worst_ols, (zero.coefficients - b).cwiseAbs().maxCoeff(),
                          std::abs(zero.intercept - b0)});
  }
  c.check(worst_kkt <= 1e-6, "subgradient conditions on 50 instances", "worst violation " + num(worst_kkt));
  c.check(worst_obj <= 1e-6, "objective matches proximal-gradient oracle", "worst gap " + num(worst_obj));
  c.check(worst_ols <= 1e-8, "lambda = 0 recovers least squares", "worst coefficient gap " + num(worst_ols));
}

// ---------------------------------------------------------------------------------------------

void itml_criterion(Criterion& c) {
  bool psd = true, bounds = true, proxy = true, dual = true, converged = true;
  double worst_bound = 0.0;
  int proxy_runs = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> normal;
    const int n = 30, d = 3;
    MatrixXd x = oracle::gaussian_matrix(rng, n, d);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = 3.0 * x(i, 0) - x(i, 1) + 0.3 * normal(rng);
    ConstraintOptions copt;
    copt.seed = seed;
    copt.max_per_set = 25;
    const auto a0 = MetricMatrix::identity(d);
    const auto cons = build_constraints(x, y, a0, copt);
    ItmlOptions opt;
    opt.max_passes = 20000;
    opt.tol = 1e-9;
    const auto r = fit_itml(x, cons, a0, opt);
    converged = converged && r.converged;

    const MatrixXd& a = r.metric.matrix();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(a);
    psd = psd && a == a.transpose() && eig.eigenvalues().minCoeff() >= 0.0;

    for (std::size_t k = 0; k < cons.size(); ++k) {
      const bool sim = k < cons.similar.size();
      const auto [i, j] = sim ? cons.similar[k] : cons.dissimilar[k - cons.similar.size()];
      const double dist = mahalanobis_distance(r.metric, x.row(i).transpose(), x.row(j).transpose());
      const double xi = r.slack(static_cast<Eigen::Index>(k));
      const double excess = (sim ? dist - xi : xi - dist) / xi;
      worst_bound = std::max(worst_bound, excess);
    }

    bool run_proxy = true;
    for (std::size_t k = 1; k < r.trace.size(); ++k) {
      run_proxy = run_proxy && r.trace[k].objective <= r.trace[k - 1].objective + 1e-12;
      dual = dual && r.trace[k].dual >= r.trace[k - 1].dual - 1e-9;
    }
    proxy = proxy && run_proxy;
    proxy_runs += run_proxy;
  }
  bounds = worst_bound <= 1e-3;
  c.check(psd, "learned metric symmetric PSD on 20 instances");
  c.check(bounds, "slack-adjusted bounds hold", "worst relative excess " + num(worst_bound));
  c.check(converged, "all runs converged");
  c.check(proxy, "objective proxy non-increasing across passes",
          std::to_string(proxy_runs) + "/20 runs monotone");
  c.note("dual (Lagrangian) value non-decreasing in every run: " + std::string(dual ? "yes" : "no"));

  // Empty constraint set: exactly the prior.
  bool exact = true;
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    const MatrixXd b = oracle::gaussian_matrix(rng, 4, 4);
    const MetricMatrix a0(b * b.transpose() + MatrixXd::Identity(4, 4));
    const auto r = fit_itml(oracle::gaussian_matrix(rng, 10, 4), ConstraintSet{}, a0, ItmlOptions{});
    exact = exact && r.metric.matrix() == a0.matrix();
  }
  c.check(exact, "empty constraints return the prior exactly");

  // D(S^T A S, S^T A0 S) = D(A, A0).
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int d = 2 + t % 4;
    const MatrixXd p = oracle::gaussian_matrix(rng, d, d), q = oracle::gaussian_matrix(rng, d, d);
    const MatrixXd a = p * p.transpose() + 0.5 * MatrixXd::Identity(d, d);
    const MatrixXd a0 = q * q.transpose() + 0.5 * MatrixXd::Identity(d, d);
    const MatrixXd s = oracle::gaussian_matrix(rng, d, d) + 2.0 * MatrixXd::Identity(d, d);
    const double base = logdet_divergence(MetricMatrix(a), MetricMatrix(a0));
    const MatrixXd sa = s.transpose() * a * s, sa0 = s.transpose() * a0 * s;
    const double moved = logdet_divergence(MetricMatrix(0.5 * (sa + sa.transpose())),
                                           MetricMatrix(0.5 * (sa0 + sa0.transpose())));
    worst = std::max(worst, std::abs(base - moved));
  }
  c.check(worst <= 1e-8, "divergence invariant under invertible transforms", "worst gap " + num(worst));
}

// ---------------------------------------------------------------------------------------------

void gmm_criterion(Criterion& c) {
  bool monotone = true, weights = true;
  auto track = [&](const GmmFit& fit) {
    for (std::size_t k = 1; k < fit.log_likelihood_trace.size(); ++k)
      monotone = monotone && fit.log_likelihood_trace[k] >= fit.log_likelihood_trace[k - 1] - 1e-8;
    weights = weights && std::abs(fit.model.weights.sum() - 1.0) <= 1e-12;
  };

  std::mt19937_64 rng(4);
  const MatrixXd x1 = oracle::gaussian_matrix(rng, 60, 3) * 2.0;
  EMConfig k1;
  k1.ridge = 1e-3;
  const auto one = fit_gmm(x1, 1, k1);
  track(one);
  const VectorXd mean = x1.colwise().mean().transpose();
  const MatrixXd centred = x1.rowwise() - mean.transpose();
  const MatrixXd cov = centred.transpose() * centred / 60.0 + 1e-3 * MatrixXd::Identity(3, 3);
  const double gap = std::max((one.model.means[0] - mean).cwiseAbs().maxCoeff(),
                              (one.model.covariances[0] - cov).cwiseAbs().maxCoeff());
  c.check(gap <= 1e-10, "K = 1 equals the closed form", "gap " + num(gap));

  bool recovered = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    MatrixXd x(400, 1);
    for (int i = 0; i < 400; ++i) x(i, 0) = (unit(g) < 0.3 ? -10.0 : 10.0) + normal(g);
    EMConfig cfg;
    cfg.seed = seed;
    const auto fit = fit_gmm(x, 2, cfg);
    track(fit);
    const int lo = fit.model.means[0](0) < fit.model.means[1](0) ? 0 : 1;
    recovered = recovered && std::abs(fit.model.means[lo](0) + 10.0) < 0.5 &&
                std::abs(fit.model.means[1 - lo](0) - 10.0) < 0.5 &&
                std::abs(fit.model.weights(lo) - 0.3) < 0.1;
  }
  c.check(recovered, "two-cluster recovery on 10 seeds");

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 g(seed + 40);
    MatrixXd x = oracle::gaussian_matrix(g, 150, 3);
    x.topRows(50).array() += 3.0;
    x.col(2) += 0.5 * x.col(0);
    EMConfig cfg;
    cfg.seed = seed;
    cfg.tol = 1e-10;
    track(fit_gmm(x, 1 + static_cast<int>(seed % 4), cfg));
  }

  GaussianMixture mix;
  mix.weights = VectorXd(2);
  mix.weights << 0.35, 0.65;
  VectorXd m0(2), m1(2);
  m0 << -2.0, 1.0;
  m1 << 3.0, 0.0;
  mix.means = {m0, m1};
  MatrixXd c0(2, 2), c1(2, 2);
  c0 << 1.0, 0.3, 0.3, 0.5;
  c1 << 0.4, 0.0, 0.0, 2.0;
  mix.covariances = {c0, c1};
  const std::size_t m = 10000;
  const MatrixXd s = sample_gmm(mix, m, 21);
  const VectorXd mix_mean = 0.35 * m0 + 0.65 * m1;
  bool moments = true;
  for (int j = 0; j < 2; ++j) {
    MatrixXd second = MatrixXd::Zero(2, 2);
    double var = 0.0;
    for (int k = 0; k < 2; ++k)
      var += mix.weights(k) * (mix.covariances[k](j, j) + std::pow(mix.means[k](j) - mix_mean(j), 2));
    moments = moments && std::abs(s.col(j).mean() - mix_mean(j)) <= 3.0 * std::sqrt(var / m);
    // Variance: the sample variance has standard error about sqrt((mu4 - var^2) / m).
    double mu4 = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double d = mix.means[k](j) - mix_mean(j), v = mix.covariances[k](j, j);
      mu4 += mix.weights(k) * (d * d * d * d + 6.0 * d * d * v + 3.0 * v * v);
    }
    const double sample_var = (s.col(j).array() - s.col(j).mean()).square().mean();
    moments = moments && std::abs(sample_var - var) <= 3.0 * std::sqrt((mu4 - var * var) / m);
  }
  const double share = (s.col(0).array() < 0.5).cast<double>().mean();
  moments = moments && std::abs(share - 0.35) <= 3.0 * std::sqrt(0.35 * 0.65 / m);
  c.check(moments, "sampler moments at M = 10000 within 3 sigma");
  c.check(monotone, "EM log-likelihood non-decreasing on every run");
  c.check(weights, "mixture weights sum to 1 within 1e-12");
}

// ---------------------------------------------------------------------------------------------

LabeledSet boost_set(std::uint64_t seed, int n, int p) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  LabeledSet s;
  s.x = oracle::gaussian_matrix(rng, n, p);
  s.y = VectorXd(n);
  for (int i = 0; i < n; ++i)
    s.y(i) = 10.0 + 4.0 * (s.x(i, 0) > 0.2) - 3.0 * s.x(i, 1) * s.x(i, 1) + normal(rng);
  return s;
}

void boosting_criterion(Criterion& c) {
  bool bitwise = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = boost_set(seed, 80, 4), t = boost_set(seed + 9, 30, 4);
    TrainConfig cfg;
    cfg.n_stages = 50;
    cfg.alpha = 0.0;
    const auto a = fit_gbbw(s, t, cfg);
    const auto b = fit_gradient_boosting(s, cfg);
    const VectorXd pa = predict(a, t.x), pb = predict(b, t.x);
    bitwise = bitwise && std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()) == 0;
  }
  c.check(bitwise, "alpha = 0 bitwise equals source-only boosting");

  bool monotone = true;
  double worst_gamma = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = boost_set(seed, 60, 3), t = boost_set(seed + 50, 20, 3);
    TrainConfig cfg;
    cfg.n_stages = 25;
    cfg.shrinkage = 1.0;
    cfg.alpha = 0.3 + 0.1 * seed;
    BoostingTrace trace;
    const auto model = fit_gbbw(s, t, cfg, &trace);
    for (std::size_t k = 1; k < trace.weighted_loss.size(); ++k)
      monotone = monotone && trace.weighted_loss[k] <= trace.weighted_loss[k - 1] + 1e-9;

    // Every stage's step against a grid search on the combined weighted set.
    MatrixXd x(80, 3);
    x << s.x, t.x;
    VectorXd y(80), w(80);
    y << s.y, t.y;
    w << VectorXd::Constant(60, 1.0 - cfg.alpha), VectorXd::Constant(20, cfg.alpha);
    for (std::size_t m = 0; m < model.stages.size(); ++m) {
      const VectorXd f = predict(model, x, m);
      const VectorXd h = model.stages[m].tree.predict(x);
      const double g = oracle::gamma_grid(f, h, y, w, -20.0, 20.0, 400000);
      worst_gamma = std::max(worst_gamma, std::abs(model.stages[m].gamma - g));
    }
  }
  c.check(monotone, "weighted training loss non-increasing with unit shrinkage");
  c.check(worst_gamma <= 1e-4, "stage steps match grid search", "worst gap " + num(worst_gamma));

  const auto s = boost_set(31, 12, 2), t = boost_set(32, 4, 2);
  TrainConfig cfg;
  cfg.alpha = 0.5;
  cfg.n_stages = 3;
  cfg.shrinkage = 1.0;
  cfg.max_depth = 2;
  cfg.min_samples_leaf = 1;
  const auto model = fit_gbbw(s, t, cfg);
  MatrixXd query(16, 2);
  query << s.x, t.x;
  const VectorXd ref = oracle::gbbw_reference(s.x, s.y, t.x, t.y, 0.5, 3, 2, 1, 1.0, query);
  const double gap = (predict(model, query) - ref).cwiseAbs().maxCoeff();
  c.check(gap <= 1e-10, "16-instance fit matches the straight-line reference", "gap " + num(gap));
}

// ---------------------------------------------------------------------------------------------

void metrics_criterion(Criterion& c) {
  VectorXd y(2), p(2);
  y << 1, 2;
  p << 2, 4;
  const auto m = evaluate(y, p);
  c.check(m.mae == 1.5 && m.rmse == std::sqrt(2.5), "hand example (1,2) vs (2,4)",
          "MAE " + num(m.mae) + ", RMSE " + num(m.rmse));
  const auto z = evaluate(y, y);
  c.check(z.mae == 0.0 && z.rmse == 0.0, "perfect prediction scores zero");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  bool ordered = true;
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 30);
    VectorXd a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = 50.0 * normal(rng);
      b(i) = 50.0 * normal(rng);
    }
    const auto r = evaluate(a, b);
    ordered = ordered && r.rmse >= r.mae;
  }
  c.check(ordered, "RMSE >= MAE on 1000 random vectors");
}

// ---------------------------------------------------------------------------------------------

std::vector<PipelineConfig> variant_configs(std::uint64_t seed) {
  std::vector<PipelineConfig> configs;
  for (Movement m : kMovements)
    for (Variant v : {Variant::full, Variant::itml_gbbw, Variant::source_only}) {
      auto cfg = with_variant(PipelineConfig::defaults(m), v);
      cfg.seed = seed;
      configs.push_back(cfg);
    }
  return configs;
}

void ordering_criterion(Criterion& c) {
  const std::vector<std::string> models{"ITMLGMM-GBBW", "ITML-GBBW", "GB"};
  // mae[movement][model] over seeds
  std::vector<std::vector<std::vector<double>>> mae(3, std::vector<std::vector<double>>(3));
  std::size_t failures = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const std::uint64_t seed = 1000 + s;
    const auto data = generate_synthetic_network(seed, 6, kHighShift, 96);
    const auto report = leave_one_out(data, variant_configs(seed));
    failures += report.failures();
    for (std::size_t mi = 0; mi < 3; ++mi)
      for (std::size_t k = 0; k < 3; ++k) {
        const auto mean = report.mean(models[k], kMovements[mi]);
        mae[mi][k].push_back(mean ? mean->mae : std::nan(""));
      }
  }
  c.check(failures == 0, "every fold ran", std::to_string(failures) + " failed folds");
  for (std::size_t mi = 0; mi < 3; ++mi) {
    const double full = median(mae[mi][0]), itml = median(mae[mi][1]), gb = median(mae[mi][2]);
    const std::string name(movement_name(kMovements[mi]));
    c.check(full <= itml && itml <= gb && full < gb, name + ": full <= ITML-GBBW <= GB, full < GB",
            "medians " + num(full) + " / " + num(itml) + " / " + num(gb));
    int wins = 0;
    for (int s = 0; s < kSeeds; ++s) wins += mae[mi][0][s] < mae[mi][2][s];
    c.note(name + ": full beats GB on " + std::to_string(wins) + "/" + std::to_string(kSeeds) +
           " seeds");
  }
}

void alpha_criterion(Criterion& c) {
  const std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  bool finite = true;
  for (std::size_t mi = 0; mi < 3; ++mi) {
    const Movement m = kMovements[mi];
    std::vector<std::vector<double>> mae(alphas.size());
    for (int s = 0; s < kSeeds; ++s) {
      const std::uint64_t seed = 1000 + s;
      const auto data = generate_synthetic_network(seed, 6, kHighShift, 96);
      auto base = PipelineConfig::defaults(m);
      base.seed = seed;
      const SweepGrid grid{{base.gmm.components}, {base.gmm.samples}, alphas};
      const auto result = ablation_sweep(data, grid, {base});
      for (std::size_t k = 0; k < alphas.size(); ++k) {
        const auto& cell = result.cells[k];
        const auto& metric = cell.metrics[0].second;
        const bool ok = cell.status == "ok" && metric && std::isfinite(metric->mae) &&
                        std::isfinite(metric->rmse);
        finite = finite && ok;
        mae[k].push_back(metric ? metric->mae : std::nan(""));
      }
    }
    std::vector<double> med;
    std::string line;
    for (std::size_t k = 0; k < alphas.size(); ++k) {
      med.push_back(median(mae[k]));
      line += (k ? " / " : "") + num(med.back());
    }
    const double others = *std::min_element(med.begin(), med.end() - 1);
    c.check(!(med.back() < others), std::string(movement_name(m)) + ": alpha = 1 not the unique best",
            "medians over alpha " + line);
  }
  c.check(finite, "finite metrics in every cell");
}

// ---------------------------------------------------------------------------------------------

template <class T>
concept carries_labels = requires(T t) { t.labels; };

static_assert(!carries_labels<TargetFeatures::Row>);
static_assert(!std::is_convertible_v<HeldOutLabels, TargetFeatures>);
static_assert(!std::is_convertible_v<HeldOutLabels, Dataset>);
static_assert(!std::is_invocable_v<decltype(&run_estimation), const Dataset&, const HeldOutLabels&,
                                   const PipelineConfig&>);
static_assert(!std::is_invocable_v<decltype(&run_estimation), const DomainSplit&,
                                   const PipelineConfig&>);
static_assert(!std::is_invocable_v<decltype(&prepare_fold), const Dataset&, const HeldOutLabels&,
                                   const PipelineConfig&>);

Dataset relabel(const Dataset& data, const std::string& target, const std::function<double(double)>& f) {
  std::vector<Instance> rows = data.instances();
  for (auto& r : rows)
    if (r.intersection_id == target)
      for (double& v : *r.labels) v = f(v);
  return Dataset(rows, data.provenance());
}

std::string reports(const EvaluationReport& r) {
  std::ostringstream out;
  write_summary(r, out);
  write_folds(r, out);
  return out.str();
}

void determinism_criterion(Criterion& c) {
  const auto data = generate_synthetic_network(42, 4, 1.0, 24);
  auto configs = variant_configs(42);
  for (auto& cfg : configs) cfg.boosting.n_stages = 60;
  const auto a = reports(leave_one_out(data, configs));
  const auto b = reports(leave_one_out(data, configs));
  const auto d = reports(leave_one_out(generate_synthetic_network(42, 4, 1.0, 24), configs, 2));
  c.check(a == b && a == d, "repeated leave-one-out reports are byte-identical",
          std::to_string(a.size()) + " bytes");

  auto base = PipelineConfig::defaults(Movement::left);
  base.boosting.n_stages = 60;
  const SweepGrid grid{{2}, {20}, {0.0, 0.5}};
  std::ostringstream s1, s2;
  write_sweep(ablation_sweep(data, grid, {base}), s1);
  write_sweep(ablation_sweep(data, grid, {base}), s2);
  c.check(s1.str() == s2.str(), "repeated sweep reports are byte-identical");

  c.check(true, "type barrier: target rows carry no labels and training entry points reject them");

  // Clean path: the target's labels cannot move predictions.
  const auto scrambled = relabel(data, "I02", [](double v) { return 3.0 * v + 7.0; });
  bool clean = true;
  for (Movement m : kMovements) {
    auto cfg = PipelineConfig::defaults(m);
    cfg.boosting.n_stages = 60;
    const auto x = split_domains(data, "I02"), y = split_domains(scrambled, "I02");
    const VectorXd pa = run_estimation(x.source, x.target_features, cfg).result.predictions;
    const VectorXd pb = run_estimation(y.source, y.target_features, cfg).result.predictions;
    clean = clean && std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()) == 0;
  }
  c.check(clean, "scrambled target labels leave predictions bitwise unchanged");

  // Mutation: target rows with labels injected into training are caught by the same check.
  auto leaky = [](const Dataset& d) {
    std::vector<Instance> rows = split_domains(d, "I02").source.instances();
    for (const auto& inst : d.instances())
      if (inst.intersection_id == "I02") rows.push_back(inst);
    return Dataset(rows, "leaky");
  };
  auto cfg = PipelineConfig::defaults(Movement::through);
  cfg.boosting.n_stages = 60;
  const auto target = split_domains(data, "I02").target_features;
  const VectorXd pa = run_estimation(leaky(data), target, cfg).result.predictions;
  const VectorXd pb = run_estimation(leaky(scrambled), target, cfg).result.predictions;
  c.check(std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()) != 0,
          "an injected label leak is detected");
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  struct Entry {
    int id;
    const char* title;
    double budget;
    void (*run)(Criterion&);
  };
  const Entry entries[] = {
      {1, "lasso optimality", 10, lasso_criterion},
      {2, "ITML correctness", 30, itml_criterion},
      {3, "GMM correctness", 30, gmm_criterion},
      {4, "GBBW correctness", 10, boosting_criterion},
      {5, "metrics", 1, metrics_criterion},
      {6, "qualitative ordering on shifted synthetic networks", 300, ordering_criterion},
      {7, "alpha ablation shape", 300, alpha_criterion},
      {8, "determinism and no leakage", 120, determinism_criterion},
  };
  int failed = 0, ran = 0;
  for (const auto& e : entries) {
    if (!only.empty() && !only.count(e.id)) continue;
    ++ran;
    Criterion c(e.id, e.title, e.budget);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.run(c);
    } catch (const std::exception& ex) {
      c.check(false, "exception", ex.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !c.finish(secs);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}

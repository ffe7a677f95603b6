#include "tmcda/itml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "tmcda/error.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

bool positive_definite(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  return llt.info() == Eigen::Success;
}

double scalar_divergence(double x, double x0) { return x / x0 - std::log(x / x0) - 1.0; }

std::string state_dump(int pass, std::size_t constraint, double p, double alpha, double slack) {
  std::ostringstream os;
  os << "pass " << pass << ", constraint " << constraint << ", p=" << text::format_number(p)
     << ", alpha=" << text::format_number(alpha) << ", xi=" << text::format_number(slack);
  return os.str();
}

}  // namespace

MetricMatrix::MetricMatrix(MatrixXd a) : a_(std::move(a)) {
  if (a_.rows() != a_.cols() || a_.rows() == 0)
    throw NumericalError("metric matrix must be square and non-empty");
  if (!a_.allFinite()) throw NumericalError("metric matrix has non-finite entries");
  const double tol = 1e-10 * std::max(1.0, a_.cwiseAbs().maxCoeff());
  if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > tol)
    throw NumericalError("metric matrix is not symmetric");
  if (!positive_definite(a_)) throw NumericalError("metric matrix is not positive definite");
}

MetricMatrix MetricMatrix::identity(Index dim) { return MetricMatrix(MatrixXd::Identity(dim, dim)); }

double mahalanobis_distance(const MetricMatrix& a, const Eigen::Ref<const VectorXd>& xi,
                            const Eigen::Ref<const VectorXd>& xj) {
  if (xi.size() != a.dim() || xj.size() != a.dim())
    throw ValidationError("mahalanobis distance: dimension mismatch");
  const VectorXd v = xi - xj;
  return std::max(0.0, v.dot(a.matrix() * v));
}

double logdet_divergence(const MetricMatrix& a, const MetricMatrix& a0) {
  if (a.dim() != a0.dim()) throw ValidationError("logdet divergence: dimension mismatch");
  Eigen::LLT<MatrixXd> l0(a0.matrix());
  Eigen::LLT<MatrixXd> l(a.matrix());
  if (l0.info() != Eigen::Success || l.info() != Eigen::Success)
    throw NumericalError("logdet divergence: input is not positive definite");
  // tr(A A0^-1) = tr(A0^-1 A); log det(A A0^-1) = log det A - log det A0.
  const double trace = l0.solve(a.matrix()).trace();
  const double logdet_a = 2.0 * l.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_a0 = 2.0 * l0.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::max(0.0, trace - (logdet_a - logdet_a0) - static_cast<double>(a.dim()));
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("percentile rank outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ConstraintSet build_constraints(const MatrixXd& x, const VectorXd& y, const MetricMatrix& a0,
                                const ConstraintOptions& options) {
  const Index n = x.rows();
  if (n < 2) throw ValidationError("constraints: at least two labelled instances are required");
  if (y.size() != n) throw ValidationError("constraints: label count differs from row count");
  if (x.cols() != a0.dim()) throw ValidationError("constraints: prior metric dimension mismatch");
  if (!(options.similar_percentile > 0.0 && options.similar_percentile < 50.0))
    throw ValidationError("constraints: similar percentile must lie in (0, 50)");
  if (!(options.upper_percentile >= 0.0 && options.upper_percentile < options.lower_percentile &&
        options.lower_percentile <= 100.0))
    throw ValidationError("constraints: distance percentiles must satisfy 0 <= upper < lower <= 100");

  std::mt19937_64 rng(options.seed);
  std::vector<IndexPair> candidates;
  const auto un = static_cast<std::size_t>(n);
  const std::size_t total_pairs = un * (un - 1) / 2;
  if (total_pairs <= options.candidate_pairs) {
    for (std::size_t i = 0; i < un; ++i)
      for (std::size_t j = i + 1; j < un; ++j) candidates.emplace_back(i, j);
    std::shuffle(candidates.begin(), candidates.end(), rng);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, un - 1);
    std::set<IndexPair> seen;
    while (candidates.size() < options.candidate_pairs) {
      std::size_t i = pick(rng), j = pick(rng);
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (seen.emplace(i, j).second) candidates.emplace_back(i, j);
    }
  }

  std::vector<double> label_gaps, distances;
  label_gaps.reserve(candidates.size());
  distances.reserve(candidates.size());
  for (const auto& [i, j] : candidates) {
    label_gaps.push_back(std::abs(y(static_cast<Index>(i)) - y(static_cast<Index>(j))));
    distances.push_back(mahalanobis_distance(a0, x.row(static_cast<Index>(i)).transpose(),
                                             x.row(static_cast<Index>(j)).transpose()));
  }

  ConstraintSet set;
  const double similar_cut = percentile(label_gaps, options.similar_percentile);
  const double dissimilar_cut = percentile(label_gaps, 100.0 - options.similar_percentile);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double gap = label_gaps[c];
    if (gap > 0.0 && gap >= dissimilar_cut) {
      if (set.dissimilar.size() < options.max_per_set) set.dissimilar.push_back(candidates[c]);
    } else if (gap <= similar_cut) {
      if (set.similar.size() < options.max_per_set) set.similar.push_back(candidates[c]);
    }
  }
  if (set.dissimilar.empty())
    set.warnings.push_back("no dissimilar pairs: the sampled labels are all equal");

  set.upper = percentile(distances, options.upper_percentile);
  set.lower = percentile(distances, options.lower_percentile);
  if (!(set.upper > 0.0)) {
    double smallest = std::numeric_limits<double>::infinity();
    for (double d : distances)
      if (d > 0.0) smallest = std::min(smallest, d);
    if (!std::isfinite(smallest))
      throw ValidationError("constraints: every sampled pair has zero distance");
    set.upper = smallest;
    set.warnings.push_back("upper distance threshold raised to the smallest positive distance");
  }
  if (!(set.upper < set.lower))
    throw ValidationError("constraints: degenerate distance distribution (u >= l)");
  return set;
}

ItmlResult fit_itml(const MatrixXd& x, const ConstraintSet& constraints, const MetricMatrix& a0,
                    const ItmlOptions& options) {
  if (x.cols() != a0.dim()) throw ValidationError("itml: prior metric dimension mismatch");
  if (!(options.gamma > 0.0)) throw ValidationError("itml: gamma must be > 0");
  if (options.max_passes < 0) throw ValidationError("itml: max_passes must be >= 0");
  if (!(options.tol > 0.0)) throw ValidationError("itml: tol must be > 0");
  if (constraints.size() > 0 && !(constraints.upper > 0.0 && constraints.upper < constraints.lower))
    throw ValidationError("itml: thresholds must satisfy 0 < u < l");

  const auto n = static_cast<std::size_t>(x.rows());
  std::set<IndexPair> similar_keys;
  for (auto [i, j] : constraints.similar) {
    if (i >= n || j >= n) throw ValidationError("itml: constraint index out of range");
    similar_keys.emplace(std::min(i, j), std::max(i, j));
  }
  for (auto [i, j] : constraints.dissimilar) {
    if (i >= n || j >= n) throw ValidationError("itml: constraint index out of range");
    if (similar_keys.contains({std::min(i, j), std::max(i, j)}))
      throw ValidationError("itml: a pair is both similar and dissimilar");
  }

  const std::size_t count = constraints.size();
  const std::size_t n_similar = constraints.similar.size();
  const double gamma = options.gamma;

  MatrixXd a = a0.matrix();
  VectorXd slack(static_cast<Index>(count));
  for (std::size_t c = 0; c < count; ++c)
    slack(static_cast<Index>(c)) = c < n_similar ? constraints.upper : constraints.lower;
  const VectorXd slack0 = slack;
  VectorXd duals = VectorXd::Zero(static_cast<Index>(count));

  auto pair_of = [&](std::size_t c) -> const IndexPair& {
    return c < n_similar ? constraints.similar[c] : constraints.dissimilar[c - n_similar];
  };
  auto diff_of = [&](std::size_t c) -> VectorXd {
    const auto& [i, j] = pair_of(c);
    return x.row(static_cast<Index>(i)).transpose() - x.row(static_cast<Index>(j)).transpose();
  };

  ItmlResult result{a0, slack, duals, count == 0, 0, 0, {}, {}};
  if (count == 0) return result;

  Eigen::LLT<MatrixXd> prior(a0.matrix());
  const double prior_logdet = 2.0 * prior.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double dim = static_cast<double>(a.rows());

  auto record = [&](int pass, double max_change) {
    ItmlPass row;
    row.pass = pass;
    row.max_dual_change = max_change;
    Eigen::LLT<MatrixXd> llt(a);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    row.divergence = prior.solve(a).trace() - (logdet - prior_logdet) - dim;
    double lagrange = 0.0;
    for (std::size_t c = 0; c < count; ++c) {
      const auto ci = static_cast<Index>(c);
      row.slack_divergence += scalar_divergence(slack(ci), slack0(ci));
      const VectorXd v = diff_of(c);
      const double p = v.dot(a * v);
      const double delta = c < n_similar ? 1.0 : -1.0;
      lagrange += duals(ci) * delta * (p - slack(ci));
      const bool violated = c < n_similar ? p > slack(ci) * (1.0 + options.tol)
                                          : p < slack(ci) * (1.0 - options.tol);
      if (violated) ++row.violations;
    }
    row.objective = row.divergence + gamma * row.slack_divergence;
    row.dual = row.objective + lagrange;
    result.trace.push_back(row);
  };

  std::vector<bool> warned(count, false);
  for (int pass = 1; pass <= options.max_passes; ++pass) {
    double max_change = 0.0;
    for (std::size_t c = 0; c < count; ++c) {
      const auto ci = static_cast<Index>(c);
      const VectorXd v = diff_of(c);
      const VectorXd av = a * v;
      const double p = v.dot(av);
      if (!(p > 0.0)) {
        ++result.skipped;
        if (!warned[c]) {
          warned[c] = true;
          const auto& [i, j] = pair_of(c);
          result.warnings.push_back("skipped constraint (" + std::to_string(i) + ", " +
                                    std::to_string(j) + "): zero distance");
        }
        continue;
      }
      const double delta = c < n_similar ? 1.0 : -1.0;
      const double alpha =
          std::min(duals(ci), 0.5 * delta * (1.0 / p - gamma / slack(ci)));
      const double beta = delta * alpha / (1.0 - delta * alpha * p);
      slack(ci) = gamma * slack(ci) / (gamma + delta * alpha * slack(ci));
      duals(ci) -= alpha;
      a.noalias() += beta * av * av.transpose();
      max_change = std::max(max_change, std::abs(alpha));

      if (!(slack(ci) > 0.0) || !std::isfinite(slack(ci)))
        throw NumericalError("itml: slack diverged at " + state_dump(pass, c, p, alpha, slack(ci)));
      if (options.verify_each_projection) {
        const MatrixXd sym = 0.5 * (a + a.transpose());
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() <= -1e-9)
          throw NumericalError("itml: metric lost positive semi-definiteness at " +
                               state_dump(pass, c, p, alpha, slack(ci)));
        a = sym;
      }
    }
    a = 0.5 * (a + a.transpose());
    if (!positive_definite(a))
      throw NumericalError("itml: metric is not positive definite after pass " +
                           std::to_string(pass));
    result.passes = pass;
    if (options.record_trace) record(pass, max_change);
    if (max_change < options.tol) {
      result.converged = true;
      break;
    }
  }

  result.metric = MetricMatrix(a);
  result.slack = slack;
  result.duals = duals;
  return result;
}

void write_itml_trace(const std::vector<ItmlPass>& trace, std::ostream& out) {
  out << "pass,max_dual_change,violations,divergence,slack_divergence,objective,dual\n";
  for (const auto& row : trace)
    out << row.pass << ',' << text::format_number(row.max_dual_change) << ',' << row.violations
        << ',' << text::format_number(row.divergence) << ','
        << text::format_number(row.slack_divergence) << ',' << text::format_number(row.objective)
        << ',' << text::format_number(row.dual) << '\n';
}

std::vector<std::size_t> match_source_to_target(const MetricMatrix& a, const MatrixXd& target,
                                                const MatrixXd& source) {
  if (source.rows() == 0) throw ValidationError("matching: empty source set");
  if (target.cols() != a.dim() || source.cols() != a.dim())
    throw ValidationError("matching: dimension mismatch");
  // d_A(x, y) = |L'(x - y)|^2 with A = L L'.
  Eigen::LLT<MatrixXd> llt(a.matrix());
  const MatrixXd lower = llt.matrixL();
  const MatrixXd ts = target * lower;
  const MatrixXd ss = source * lower;
  std::vector<std::size_t> match(static_cast<std::size_t>(target.rows()));
  for (Index t = 0; t < ts.rows(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    Index best_index = 0;
    for (Index s = 0; s < ss.rows(); ++s) {
      const double d = (ts.row(t) - ss.row(s)).squaredNorm();
      if (d < best) {
        best = d;
        best_index = s;
      }
    }
    match[static_cast<std::size_t>(t)] = static_cast<std::size_t>(best_index);
  }
  return match;
}

MatchedSet match_labeled(const MetricMatrix& a, const MatrixXd& target, const MatrixXd& source_x,
                         const VectorXd& source_y) {
  if (source_x.rows() != source_y.size())
    throw ValidationError("matching: source labels and features differ in length");
  MatchedSet out;
  out.source_index = match_source_to_target(a, target, source_x);
  std::vector<Index> rows(out.source_index.begin(), out.source_index.end());
  out.x = source_x(rows, Eigen::all);
  out.y = source_y(rows);
  return out;
}

}  // namespace tmcda

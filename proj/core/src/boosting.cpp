#include "tmcda/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "tmcda/error.hpp"
#include "tmcda/text.hpp"

namespace tmcda {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Relative floor on split gain; below it a node is treated as pure.
constexpr double kRelativeMinGain = 1e-12;

// Rows sorted by each feature, computed once and reused across boosting stages.
class TreeGrower {
 public:
  TreeGrower(const MatrixXd& x, const TreeConfig& config) : x_(x), config_(config) {
    if (config.max_depth < 0) throw ValidationError("tree: max_depth must be >= 0");
    if (config.min_samples_leaf < 1) throw ValidationError("tree: min_samples_leaf must be >= 1");
    const Index n = x.rows();
    sorted_.resize(static_cast<std::size_t>(x.cols()));
    for (Index f = 0; f < x.cols(); ++f) {
      auto& order = sorted_[static_cast<std::size_t>(f)];
      order.resize(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](Index a, Index b) { return x(a, f) < x(b, f); });
      auto& values = sorted_values_.emplace_back(order.size());
      for (std::size_t pos = 0; pos < order.size(); ++pos) values[pos] = x(order[pos], f);
    }
  }

  // All rows are expected to carry positive weight. Grows level by level: one pass over each
  // feature's sorted rows serves every open node of the level.
  RegressionTree grow(const VectorXd& r, const VectorXd& w) {
    const Index n = x_.rows();
    std::vector<RegressionTree::Node> nodes(1);
    node_of_.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> level{0};
    for (int depth = 0; !level.empty(); ++depth) {
      // slot of each node in this level, -1 otherwise
      std::vector<int> slot(nodes.size(), -1);
      for (std::size_t k = 0; k < level.size(); ++k) slot[static_cast<std::size_t>(level[k])] = static_cast<int>(k);
      const std::size_t m = level.size();
      std::vector<Stats> stats(m);
      for (Index i = 0; i < n; ++i) {
        const int k = slot_of(slot, i);
        if (k < 0) continue;
        auto& st = stats[static_cast<std::size_t>(k)];
        st.sw += w(i);
        st.swr += w(i) * r(i);
        ++st.count;
      }
      for (std::size_t k = 0; k < m; ++k) {
        stats[k].mean = stats[k].swr / stats[k].sw;
        nodes[static_cast<std::size_t>(level[k])].value = stats[k].mean;
      }
      if (depth >= config_.max_depth) break;
      for (Index i = 0; i < n; ++i) {
        const int k = slot_of(slot, i);
        if (k < 0) continue;
        auto& st = stats[static_cast<std::size_t>(k)];
        st.ss += w(i) * (r(i) - st.mean) * (r(i) - st.mean);
      }
      std::vector<char> open(m, 0);
      bool any = false;
      for (std::size_t k = 0; k < m; ++k) {
        open[k] = stats[k].count >= 2 * config_.min_samples_leaf && stats[k].ss > 0.0;
        any = any || open[k];
      }
      if (!any) break;

      const std::vector<Split> best = best_splits(slot, stats, open, r, w);

      std::vector<int> next;
      std::vector<int> child(m, -1);
      for (std::size_t k = 0; k < m; ++k) {
        const Split& sp = best[k];
        if (!open[k] || sp.feature < 0 || !(sp.gain > kRelativeMinGain * stats[k].ss)) continue;
        const int left_id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        nodes.emplace_back();
        auto& parent = nodes[static_cast<std::size_t>(level[k])];
        parent.feature = sp.feature;
        parent.threshold = sp.threshold;
        parent.left = left_id;
        parent.right = left_id + 1;
        child[k] = left_id;
        next.push_back(left_id);
        next.push_back(left_id + 1);
      }
      for (Index i = 0; i < n; ++i) {
        const int k = slot_of(slot, i);
        if (k < 0 || child[static_cast<std::size_t>(k)] < 0) continue;
        const auto& parent = nodes[static_cast<std::size_t>(level[static_cast<std::size_t>(k)])];
        node_of_[static_cast<std::size_t>(i)] =
            x_(i, parent.feature) <= parent.threshold ? parent.left : parent.right;
      }
      level = std::move(next);
    }
    return RegressionTree(std::move(nodes));
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };
  struct Stats {
    double sw = 0.0, swr = 0.0, mean = 0.0, ss = 0.0;
    int count = 0;
  };
  // Running left-side sums of one node while scanning a feature, plus the node totals.
  struct Scan {
    double wl = 0.0, sl = 0.0, prev = 0.0;
    double sw = 0.0, swr = 0.0, parent_score = 0.0;
    int nl = 0, hi = 0;  // a split after the current row needs min_leaf <= nl <= hi
  };

  int slot_of(const std::vector<int>& slot, Index i) const {
    return slot[static_cast<std::size_t>(node_of_[static_cast<std::size_t>(i)])];
  }

  // Best split per open node; features in order, thresholds ascending, first best kept.
  std::vector<Split> best_splits(const std::vector<int>& slot, const std::vector<Stats>& stats,
                                 const std::vector<char>& open, const VectorXd& r,
                                 const VectorXd& w) const {
    const std::size_t m = stats.size();
    std::vector<Split> best(m);
    const int min_leaf = config_.min_samples_leaf;
    // per row: slot of its node when that node is open, -1 otherwise
    const Index n = x_.rows();
    std::vector<int> row_slot(static_cast<std::size_t>(n));
    std::vector<double> wi(static_cast<std::size_t>(n)), wri(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const int k = slot_of(slot, i);
      const auto u = static_cast<std::size_t>(i);
      row_slot[u] = k >= 0 && open[static_cast<std::size_t>(k)] ? k : -1;
      wi[u] = w(i);
      wri[u] = w(i) * r(i);
    }
    std::vector<Scan> fresh(m), scan(m);
    for (std::size_t k = 0; k < m; ++k)
      fresh[k] = {0.0, 0.0, 0.0, stats[k].sw, stats[k].swr, stats[k].swr * stats[k].swr / stats[k].sw,
                  0, stats[k].count - min_leaf};
    for (Index f = 0; f < x_.cols(); ++f) {
      scan = fresh;
      const auto& order = sorted_[static_cast<std::size_t>(f)];
      const auto& values = sorted_values_[static_cast<std::size_t>(f)];
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto i = static_cast<std::size_t>(order[pos]);
        const int k = row_slot[i];
        if (k < 0) continue;
        auto& sc = scan[static_cast<std::size_t>(k)];
        const double v = values[pos];
        if (sc.nl >= min_leaf && sc.nl <= sc.hi && v > sc.prev) {
          const double wr = sc.sw - sc.wl, sr = sc.swr - sc.sl;
          const double gain = sc.sl * sc.sl / sc.wl + sr * sr / wr - sc.parent_score;
          auto& b = best[static_cast<std::size_t>(k)];
          if (gain > b.gain) {
            double threshold = sc.prev + (v - sc.prev) / 2.0;
            if (!(threshold < v)) threshold = sc.prev;
            b = {static_cast<int>(f), threshold, gain};
          }
        }
        sc.wl += wi[i];
        sc.sl += wri[i];
        ++sc.nl;
        sc.prev = v;
      }
    }
    return best;
  }

  const MatrixXd& x_;
  TreeConfig config_;
  std::vector<std::vector<Index>> sorted_;
  std::vector<std::vector<double>> sorted_values_;
  std::vector<int> node_of_;
};

void check_config(const TrainConfig& c) {
  if (c.n_stages < 0) throw ValidationError("boosting: n_stages must be >= 0");
  if (c.max_depth < 0) throw ValidationError("boosting: max_depth must be >= 0");
  if (c.min_samples_leaf < 1) throw ValidationError("boosting: min_samples_leaf must be >= 1");
  if (!(c.shrinkage > 0.0 && c.shrinkage <= 1.0))
    throw ValidationError("boosting: shrinkage must lie in (0, 1]");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ValidationError("boosting: alpha must lie in [0, 1]");
}

double weighted_squared_loss(const VectorXd& y, const VectorXd& f, const VectorXd& w) {
  return 0.5 * (w.array() * (y - f).array().square()).sum();
}

// Shared boosting loop over rows that all carry positive weight.
BoostedModel boost(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                   const TrainConfig& config, double alpha, BoostingTrace* trace) {
  BoostedModel model;
  model.shrinkage = config.shrinkage;
  model.alpha = alpha;
  model.n_features = x.cols();
  model.init = w.dot(y) / w.sum();

  VectorXd f = VectorXd::Constant(y.size(), model.init);
  if (trace) {
    trace->weighted_loss.clear();
    trace->weighted_loss.push_back(weighted_squared_loss(y, f, w));
  }
  if (config.n_stages == 0) return model;

  TreeGrower grower(x, TreeConfig{config.max_depth, config.min_samples_leaf});
  for (int m = 0; m < config.n_stages; ++m) {
    const VectorXd r = pseudo_residuals(Loss::squared_error, y, f);
    RegressionTree tree = grower.grow(r, w);
    const VectorXd h = tree.predict(x);
    const double gamma = compute_gamma(f, h, y, w);
    f.noalias() += (config.shrinkage * gamma) * h;
    model.stages.push_back({gamma, std::move(tree)});
    if (trace) trace->weighted_loss.push_back(weighted_squared_loss(y, f, w));
  }
  return model;
}

}  // namespace

Loss parse_loss(std::string_view name) {
  if (name == "squared_error" || name == "squared") return Loss::squared_error;
  throw ValidationError("unknown loss '" + std::string(name) + "'");
}

std::string_view loss_name(Loss loss) {
  switch (loss) {
    case Loss::squared_error: return "squared_error";
  }
  return "?";
}

VectorXd pseudo_residuals(Loss loss, const VectorXd& y, const VectorXd& f) {
  if (y.size() != f.size()) throw ValidationError("pseudo residuals: length mismatch");
  switch (loss) {
    case Loss::squared_error: return y - f;
  }
  throw ValidationError("pseudo residuals: unsupported loss");
}

RegressionTree::RegressionTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ValidationError("tree: no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (!std::isfinite(n.value)) throw ValidationError("tree: non-finite node value");
    if (n.feature >= 0) {
      const auto size = static_cast<int>(nodes_.size());
      if (n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) || n.left >= size ||
          n.right >= size)
        throw ValidationError("tree: malformed child index at node " + std::to_string(i));
    }
  }
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
  }
  return nodes_[i].value;
}

VectorXd RegressionTree::predict(const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    std::size_t k = 0;
    while (nodes_[k].feature >= 0) {
      const auto& n = nodes_[k];
      k = static_cast<std::size_t>(x(i, n.feature) <= n.threshold ? n.left : n.right);
    }
    out(i) = nodes_[k].value;
  }
  return out;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

int RegressionTree::depth() const {
  std::vector<int> level(nodes_.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes_[i].feature >= 0) {
      level[static_cast<std::size_t>(nodes_[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes_[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

RegressionTree fit_tree(const MatrixXd& x, const VectorXd& residuals, const VectorXd& weights,
                        const TreeConfig& config) {
  if (x.rows() != residuals.size() || x.rows() != weights.size())
    throw ValidationError("tree: inconsistent input lengths");
  if ((weights.array() < 0.0).any() || !weights.allFinite())
    throw ValidationError("tree: weights must be finite and >= 0");
  std::vector<Index> rows;
  for (Index i = 0; i < weights.size(); ++i)
    if (weights(i) > 0.0) rows.push_back(i);
  if (rows.empty()) throw ValidationError("tree: all weights are zero");
  const MatrixXd xs = x(rows, Eigen::all);
  const VectorXd rs = residuals(rows);
  const VectorXd ws = weights(rows);
  TreeGrower grower(xs, config);
  return grower.grow(rs, ws);
}

double compute_gamma(const VectorXd& f_prev, const VectorXd& h, const VectorXd& y, const VectorXd& w) {
  if (f_prev.size() != h.size() || y.size() != h.size() || w.size() != h.size())
    throw ValidationError("gamma: inconsistent input lengths");
  const double denom = (w.array() * h.array().square()).sum();
  if (denom == 0.0) return 0.0;
  return (w.array() * (y - f_prev).array() * h.array()).sum() / denom;
}

BoostedModel fit_gbbw(const LabeledSet& source, const LabeledSet& pseudo_target,
                      const TrainConfig& config, BoostingTrace* trace) {
  check_config(config);
  if (source.x.rows() != source.y.size() || pseudo_target.x.rows() != pseudo_target.y.size())
    throw ValidationError("gbbw: features and labels differ in length");
  if (source.size() < 1) throw ValidationError("gbbw: source set is empty");
  if (pseudo_target.size() > 0 && pseudo_target.x.cols() != source.x.cols())
    throw ValidationError("gbbw: source and pseudo-target feature dimensions differ");
  if (config.alpha == 1.0 && pseudo_target.size() == 0)
    throw ValidationError("gbbw: alpha = 1 needs a non-empty pseudo-target set");
  if (!source.y.allFinite() || !pseudo_target.y.allFinite() || !source.x.allFinite() ||
      !pseudo_target.x.allFinite())
    throw ValidationError("gbbw: non-finite input");

  const double ws = 1.0 - config.alpha;
  const double wt = config.alpha;
  const Index n1 = ws > 0.0 ? source.size() : 0;
  const Index n2 = wt > 0.0 ? pseudo_target.size() : 0;
  MatrixXd x(n1 + n2, source.x.cols());
  VectorXd y(n1 + n2), w(n1 + n2);
  if (n1 > 0) {
    x.topRows(n1) = source.x;
    y.head(n1) = source.y;
    w.head(n1).setConstant(ws);
  }
  if (n2 > 0) {
    x.bottomRows(n2) = pseudo_target.x;
    y.tail(n2) = pseudo_target.y;
    w.tail(n2).setConstant(wt);
  }
  return boost(x, y, w, config, config.alpha, trace);
}

BoostedModel fit_gradient_boosting(const LabeledSet& data, const TrainConfig& config,
                                   BoostingTrace* trace) {
  TrainConfig c = config;
  c.alpha = 0.0;
  check_config(c);
  if (data.size() < 1) throw ValidationError("boosting: training set is empty");
  if (data.x.rows() != data.y.size()) throw ValidationError("boosting: features and labels differ in length");
  return boost(data.x, data.y, VectorXd::Ones(data.size()), c, 0.0, trace);
}

VectorXd predict(const BoostedModel& model, const MatrixXd& x) {
  return predict(model, x, model.stages.size());
}

VectorXd predict(const BoostedModel& model, const MatrixXd& x, std::size_t stages) {
  if (x.cols() != model.n_features) throw ValidationError("predict: feature dimension mismatch");
  VectorXd f = VectorXd::Constant(x.rows(), model.init);
  stages = std::min(stages, model.stages.size());
  for (std::size_t m = 0; m < stages; ++m)
    f.noalias() += (model.shrinkage * model.stages[m].gamma) * model.stages[m].tree.predict(x);
  return f;
}

VectorXd predict_counts(const BoostedModel& model, const MatrixXd& x) {
  return predict(model, x).cwiseMax(0.0);
}

// Versioned plain-text layout, one token group per line:
//   tmcda-boosted-model 1
//   loss <name> / n_features <q> / init <F0> / shrinkage <nu> / alpha <a> / stages <M>
//   stage <m> gamma <g> nodes <k>, followed by k lines "<feature> <threshold> <left> <right> <value>"
//   end
void save_model(const BoostedModel& model, std::ostream& out) {
  using text::format_number;
  out << "tmcda-boosted-model 1\n";
  out << "loss " << loss_name(model.loss) << '\n';
  out << "n_features " << model.n_features << '\n';
  out << "init " << format_number(model.init) << '\n';
  out << "shrinkage " << format_number(model.shrinkage) << '\n';
  out << "alpha " << format_number(model.alpha) << '\n';
  out << "stages " << model.stages.size() << '\n';
  for (std::size_t m = 0; m < model.stages.size(); ++m) {
    const auto& stage = model.stages[m];
    out << "stage " << m << " gamma " << format_number(stage.gamma) << " nodes "
        << stage.tree.nodes().size() << '\n';
    for (const auto& n : stage.tree.nodes())
      out << n.feature << ' ' << format_number(n.threshold) << ' ' << n.left << ' ' << n.right
          << ' ' << format_number(n.value) << '\n';
  }
  out << "end\n";
}

BoostedModel load_model(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw SchemaError("model file: unexpected end of input");
    ++line_no;
    return std::istringstream(line);
  };
  auto fail = [&](const std::string& what) -> SchemaError {
    return SchemaError("model file line " + std::to_string(line_no) + ": " + what);
  };
  auto number = [&](const std::string& token) {
    auto v = text::parse_number(token);
    if (!v) throw fail("bad number '" + token + "'");
    return *v;
  };
  auto keyed = [&](std::string_view key) {
    auto is = next();
    std::string k, v;
    if (!(is >> k >> v) || k != key) throw fail("expected '" + std::string(key) + "'");
    return v;
  };

  {
    auto is = next();
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "tmcda-boosted-model") throw fail("not a model file");
    if (version != 1) throw fail("unsupported model version " + std::to_string(version));
  }
  BoostedModel model;
  model.loss = parse_loss(keyed("loss"));
  model.n_features = static_cast<Index>(number(keyed("n_features")));
  model.init = number(keyed("init"));
  model.shrinkage = number(keyed("shrinkage"));
  model.alpha = number(keyed("alpha"));
  const auto stage_count = static_cast<std::size_t>(number(keyed("stages")));
  for (std::size_t m = 0; m < stage_count; ++m) {
    auto is = next();
    std::string kw_stage, kw_gamma, kw_nodes, gamma_text;
    std::size_t index = 0, node_count = 0;
    if (!(is >> kw_stage >> index >> kw_gamma >> gamma_text >> kw_nodes >> node_count) ||
        kw_stage != "stage" || kw_gamma != "gamma" || kw_nodes != "nodes" || index != m)
      throw fail("malformed stage header");
    std::vector<RegressionTree::Node> nodes(node_count);
    for (auto& node : nodes) {
      auto ns = next();
      std::string threshold, value;
      if (!(ns >> node.feature >> threshold >> node.left >> node.right >> value))
        throw fail("malformed node");
      if (node.feature >= model.n_features) throw fail("node feature out of range");
      node.threshold = number(threshold);
      node.value = number(value);
    }
    model.stages.push_back({number(gamma_text), RegressionTree(std::move(nodes))});
  }
  if (next().str() != "end") throw fail("expected 'end'");
  return model;
}

}  // namespace tmcda

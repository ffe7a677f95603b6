#include <benchmark/benchmark.h>

#include <random>

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

MatrixXd gaussian(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

VectorXd response(const MatrixXd& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  VectorXd y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    y(i) = 2.0 * x(i, 0) - x(i, 1) + 0.5 * x(i, 2) * x(i, 3) + normal(rng);
  return y;
}

void BM_LassoFit(benchmark::State& state) {
  const MatrixXd x = gaussian(1, state.range(0), 25);
  const VectorXd y = response(x, 2);
  const double lambda = 0.05 * lambda_max(x, y);
  for (auto _ : state) benchmark::DoNotOptimize(fit_lasso(x, y, lambda));
}
BENCHMARK(BM_LassoFit)->Arg(500)->Arg(2000);

void BM_LassoCv(benchmark::State& state) {
  const MatrixXd x = gaussian(1, state.range(0), 25);
  const VectorXd y = response(x, 2);
  for (auto _ : state) benchmark::DoNotOptimize(cross_validate_lambda(x, y, LassoCvOptions{}));
}
BENCHMARK(BM_LassoCv)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_Itml(benchmark::State& state) {
  const auto d = state.range(0);
  const MatrixXd x = gaussian(3, 400, d);
  const VectorXd y = response(x, 4);
  const auto a0 = MetricMatrix::identity(d);
  const auto cons = build_constraints(x, y, a0, ConstraintOptions{});
  for (auto _ : state) benchmark::DoNotOptimize(fit_itml(x, cons, a0, ItmlOptions{}));
}
BENCHMARK(BM_Itml)->Arg(5)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_Match(benchmark::State& state) {
  const MatrixXd source = gaussian(5, state.range(0), 10), target = gaussian(6, 400, 10);
  const auto a = MetricMatrix::identity(10);
  for (auto _ : state) benchmark::DoNotOptimize(match_source_to_target(a, target, source));
}
BENCHMARK(BM_Match)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_GmmFit(benchmark::State& state) {
  const MatrixXd x = gaussian(7, 400, 8);
  EMConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_gmm(x, static_cast<int>(state.range(0)), cfg));
}
BENCHMARK(BM_GmmFit)->Arg(2)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_Gbbw(benchmark::State& state) {
  LabeledSet source{gaussian(8, state.range(0), 10), {}}, target{gaussian(9, 400, 10), {}};
  source.y = response(source.x, 10);
  target.y = response(target.x, 11);
  TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_gbbw(source, target, cfg));
}
BENCHMARK(BM_Gbbw)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Estimation(benchmark::State& state) {
  const auto data = generate_synthetic_network(1, 6, 1.0, 96);
  const auto split = split_domains(data, "I01");
  const auto config = PipelineConfig::defaults(Movement::through);
  for (auto _ : state)
    benchmark::DoNotOptimize(run_estimation(split.source, split.target_features, config));
}
BENCHMARK(BM_Estimation)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

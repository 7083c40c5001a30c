#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fairmix/cluster.hpp"
#include "fairmix/embednet.hpp"
#include "fairmix/evalproto.hpp"

using namespace fairmix;

namespace {

void BM_PairAccuracy(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 2);
    scores[i] = normal(rng) + (labels[i] ? 1.0 : 0.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(pair_accuracy(scores, labels, 10).accuracy);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_PairAccuracy)->Arg(600)->Arg(6000);

void BM_KnnMembership(benchmark::State& state) {
  const auto per_race = static_cast<Eigen::Index>(state.range(0));
  std::srand(2);
  RaceGroups groups;
  for (auto& g : groups) g = Eigen::MatrixXd::Random(per_race, 64);
  const ClusterConfig cfg{20, static_cast<std::size_t>(per_race), 1, 1e-6};
  for (auto _ : state) benchmark::DoNotOptimize(knn_membership(groups, cfg).membership);
}
BENCHMARK(BM_KnnMembership)->Arg(100)->Arg(400);

void BM_LossAndGrad(benchmark::State& state, LossHead head) {
  const int batch = static_cast<int>(state.range(0));
  const auto model = init_model({64, 128, 32}, 200, head, 3);
  std::srand(3);
  Batch b;
  b.inputs = Eigen::MatrixXd::Random(64, batch);
  for (int i = 0; i < batch; ++i) b.labels.push_back(i % 200);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(model, b).loss);
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK_CAPTURE(BM_LossAndGrad, softmax, LossHead{SoftmaxCE{}})->Arg(64);
BENCHMARK_CAPTURE(BM_LossAndGrad, center, LossHead{CenterLoss{}})->Arg(64);
BENCHMARK_CAPTURE(BM_LossAndGrad, sphereface, LossHead{SphereFace{}})->Arg(64);
BENCHMARK_CAPTURE(BM_LossAndGrad, arcface, LossHead{ArcFace{}})->Arg(64);

}  // namespace

BENCHMARK_MAIN();

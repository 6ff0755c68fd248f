#include "ktb/backbone.hpp"
#include "ktb/metrics.hpp"
#include "ktb/tensor.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

std::shared_ptr<ktb::QMatrix> qmatrix(int nq, int nc) {
  std::vector<std::string> qids, cids;
  std::vector<std::vector<int>> rows;
  for (int c = 0; c < nc; ++c) cids.push_back(std::to_string(c));
  for (int q = 0; q < nq; ++q) {
    qids.push_back(std::to_string(q));
    rows.push_back({q % nc});
  }
  return std::make_shared<ktb::QMatrix>(qids, cids, rows);
}

ktb::Sequence sequence(std::size_t len, int nq, ktb::Rng& rng) {
  std::uniform_int_distribution<int> qd(0, nq - 1);
  std::bernoulli_distribution ad(0.7);
  ktb::Sequence s;
  for (std::size_t t = 0; t < len; ++t) {
    s.questions.push_back(qd(rng));
    s.labels.push_back(ad(rng) ? 1 : 0);
  }
  return s;
}

void backbone_step(benchmark::State& state, ktb::BackboneKind kind) {
  auto qm = qmatrix(500, 40);
  auto model = ktb::make_backbone(kind, {static_cast<int>(state.range(0)), 50, ktb::ConceptAggregation::Sum},
                                  qm, std::vector<bool>(500, true), 1);
  ktb::Rng rng(2);
  const auto seq = sequence(50, 500, rng);
  ktb::TensorSet grads = model->params().zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(ktb::backbone_bce(*model, seq, &grads));
  }
  state.SetItemsProcessed(state.iterations() * 50);
}

void BM_DktForwardBackward(benchmark::State& state) { backbone_step(state, ktb::BackboneKind::Dkt); }
void BM_SaktForwardBackward(benchmark::State& state) { backbone_step(state, ktb::BackboneKind::Sakt); }

void BM_Auc(benchmark::State& state) {
  ktb::Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  std::vector<int> labels(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = u(rng);
    labels[i] = u(rng) < 0.7 ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(ktb::auc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_DktForwardBackward)->Arg(32)->Arg(64);
BENCHMARK(BM_SaktForwardBackward)->Arg(32)->Arg(64);
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);
BENCHMARK_MAIN();

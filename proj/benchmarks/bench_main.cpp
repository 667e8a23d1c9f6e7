#include <benchmark/benchmark.h>

#include "support.hpp"
#include "tracecal/estimator.hpp"
#include "tracecal/hpo.hpp"
#include "tracecal/logit_features.hpp"
#include "tracecal/metrics.hpp"
#include "tracecal/segmentation.hpp"
#include "tracecal/training.hpp"

using namespace tracecal;

namespace {

ScoredSet random_scores(std::size_t n) {
  Rng rng(1);
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(rng.uniform());
    s.labels.push_back(rng.bernoulli(s.scores.back()) ? 1 : 0);
  }
  return s;
}

void BM_Auroc(benchmark::State& state) {
  const auto s = random_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(auroc(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Range(1 << 10, 1 << 17);

void BM_Ece(benchmark::State& state) {
  const auto s = random_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ece(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Ece)->Range(1 << 10, 1 << 17);

void BM_YoudenThreshold(benchmark::State& state) {
  const auto s = random_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(youden_threshold(s));
}
BENCHMARK(BM_YoudenThreshold)->Range(1 << 10, 1 << 16);

void BM_TokenFeatures(benchmark::State& state) {
  Rng rng(2);
  std::vector<double> z(static_cast<std::size_t>(state.range(0)));
  for (auto& x : z) x = 4.0 * rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(token_features(z));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TokenFeatures)->Arg(20)->Arg(1000)->Arg(32000)->Arg(152064);

void BM_Segment(benchmark::State& state) {
  std::string response;
  const char* openers[] = {"Let me think about the setup. ", "Wait, check the carry. ", "Alternatively, try ",
                           "Hmm, reconsider the bound. "};
  for (int i = 0; i < state.range(0); ++i) {
    response += openers[i % 4];
    response += "The partial sum is " + std::to_string(i * 17) + " and the next step follows.\n\n";
  }
  const auto keywords = KeywordSet::defaults();
  for (auto _ : state) benchmark::DoNotOptimize(segment(response, keywords));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(response.size()));
}
BENCHMARK(BM_Segment)->Arg(16)->Arg(256)->Arg(2048);

void BM_GnnSbForward(benchmark::State& state, const std::string& method) {
  Rng rng(3);
  const auto ex = test::random_example(rng, static_cast<std::size_t>(state.range(0)), 64, "b");
  TrialDims dims;
  dims.hidden_dim = 64;
  Rng hp_rng(4);
  const auto hp = sample_hyperparameters(search_space(method), hp_rng);
  const auto est = estimator_from_config(build_estimator_config({method, hp}, dims, 5), Services::defaults());
  for (auto _ : state) benchmark::DoNotOptimize(est->score(ex));
}
BENCHMARK_CAPTURE(BM_GnnSbForward, gcn, std::string("gnn-sb-gcn"))->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_GnnSbForward, gat, std::string("gnn-sb-gat"))->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_GnnSbForward, graphsage, std::string("gnn-sb-graphsage"))->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();

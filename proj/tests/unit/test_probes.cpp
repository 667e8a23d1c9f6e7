#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "gradcheck.hpp"
#include "support.hpp"
#include "tracecal/error.hpp"
#include "tracecal/hpo.hpp"
#include "tracecal/metrics.hpp"
#include "tracecal/probes.hpp"
#include "tracecal/training.hpp"

using namespace tracecal;
using nlohmann::json;
using tracecal::test::random_example;

namespace {

std::unique_ptr<NeuralEstimator> build(const std::string& method, json hp, std::size_t hidden_dim,
                                       std::uint64_t seed = 1) {
  TrialDims dims;
  dims.hidden_dim = hidden_dim;
  auto est = estimator_from_config(build_estimator_config({method, std::move(hp)}, dims, seed),
                                   Services::defaults());
  return std::unique_ptr<NeuralEstimator>(dynamic_cast<NeuralEstimator*>(est.release()));
}

struct Batch {
  std::vector<TraceExample> examples;
  std::vector<const TraceExample*> ptrs;
};

Batch random_batch(std::size_t count, std::size_t d, std::uint64_t seed, std::size_t max_chunks = 6) {
  Batch b;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    b.examples.push_back(random_example(rng, 1 + rng.uniform_index(max_chunks), d, "r" + std::to_string(i)));
  }
  for (const auto& e : b.examples) b.ptrs.push_back(&e);
  return b;
}

}  // namespace

TEST_CASE("mlp parameter counts") {
  CHECK(nn::Mlp::count(41, {32}, 1) == 1377);
  CHECK(nn::Mlp::count(41, {0}, 1) == 42);
  CHECK(nn::Mlp::count(17, {}, 1) == 18);
  CHECK(PhsvEstimator::count_parameters({{"classifier_layers", {32}}}, 41) == 1377);
  const auto est = build("phsv", {{"classifier_layers", {32}}}, 41);
  CHECK(est->parameters()->count() == 1377);
  CHECK(count_parameters(est->config()) == 1377);
}

TEST_CASE("probe and sequence heads pass gradient checks") {
  const auto batch = random_batch(5, 6, 3);
  const std::vector<std::pair<std::string, json>> cases = {
      {"phsv", {{"classifier_layers", {8, 4}}}},
      {"pik", {{"classifier_layers", {5}}}},
      {"sfhs-mlp", {{"classifier_layers", {4}}}},
      {"sfhs-conv", {{"classifier_layers", {4}}, {"conv_layers", {5, 3}}, {"kernel_sizes", {3, 3}}, {"dropout", 0.0}}},
      {"sfhs-lstm",
       {{"classifier_layers", {4}}, {"hidden_dim", 3}, {"num_layers", 2}, {"bidirectional", true}, {"dropout", 0.0}}},
      {"tlcc-conv", {{"classifier_layers", {0}}, {"conv_layers", {4}}, {"kernel_sizes", {5}}, {"dropout", 0.0}}},
  };
  for (const auto& [method, hp] : cases) {
    const auto est = build(method, hp, 6);
    Rng rng(11);
    const auto r = test::check_gradients(est->parameters()->vars(),
                                         [&] { return test::trace_loss(*est, batch.ptrs); }, 10, rng);
    INFO(method);
    CHECK(r.checked == 10);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("phsv scores a trace by its final chunk") {
  Rng rng(2);
  auto ex = random_example(rng, 4, 6, "a");
  const auto est = build("phsv", {{"classifier_layers", {8}}}, 6);
  const auto per_chunk = dynamic_cast<const PhsvEstimator&>(*est).chunk_confidences(ex.chunk_hidden);
  REQUIRE(per_chunk.size() == 4);
  CHECK(est->score(ex) == doctest::Approx(per_chunk.back()).epsilon(1e-12));
  // Earlier chunks do not affect the trace score.
  auto other = ex;
  other.chunk_hidden.topRows(3).setConstant(9.0);
  CHECK(est->score(other) == est->score(ex));
}

TEST_CASE("sequence heads ignore padded rows and keep the last 64 chunks") {
  Rng rng(4);
  for (const char* method : {"sfhs-mlp", "sfhs-conv", "sfhs-lstm"}) {
    json hp = {{"classifier_layers", {4}}, {"dropout", 0.0}};
    if (std::string(method) == "sfhs-conv") {
      hp["conv_layers"] = {4, 4};
      hp["kernel_sizes"] = {3, 3};
    }
    if (std::string(method) == "sfhs-lstm") {
      hp["hidden_dim"] = 4;
      hp["num_layers"] = 1;
      hp["bidirectional"] = true;
    }
    const auto est = build(method, hp, 5);
    const auto& head = dynamic_cast<const SequenceHeadEstimator&>(*est);
    const auto ex = random_example(rng, 7, 5, "x");
    nn::Matrix padded(10, 5);
    padded.topRows(7) = ex.chunk_hidden;
    padded.bottomRows(3).setConstant(123.0);
    std::vector<bool> mask(10, false);
    std::fill(mask.begin(), mask.begin() + 7, true);
    INFO(method);
    CHECK(head.score_padded(padded, mask) == doctest::Approx(est->score(ex)).epsilon(1e-12));

    auto longer = random_example(rng, 70, 5, "y");
    auto tail = longer;
    tail.chunk_hidden = keep_tail(longer.chunk_hidden, 64);
    CHECK(tail.chunk_hidden.rows() == 64);
    CHECK(est->score(longer) == est->score(tail));
  }
}

TEST_CASE("half partition is a disjoint, deterministic split") {
  const auto batch = random_batch(11, 3, 5);
  auto shuffled = batch.ptrs;
  Rng rng(1);
  rng.shuffle(shuffled);
  const auto p = phsv_half_partition(batch.ptrs);
  const auto q = phsv_half_partition(shuffled);
  CHECK(p.probe_half.size() == 5);
  CHECK(p.complement.size() == 6);
  CHECK(p.probe_half == q.probe_half);
  std::set<const TraceExample*> seen(p.probe_half.begin(), p.probe_half.end());
  for (const auto* e : p.complement) CHECK(seen.insert(e).second);
  CHECK(seen.size() == 11);
  const auto rec = record_partition(p);
  CHECK(rec.disjoint);
  CHECK(rec.probe_size == 5);
  json manifest = {{"phsv_half", {{"probe_digest", rec.probe_digest}, {"complement_digest", rec.complement_digest}, {"disjoint", true}}}};
  CHECK(verify_partition(manifest, p.probe_half, p.complement));
  CHECK_FALSE(verify_partition(manifest, p.complement, p.probe_half));
}

TEST_CASE("inverse frequency weights average to one") {
  const std::vector<double> y = {1, 0, 0, 0, 1, 0, 0, 0};
  const auto w = inverse_frequency_weights(y);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) / 8 == doctest::Approx(1.0));
  CHECK(w[0] == doctest::Approx(2.0));
  CHECK(w[1] == doctest::Approx(8.0 / 12.0));
  CHECK(inverse_frequency_weights(std::vector<double>{1, 1}) == std::vector<double>{1, 1});
}

TEST_CASE("phsv needs chunk labels; pik needs both classes") {
  auto batch = random_batch(4, 3, 9);
  for (auto& e : batch.examples) std::fill(e.chunk_labels.begin(), e.chunk_labels.end(), ChunkLabel{});
  const auto phsv = build("phsv", {{"classifier_layers", {2}}}, 3);
  CHECK_THROWS_AS(phsv->make_units(batch.ptrs), TrainingError);
  for (auto& e : batch.examples) e.label = 1;
  const auto pik = build("pik", {{"classifier_layers", {2}}}, 3);
  CHECK_THROWS_AS(pik->make_units(batch.ptrs), TrainingError);
}

TEST_CASE("phsv learns a planted signal") {
  auto set = test::synthetic_examples(test::small_corpus(300, 2.0, 3));
  const auto split = phsv_half_partition(set->pool);
  const auto est = build("phsv", {{"classifier_layers", {16}}}, 8, 5);
  TrainOptions opt;
  opt.max_epochs = 40;
  opt.patience = 10;
  opt.learning_rate = 1e-2;
  const auto outcome = train_neural(*est, split.probe_half, split.complement, opt);
  CHECK(outcome.epochs_run >= outcome.best_epoch);
  CHECK(outcome.history.size() == static_cast<std::size_t>(outcome.epochs_run));
  const auto scores = est->score_all(set->test);
  std::vector<int> labels;
  for (const auto* e : set->test) labels.push_back(e->label);
  CHECK(auroc(ScoredSet{scores, labels}) > 0.8);
}

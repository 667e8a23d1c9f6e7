#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "support.hpp"
#include "tracecal/error.hpp"
#include "tracecal/hpo.hpp"
#include "tracecal/training.hpp"

using namespace tracecal;
using nlohmann::json;
using tracecal::test::TempDir;

namespace {

TrialResult trial(double composite, bool feasible) {
  TrialResult t;
  t.val_composite = composite;
  t.feasible = feasible;
  return t;
}

const double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST_CASE("feasibility gate") {
  CHECK_FALSE(is_feasible(0.6, 0.49));
  CHECK(is_feasible(0.51, 0.51));
  CHECK(is_feasible(0.5, 0.5));
  // Monotone in both rates.
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(), p = rng.uniform();
    if (is_feasible(s, p)) CHECK(is_feasible(s + (1 - s) * rng.uniform(), p + (1 - p) * rng.uniform()));
  }
  const auto f = assess_feasibility(ScoredSet{{0.1, 0.4, 0.6, 0.9}, {0, 0, 1, 1}});
  CHECK(f.feasible);
  CHECK(f.threshold == 0.6);
  CHECK(f.sensitivity == 1.0);
  CHECK(f.specificity == 1.0);
}

TEST_CASE("select_best") {
  std::vector<TrialResult> a = {trial(0.70, true), trial(0.95, false)};
  CHECK(select_best(a).index == 0);
  CHECK_FALSE(select_best(a).infeasible);
  std::vector<TrialResult> b = {trial(0.4, false), trial(0.6, false), trial(0.5, false)};
  CHECK(select_best(b).index == 1);
  CHECK(select_best(b).infeasible);
  std::vector<TrialResult> c = {trial(0.3, true), trial(0.8, true), trial(0.8, true)};
  CHECK(select_best(c).index == 1);
  CHECK_THROWS_AS(select_best(std::vector<TrialResult>{}), InvalidInput);

  // Never infeasible while a feasible trial exists.
  Rng rng(2);
  for (int t = 0; t < 500; ++t) {
    std::vector<TrialResult> ts;
    const std::size_t n = 1 + rng.uniform_index(10);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      ts.push_back(trial(rng.uniform(), rng.bernoulli(0.3)));
      any = any || ts.back().feasible;
    }
    const auto s = select_best(ts);
    CHECK(s.infeasible == !any);
    if (any) CHECK(ts[s.index].feasible);
  }
}

TEST_CASE("early stopping patience") {
  EarlyStopper stop(20);
  int epochs = 0;
  for (int e = 1; e <= 200 && !stop.should_stop(); ++e) {
    stop.update(e <= 5 ? 0.1 * e : 0.5);
    epochs = e;
  }
  CHECK(stop.best_epoch() == 5);
  CHECK(epochs == 25);
}

TEST_CASE("prune decisions") {
  std::vector<double> hist(15, 0.4);
  std::vector<double> above(15, 0.5), equal(15, 0.4), none(15, kNaN);
  CHECK_FALSE(prune_decision(std::span(hist).first(10), std::span(above).first(10)));
  CHECK(prune_decision(std::span(hist).first(11), std::span(above).first(11)));
  CHECK_FALSE(prune_decision(std::span(hist).first(11), std::span(equal).first(11)));
  CHECK_FALSE(prune_decision(hist, none));
  // The running best counts, not the latest value.
  std::vector<double> dip(11, 0.6);
  dip.back() = 0.1;
  CHECK_FALSE(prune_decision(dip, std::span(above).first(11)));

  MedianPruner pruner;
  for (int e = 1; e <= 12; ++e) pruner.report(0, e, 0.5);
  CHECK_FALSE(pruner.should_prune(1, std::span(hist).first(11)));  // no finished peers
  pruner.finish(0);
  CHECK(std::isnan(pruner.peer_median(0, 3)));
  CHECK(pruner.peer_median(1, 3) == 0.5);
  CHECK(pruner.should_prune(1, std::span(hist).first(11)));
  CHECK_FALSE(pruner.should_prune(1, std::span(hist).first(10)));
  for (int e = 1; e <= 12; ++e) pruner.report(2, e, 0.7);
  pruner.finish(2);
  CHECK(pruner.peer_median(1, 5) == doctest::Approx(0.6));
}

TEST_CASE("search spaces are closed under sampling") {
  for (const auto& m : searchable_methods()) {
    const auto space = search_space(m);
    Rng rng(3);
    INFO(m);
    for (int i = 0; i < 50; ++i) CHECK(in_space(space, sample_hyperparameters(space, rng)));
    for (const auto& c : space) CHECK(!c.options.empty());
  }
  const auto shared = search_space("phsv");
  auto find = [&](const std::string& name) {
    for (const auto& c : shared)
      if (c.name == name) return c.options;
    return std::vector<json>{};
  };
  CHECK(find("learning_rate") == std::vector<json>{1e-4, 1e-3});
  CHECK(find("weight_decay") == std::vector<json>{1e-5, 1e-4});
  CHECK(find("classifier_dropout") == std::vector<json>{0.1, 0.25, 0.4});
  CHECK_FALSE(in_space(shared, {{"learning_rate", 0.5}}));
  CHECK_THROWS_AS(search_space("nope"), ConfigError);
}

TEST_CASE("parameter counts and the budget gate") {
  TrialDims dims;
  dims.hidden_dim = 41;
  CHECK(count_parameters({"phsv", {{"classifier_layers", {32}}}}, dims) == 1377);
  CHECK(count_parameters({"pik", {{"classifier_layers", {0}}}}, dims) == 42);
  dims.hidden_dim = 8192;
  const TrialConfig big{"phsv", {{"classifier_layers", {512, 256}}, {"learning_rate", 1e-3}}};
  CHECK(count_parameters(big, dims) == 8192 * 512 + 512 + 512 * 256 + 256 + 257);
  CHECK(count_parameters(big, dims) > kParameterBudget);
  CHECK_THROWS_AS(count_parameters({"mystery", json::object()}, dims), ConfigError);

  // Rejected before any estimator is built or trained.
  auto set = test::synthetic_examples(test::small_corpus(40));
  TrialData data;
  data.train = set->pool;
  data.val = set->pool;
  data.hidden_dim = 8192;
  int epochs_seen = 0;
  TrainOptions opt;
  opt.on_epoch = [&](int, double, const std::vector<double>&) {
    ++epochs_seen;
    return false;
  };
  CHECK_THROWS_AS(run_trial(big, data, 1, opt), BudgetExceeded);
  CHECK(epochs_seen == 0);
}

TEST_CASE("run_trial is deterministic given the seed") {
  auto set = test::synthetic_examples(test::small_corpus(120, 1.5, 11));
  const auto half = phsv_half_partition(set->pool);
  TrialData data;
  data.train = half.probe_half;
  data.val = half.complement;
  data.hidden_dim = 8;
  TrainOptions opt;
  opt.max_epochs = 8;
  const TrialConfig cfg{"phsv", {{"classifier_layers", {16}}, {"learning_rate", 1e-3}, {"weight_decay", 1e-5},
                                 {"classifier_dropout", 0.1}}};
  const auto a = run_trial(cfg, data, 42, opt);
  const auto b = run_trial(cfg, data, 42, opt);
  CHECK(a.result == b.result);
  CHECK(a.result.parameter_count == 8 * 16 + 16 + 17);
  CHECK(a.result.history.size() == static_cast<std::size_t>(a.result.epochs_run));
  CHECK(a.result.feasible == is_feasible(a.result.sensitivity, a.result.specificity));
  CHECK(a.estimator->threshold() == a.result.threshold);
  const auto c = run_trial(cfg, data, 43, opt);
  CHECK(c.result.history != a.result.history);
}

TEST_CASE("run_study respects the trial count and writes its ledger") {
  auto set = test::synthetic_examples(test::small_corpus(100, 1.5, 12));
  const auto half = phsv_half_partition(set->pool);
  TempDir dir;
  TrialData data;
  data.train = half.probe_half;
  data.val = half.complement;
  data.hidden_dim = 8;
  StudyOptions opt;
  opt.n_trials = 6;
  opt.seed = 5;
  opt.train.max_epochs = 12;
  opt.ledger = dir / "study.jsonl";
  const auto study = run_study("phsv", data, opt);
  CHECK(study.trials.size() == 6);
  REQUIRE(study.estimator);
  std::set<std::string> distinct;
  for (const auto& t : study.trials) distinct.insert(t.hp.dump());
  CHECK(distinct.size() == 6);
  const auto& best = study.trials[study.best.index];
  for (const auto& t : study.trials) {
    if (t.feasible && !study.best.infeasible) CHECK(t.val_composite <= best.val_composite);
  }
  std::ifstream in(dir / "study.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    CHECK(j.contains("trial"));
    CHECK(j.contains("epoch"));
    ++lines;
  }
  std::size_t epochs = 0;
  for (const auto& t : study.trials) epochs += static_cast<std::size_t>(t.epochs_run);
  CHECK(lines == epochs);
  StudyOptions too_many = opt;
  too_many.n_trials = kMaxTrials + 1;
  CHECK_THROWS_AS(run_study("phsv", data, too_many), ConfigError);
}

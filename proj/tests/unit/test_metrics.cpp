#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tracecal/error.hpp"
#include "tracecal/metrics.hpp"
#include "tracecal/reporting.hpp"

using namespace tracecal;

namespace {

ScoredSet set_of(std::vector<double> s, std::vector<int> y) { return ScoredSet{std::move(s), std::move(y)}; }

}  // namespace

TEST_CASE("ece worked examples") {
  CHECK(ece(set_of({0.0, 1.0, 0.0, 1.0}, {0, 1, 0, 1})) == 0.0);
  CHECK(ece(set_of(std::vector<double>(10, 0.95), std::vector<int>(10, 1))) == doctest::Approx(0.05).epsilon(1e-12));
  std::vector<int> y(10, 0);
  y[3] = 1;
  CHECK(ece(set_of(std::vector<double>(10, 0.05), y)) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("bin edges are right-closed with 0 in the first bin and 1 in the last") {
  CHECK(calibration_bin(0.0, 10) == 0);
  CHECK(calibration_bin(0.1, 10) == 0);
  CHECK(calibration_bin(0.1000001, 10) == 1);
  CHECK(calibration_bin(0.3, 10) == 2);
  CHECK(calibration_bin(0.7, 10) == 6);
  CHECK(calibration_bin(1.0, 10) == 9);
  CHECK_THROWS_AS(calibration_bin(0.5, 0), InvalidInput);
}

TEST_CASE("brier worked examples") {
  CHECK(brier(set_of({0, 1}, {0, 1})) == 0.0);
  CHECK(brier(set_of({0.5, 0.5, 0.5}, {0, 1, 1})) == 0.25);
  CHECK(brier(set_of({0.8, 0.3}, {1, 0})) == doctest::Approx(0.065).epsilon(1e-12));
}

TEST_CASE("auroc worked examples") {
  CHECK(auroc(set_of({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1})) == 1.0);
  CHECK(auroc(set_of({0.1, 0.9, 0.4, 0.6}, {0, 1, 1, 0})) == 0.75);
  CHECK(auroc(set_of({0.5, 0.5, 0.5}, {0, 1, 1})) == 0.5);
  CHECK_THROWS_AS(auroc(set_of({0.5, 0.6}, {1, 1})), UndefinedMetric);
}

TEST_CASE("aucpr worked examples") {
  CHECK(aucpr(set_of({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1})) == 1.0);
  // Single positive ranked last of four: precision 1/4 at recall 1.
  CHECK(aucpr(set_of({0.9, 0.8, 0.7, 0.1}, {0, 0, 0, 1})) == 0.25);
  CHECK(aucpr(set_of({0.4, 0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0, 0})) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(aucpr(set_of({0.5}, {0})), UndefinedMetric);
}

TEST_CASE("fixed instance against sklearn, frozen") {
  // roc_auc_score, average_precision_score and brier_score_loss from
  // scikit-learn on this instance; ECE by direct binning in numpy.
  const ScoredSet s = set_of({0.12, 0.91, 0.35, 0.35, 0.66, 0.08, 0.77, 0.5, 0.42, 0.99, 0.2, 0.61},
                             {0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0});
  CHECK(std::abs(auroc(s) - 0.79166666666666663) < 1e-12);
  CHECK(std::abs(aucpr(s) - 0.85925925925925917) < 1e-12);
  CHECK(std::abs(brier(s) - 0.18174999999999999) < 1e-12);
  CHECK(std::abs(ece(s) - 0.21499999999999997) < 1e-12);
}

TEST_CASE("threshold metrics") {
  const auto all = threshold_metrics(ConfusionCounts{1, 0, 1, 0});
  CHECK(all.acc == 1.0);
  CHECK(all.f1 == 1.0);
  CHECK(all.precision == 1.0);
  CHECK(all.recall == 1.0);
  CHECK(all.specificity == 1.0);

  const auto none = threshold_metrics(ConfusionCounts{0, 0, 3, 2});
  CHECK(none.precision_undefined);
  CHECK(none.precision == 0.0);
  CHECK(none.f1 == 0.0);

  const auto mixed = threshold_metrics(ConfusionCounts{2, 1, 2, 1});
  CHECK(mixed.acc == doctest::Approx(4.0 / 6.0));
  CHECK(mixed.recall == doctest::Approx(2.0 / 3.0));
  CHECK(mixed.specificity == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(threshold_metrics(set_of({0.5}, {1}), 1.5), InvalidInput);
}

TEST_CASE("youden threshold") {
  CHECK(youden_threshold(set_of({0.2, 0.8}, {0, 1})) == 0.8);
  // Equal scores: J = 0 at the first candidate.
  CHECK(youden_threshold(set_of({0.4, 0.4, 0.4, 0.4}, {0, 1, 1, 0})) == 0.0);
  // Monotone relabeling keeps the confusion matrix at the chosen threshold.
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    auto in = oracle::random_instance(rng, 30);
    ScoredSet a{in.scores, in.labels}, b = a;
    for (auto& s : b.scores) s = s * s * 0.9;
    const auto ca = confusion_at(a, youden_threshold(a));
    const auto cb = confusion_at(b, youden_threshold(b));
    CHECK(ca.tp == cb.tp);
    CHECK(ca.fp == cb.fp);
  }
}

TEST_CASE("composite score") {
  CHECK(std::abs(composite_score(0.672, 0.160, 0.6) - 0.7392) < 1e-12);
  CHECK(composite_score(1.0, 0.0) == 1.0);
  CHECK(composite_score(0.3, 0.2, 0.0) == doctest::Approx(0.8));
}

TEST_CASE("metrics match brute-force oracles on random instances") {
  Rng rng(2024);
  for (int t = 0; t < 300; ++t) {
    const auto in = oracle::random_instance(rng);
    const ScoredSet s{in.scores, in.labels};
    CHECK(std::abs(auroc(s) - oracle::auroc(in)) <= 1e-12);
    CHECK(std::abs(aucpr(s) - oracle::aucpr(in)) <= 1e-12);
    CHECK(std::abs(brier(s) - oracle::brier(in)) <= 1e-12);
    CHECK(std::abs(ece(s) - oracle::ece(in)) <= 1e-12);
    CHECK(youden_threshold(s) == oracle::youden(in));
    const double th = youden_threshold(s);
    const auto m = threshold_metrics(s, std::min(th, 1.0));
    const auto r = oracle::rates(oracle::counts_at(in, std::min(th, 1.0)));
    CHECK(std::abs(m.acc - r.acc) <= 1e-12);
    CHECK(std::abs(m.f1 - r.f1) <= 1e-12);
    CHECK(std::abs(m.specificity - r.specificity) <= 1e-12);
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto in = oracle::random_instance(rng);
    ScoredSet a{in.scores, in.labels}, b = a;
    for (auto& s : b.scores) s = 1.0 / (1.0 + std::exp(-8.0 * (s - 0.3)));
    CHECK(auroc(a) == auroc(b));
  }
}

TEST_CASE("calibrated sampler gives small ece and diagonal reliability points") {
  Rng rng(77);
  ScoredSet s;
  for (int i = 0; i < 100000; ++i) {
    const double p = rng.uniform();
    s.scores.push_back(p);
    s.labels.push_back(rng.bernoulli(p) ? 1 : 0);
  }
  CHECK(ece(s) <= 0.01);
  for (const auto& b : reliability_data(s)) CHECK(std::abs(b.confidence_mean - b.accuracy) <= 0.02);
}

TEST_CASE("constant prevalence on balanced labels has brier 0.25") {
  ScoredSet s;
  for (int i = 0; i < 40; ++i) {
    s.scores.push_back(0.5);
    s.labels.push_back(i % 2);
  }
  CHECK(brier(s) <= 0.25);
}

TEST_CASE("validation of scored sets") {
  CHECK_THROWS_AS(ece(set_of({}, {})), InvalidInput);
  CHECK_THROWS_AS(ece(set_of({0.5}, {1, 0})), InvalidInput);
  CHECK_THROWS_AS(ece(set_of({1.5}, {1})), InvalidInput);
  CHECK_THROWS_AS(ece(set_of({0.5}, {2})), InvalidInput);
  CHECK_THROWS_AS(ece(set_of({std::nan("")}, {1})), InvalidInput);
}

TEST_CASE("metric block json round trip") {
  const ScoredSet s = set_of({0.1, 0.7, 0.3, 0.9}, {0, 1, 1, 1});
  const MetricBlock m = evaluate(s);
  CHECK(MetricBlock::from_json(m.to_json()) == m);
  CHECK(m.youden_threshold == youden_threshold(s));
  CHECK(evaluate(s, 0.5).youden_threshold == 0.5);
  CHECK_THROWS_AS(MetricBlock::from_json({{"ece", 1}}), SchemaError);
}

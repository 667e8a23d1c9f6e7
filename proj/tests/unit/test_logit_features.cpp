#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tracecal/error.hpp"
#include "tracecal/logit_features.hpp"
#include "tracecal/random.hpp"
#include "tracecal/representation.hpp"
#include "oracles.hpp"

using namespace tracecal;

namespace {

void check_close(const TokenFeatureVector& a, const TokenFeatureVector& b, double tol) {
  const auto x = a.as_array(), y = b.as_array();
  for (std::size_t i = 0; i < x.size(); ++i) {
    INFO(TokenFeatureVector::names()[i]);
    CHECK(std::abs(x[i] - y[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("uniform logits") {
  const std::vector<double> z = {0, 0, 0};
  const auto f = token_features(z);
  CHECK(f.top1_prob == doctest::Approx(1.0 / 3));
  CHECK(f.logit_margin == 0);
  CHECK(f.prob_gap == doctest::Approx(0).epsilon(1e-15));
  CHECK(f.norm_entropy == doctest::Approx(1.0));
  CHECK(f.l2_concentration == doctest::Approx(1.0 / 3));
  CHECK(f.logit_std == 0);
  CHECK(f.topk_mass == doctest::Approx(1.0));
  CHECK(f.tail_mass == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("certain logits") {
  const std::vector<double> z = {100, 0, 0};
  const auto f = token_features(z);
  CHECK(f.top1_prob == doctest::Approx(1.0));
  CHECK(f.norm_entropy < 1e-40);
  CHECK(f.l2_concentration == doctest::Approx(1.0));
}

TEST_CASE("p = (0.8, 0.1, 0.1) against a 50-digit oracle, frozen") {
  // mpmath at 50 digits.
  const std::vector<double> z = {std::log(8.0), 0, 0};
  const auto f = token_features(z);
  CHECK(std::abs(f.top1_prob - 0.8) < 1e-12);
  CHECK(std::abs(f.log_top1_prob - -0.22314355131420975577) < 1e-12);
  CHECK(std::abs(f.logit_margin - 2.0794415416798359283) < 1e-12);
  CHECK(std::abs(f.prob_gap - 0.7) < 1e-12);
  CHECK(std::abs(f.entropy - 0.63903185965017694142) < 1e-12);
  CHECK(std::abs(f.norm_entropy - 0.58167186571788675526) < 1e-12);
  CHECK(std::abs(f.topk_mass - 1.0) < 1e-12);
  CHECK(std::abs(f.tail_mass) < 1e-12);
  CHECK(std::abs(f.l2_concentration - 0.66) < 1e-12);
  CHECK(std::abs(f.logit_std - 0.98025814346854719171) < 1e-12);

  const std::vector<double> w = {2.5, -1.0, 0.3, 7.25, -3.5, 0.0, 1.75};
  const auto g = token_features(w);
  CHECK(std::abs(g.top1_prob - 0.98552269122873204918) < 1e-12);
  CHECK(std::abs(g.log_top1_prob - -0.014583127561861155685) < 1e-12);
  CHECK(std::abs(g.logit_margin - 4.75) < 1e-12);
  CHECK(std::abs(g.prob_gap - 0.97699624928846189021) < 1e-12);
  CHECK(std::abs(g.entropy - 0.09122722233189400937) < 1e-12);
  CHECK(std::abs(g.norm_entropy - 0.046881518335357033817) < 1e-12);
  CHECK(std::abs(g.topk_mass - 0.99972138882698286072) < 1e-12);
  CHECK(std::abs(g.tail_mass - 0.00027861117301713927555) < 1e-12);
  CHECK(std::abs(g.l2_concentration - 0.97134534590495578002) < 1e-12);
  CHECK(std::abs(g.logit_std - 3.1076436378053125699) < 1e-12);
}

TEST_CASE("random logits match the long double oracle") {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t V = 2 + rng.uniform_index(63);
    std::vector<double> z(V);
    for (auto& v : z) v = 4.0 * rng.normal();
    check_close(token_features(z), oracle::token_features(z), 1e-9);
  }
}

TEST_CASE("shift invariance") {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    const std::size_t V = 2 + rng.uniform_index(30);
    std::vector<double> z(V), s(V);
    const double c = 50.0 * rng.normal();
    for (std::size_t i = 0; i < V; ++i) {
      z[i] = 3.0 * rng.normal();
      s[i] = z[i] + c;
    }
    check_close(token_features(z), token_features(s), 1e-9);
  }
}

TEST_CASE("token_features input errors") {
  CHECK_THROWS_AS(token_features(std::vector<double>{1.0}), InvalidInput);
  CHECK_THROWS_AS(token_features(std::vector<double>{1.0, INFINITY}), InvalidInput);
  CHECK_THROWS_AS(token_features(std::vector<double>{1.0, 2.0}, 0), InvalidInput);
  // k larger than V saturates the top-k mass.
  CHECK(token_features(std::vector<double>{1.0, 2.0}, 9).topk_mass == doctest::Approx(1.0));
}

TEST_CASE("aggregate_chunk statistics") {
  Rng rng(6);
  auto random_token = [&] {
    std::vector<double> z(8);
    for (auto& v : z) v = rng.normal();
    return token_features(z);
  };
  const auto t0 = random_token();
  const auto single = aggregate_chunk(std::vector<TokenFeatureVector>{t0}, 1);
  CHECK(single.size() == 41);
  for (std::size_t f = 0; f < 10; ++f) {
    CHECK(single[10 + f] == 0.0);
    CHECK(single[f] == single[20 + f]);
    CHECK(single[f] == single[30 + f]);
  }
  const auto twice = aggregate_chunk(std::vector<TokenFeatureVector>{t0, t0}, 2);
  for (std::size_t f = 0; f < 40; ++f) CHECK(twice[f] == doctest::Approx(single[f]).epsilon(1e-15));
  CHECK(single[40] == doctest::Approx(1.0 / 512));

  // Column statistics oracle on three random tokens.
  std::vector<TokenFeatureVector> three = {random_token(), random_token(), random_token()};
  const auto agg = aggregate_chunk(three, 3, 2);
  for (std::size_t f = 0; f < 10; ++f) {
    const double a = three[0].as_array()[f], b = three[1].as_array()[f], c = three[2].as_array()[f];
    const double mean = (a + b + c) / 3;
    const double sd = std::sqrt(((a - mean) * (a - mean) + (b - mean) * (b - mean) + (c - mean) * (c - mean)) / 3);
    CHECK(agg[f] == doctest::Approx(mean).epsilon(1e-14));
    CHECK(agg[10 + f] == doctest::Approx(sd).epsilon(1e-12));
    CHECK(agg[20 + f] == std::min({a, b, c}));
    CHECK(agg[30 + f] == std::max({a, b, c}));
  }
  CHECK(agg[40] == 1.0);

  CHECK_THROWS_AS(aggregate_chunk(std::vector<TokenFeatureVector>{}, 0), InvalidInput);
  CHECK_THROWS_AS(aggregate_chunk(three, 2), InvalidInput);
  CHECK(chunk_feature_names().size() == 41);
}

TEST_CASE("aggregate_chunk is invariant to token order") {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    std::vector<TokenFeatureVector> toks;
    const std::size_t n = 1 + rng.uniform_index(12);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(5);
      for (auto& v : z) v = rng.normal();
      toks.push_back(token_features(z));
    }
    auto shuffled = toks;
    rng.shuffle(shuffled);
    CHECK(aggregate_chunk(toks, n) == aggregate_chunk(shuffled, n));
  }
}

TEST_CASE("featurize_extraction accepts logits or precomputed features") {
  const nlohmann::json row = {
      {"record_id", "r"},
      {"model_id", "m"},
      {"prompt_hidden", {0.5, -0.5}},
      {"chunks",
       {{{"hidden", {1.0, 2.0}}, {"token_logits", {{2.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}}},
        {{"hidden", {3.0, 4.0}},
         {"token_features", {{0.5, -0.69, 1, 0.2, 0.9, 0.8, 1, 0, 0.4, 0.7}}},
         {"token_logprobs", {-0.3}}}}}};
  const auto rep = featurize_extraction(row);
  REQUIRE(rep.chunks.size() == 2);
  CHECK(rep.chunks[0].hidden == std::vector<float>{1.0f, 2.0f});
  const std::vector<double> z0 = {2.0, 0.0, 0.0};
  CHECK(rep.chunks[0].tlcc[0] == doctest::Approx((token_features(z0).top1_prob + 1.0 / (2 + std::exp(1.0)) *
                                                                                     std::exp(1.0)) /
                                                 2));
  // Without token_logprobs, the chosen token is the top-1.
  CHECK(rep.chunks[0].token_logprobs.size() == 2);
  CHECK(rep.chunks[0].token_logprobs[0] == doctest::Approx(token_features(z0).log_top1_prob));
  CHECK(rep.chunks[1].token_logprobs == std::vector<float>{-0.3f});
  CHECK(rep.chunks[1].tlcc[0] == doctest::Approx(0.5));
  CHECK(rep.chunks[1].tlcc[40] == doctest::Approx(1.0 / 512));
}

#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tracecal/error.hpp"
#include "tracecal/graph.hpp"

using namespace tracecal;
using tracecal::test::TempDir;

namespace {

nn::Matrix random_hidden(Rng& rng, std::size_t n, std::size_t d) {
  nn::Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<std::string> texts(std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back("chunk text " + std::to_string(i));
  return t;
}

class FailingNli final : public NliScorer {
 public:
  std::string name() const override { return "failing"; }
  std::array<double, 3> score(std::string_view premise, std::string_view) const override {
    if (premise == "chunk text 1") throw std::runtime_error("model offline");
    return {1.0, 0.0, 0.0};
  }
};

}  // namespace

TEST_CASE("edge counts and structure for n in [1, 32]") {
  Rng rng(1);
  const HashNliScorer nli;
  for (std::size_t n = 1; n <= 32; ++n) {
    const auto h = random_hidden(rng, n, 4);
    const auto chain = build_chain_graph(h);
    REQUIRE(chain.edges.size() == n - 1);
    for (std::size_t e = 0; e < chain.edges.size(); ++e) {
      CHECK(chain.edges[e] == std::pair<int, int>(static_cast<int>(e), static_cast<int>(e + 1)));
    }
    CHECK(chain.edge_attr.size() == 0);
    CHECK(chain.edge_weight.empty());
    CHECK(chain.node_features == h);

    const auto t = texts(n);
    const auto rel = build_relational_graph(h, t, nli);
    REQUIRE(rel.edges.size() == n * (n - 1) / 2);
    CHECK(rel.edge_attr.rows() == static_cast<Eigen::Index>(rel.edges.size()));
    CHECK(rel.edge_weight.empty());
    std::size_t e = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) CHECK(rel.edges[e++] == std::pair<int, int>(int(i), int(j)));

    std::vector<std::vector<double>> lp(n);
    for (auto& v : lp) v = {-rng.uniform(), -rng.uniform()};
    const auto cd = build_confidence_graph(h, lp, Distance::kWasserstein);
    CHECK(cd.edges == rel.edges);
    CHECK(cd.edge_weight.size() == cd.edges.size());
    CHECK(cd.edge_attr.size() == 0);
  }
  CHECK_THROWS_AS(build_chain_graph(nn::Matrix(0, 4)), InvalidInput);
}

TEST_CASE("relational edge features") {
  Rng rng(2);
  const HashNliScorer nli;
  auto h = random_hidden(rng, 4, 5);
  h.row(3) = h.row(0);
  const auto t = texts(4);
  const auto g = build_relational_graph(h, t, nli);
  REQUIRE(g.edge_attr.cols() == 5);
  for (Eigen::Index e = 0; e < g.edge_attr.rows(); ++e) {
    CHECK(std::abs(g.edge_attr(e, 0) + g.edge_attr(e, 1) + g.edge_attr(e, 2) - 1.0) <= 1e-6);
    CHECK(g.edge_attr(e, 3) >= 0.0);
    CHECK(g.edge_attr(e, 3) <= 1.0);
  }
  CHECK(g.edge_attr(0, 3) == doctest::Approx(2.0 / 3.0));
  // Edge (0, 3) is the third edge; its endpoints share a hidden state.
  CHECK(g.edge_attr(2, 4) == doctest::Approx(1.0));
  CHECK(proximity(0, 0, 1) == 1.0);
  CHECK(cosine_similarity(nn::RowVector::Zero(3), nn::RowVector::Ones(3)) == 0.0);

  // The stub is deterministic and order-sensitive.
  CHECK(nli.score("a", "b") == nli.score("a", "b"));
  CHECK(nli.score("a", "b") != nli.score("b", "a"));
  for (int i = 0; i < 200; ++i) {
    const auto p = nli.score("p" + std::to_string(i), "h");
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= 1e-6);
    for (double v : p) CHECK(v >= 0.0);
  }
}

TEST_CASE("relational graph names the failing pair") {
  Rng rng(3);
  const auto h = random_hidden(rng, 3, 2);
  const auto t = texts(3);
  try {
    build_relational_graph(h, t, FailingNli{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("(1, 2)") != std::string::npos);
  }
}

TEST_CASE("distributional distances") {
  const std::vector<double> a = {-1.0}, b = {-3.0};
  CHECK(wasserstein_1d(a, b) == doctest::Approx(2.0).epsilon(1e-12));
  const std::vector<double> x = {-0.5, -1.5, -0.1, -2.0};
  CHECK(wasserstein_1d(x, x) == 0.0);
  CHECK(kl_histogram(x, x) <= 1e-9);
  CHECK(chunk_distance(x, x, Distance::kKl) <= 1e-9);
  CHECK(chunk_distance(x, x, Distance::kWasserstein) == 0.0);
  // Unequal sample sizes: quantile coupling of {0, 1} with {0, 0, 1, 1} is exact.
  const std::vector<double> u = {0.0, 1.0}, v = {0.0, 0.0, 1.0, 1.0};
  CHECK(wasserstein_1d(u, v) == doctest::Approx(0.0).epsilon(1e-12));
  // A shift by c moves every quantile by c.
  const std::vector<double> y = {0.5, -0.5, 0.9, -1.0};
  CHECK(wasserstein_1d(x, y) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kl_histogram(x, y) > 0.1);
  CHECK_THROWS_AS(wasserstein_1d(std::vector<double>{}, a), InvalidInput);

  // Identical per-chunk distributions give zero weights for both distances.
  std::vector<std::vector<double>> same(4, std::vector<double>{-0.2, -0.7, -1.1});
  for (Distance d : {Distance::kWasserstein, Distance::kKl}) {
    const auto w = confidence_edges(same, d);
    CHECK(w.edges.size() == 6);
    for (double wt : w.weight) CHECK(std::abs(wt) <= 1e-9);
  }
  std::vector<std::vector<double>> with_empty = {{-1.0}, {}};
  CHECK_THROWS(confidence_edges(with_empty, Distance::kWasserstein));
  CHECK(distance_from_string("kl") == Distance::kKl);
  CHECK_THROWS_AS(distance_from_string("l2"), ConfigError);
}

TEST_CASE("kl histogram matches a direct computation") {
  // Both samples span [0, 1]; with 2 bins a = {0, 0, 1} and b = {0, 1, 1}.
  const std::vector<double> a = {0.0, 0.0, 1.0}, b = {0.0, 1.0, 1.0};
  const double eps = 1e-6;
  const double pa0 = (2.0 / 3 + eps) / (1 + 2 * eps), pa1 = (1.0 / 3 + eps) / (1 + 2 * eps);
  const double pb0 = pa1, pb1 = pa0;
  const double expect = pa0 * std::log(pa0 / pb0) + pa1 * std::log(pa1 / pb1);
  CHECK(kl_histogram(a, b, 2, eps) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("graph cache round trip") {
  Rng rng(4);
  const HashNliScorer nli;
  std::vector<CachedGraph> graphs;
  for (std::size_t n : {1u, 3u, 5u}) {
    const auto h = random_hidden(rng, n, 3);
    auto g = build_relational_graph(h, texts(n), nli);
    g.node_features = nn::Matrix(static_cast<Eigen::Index>(n), 0);
    graphs.push_back({"r" + std::to_string(n), "m", g});
    std::vector<std::vector<double>> lp(n, std::vector<double>{-rng.uniform()});
    auto c = build_confidence_graph(h, lp, Distance::kKl);
    c.node_features = nn::Matrix(static_cast<Eigen::Index>(n), 0);
    graphs.push_back({"c" + std::to_string(n), "m", c});
  }
  TempDir dir;
  write_graph_cache(dir / "cache", graphs);
  const auto back = read_graph_cache(dir / "cache");
  REQUIRE(back.size() == graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    CHECK(back[i].record_id == graphs[i].record_id);
    CHECK(back[i].graph.kind == graphs[i].graph.kind);
    CHECK(back[i].graph.edges == graphs[i].graph.edges);
    CHECK(back[i].graph.edge_attr == graphs[i].graph.edge_attr);
    CHECK(back[i].graph.edge_weight == graphs[i].graph.edge_weight);
  }
}

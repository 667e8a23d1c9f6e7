#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tracecal/nn/autograd.hpp"

namespace tracecal {

enum class GraphKind { kChain, kRelational, kConfidence };
std::string to_string(GraphKind kind);

// Directed graph over the chunks of one trace. Edges are (source, target).
struct TraceGraph {
  GraphKind kind = GraphKind::kChain;
  nn::Matrix node_features;                // n x d
  std::vector<std::pair<int, int>> edges;  // m
  nn::Matrix edge_attr;                    // m x 5 for relational graphs, else empty
  std::vector<double> edge_weight;         // m for confidence graphs, else empty

  std::size_t num_nodes() const { return static_cast<std::size_t>(node_features.rows()); }
};

// Relational edge attribute layout.
struct EdgeFeatures5 {
  double entail = 0, contradict = 0, neutral = 0, proximity = 0, cosine = 0;
  std::array<double, 5> as_array() const { return {entail, contradict, neutral, proximity, cosine}; }
};

// Maps an ordered text pair to (entail, contradict, neutral) probabilities.
class NliScorer {
 public:
  virtual ~NliScorer() = default;
  virtual std::string name() const = 0;
  virtual std::array<double, 3> score(std::string_view premise, std::string_view hypothesis) const = 0;
};

// Deterministic stand-in: a point on the simplex derived from a hash of the
// pair.
class HashNliScorer final : public NliScorer {
 public:
  std::string name() const override { return "hash-nli"; }
  std::array<double, 3> score(std::string_view premise, std::string_view hypothesis) const override;
};

// Edges (i, i+1).
std::vector<std::pair<int, int>> chain_edges(std::size_t n);
// Edges (i, j) for all i < j, ordered by i then j.
std::vector<std::pair<int, int>> forward_edges(std::size_t n);

// 1 - (j - i) / max(n - 1, 1).
double proximity(std::size_t i, std::size_t j, std::size_t n);
// Cosine similarity; 0 when either vector is zero.
double cosine_similarity(const nn::RowVector& a, const nn::RowVector& b);

TraceGraph build_chain_graph(const nn::Matrix& chunk_hidden);

TraceGraph build_relational_graph(const nn::Matrix& chunk_hidden,
                                  std::span<const std::string> chunk_texts,
                                  const NliScorer& nli);

enum class Distance { kWasserstein, kKl };
Distance distance_from_string(const std::string& s);
std::string to_string(Distance d);

// 1-D Wasserstein-1 distance between two empirical samples.
double wasserstein_1d(std::span<const double> a, std::span<const double> b);
// KL(a || b) between histograms over a shared support of `bins` equal-width
// bins spanning both samples, after adding `eps` to every bin probability.
double kl_histogram(std::span<const double> a, std::span<const double> b, std::size_t bins = 32,
                    double eps = 1e-6);
double chunk_distance(std::span<const double> a, std::span<const double> b, Distance d);

// Forward edges weighted by the distance between the chunks' token
// log-probability samples.
struct WeightedEdges {
  std::vector<std::pair<int, int>> edges;
  std::vector<double> weight;
};
WeightedEdges confidence_edges(std::span<const std::vector<double>> token_logprobs, Distance d);

// Confidence graph with the given node features (probe confidence and
// penultimate activations, concatenated per chunk).
TraceGraph build_confidence_graph(const nn::Matrix& node_features,
                                  std::span<const std::vector<double>> token_logprobs, Distance d);

// Graph cache: edge structure of many traces in one array store.
struct CachedGraph {
  std::string record_id;
  std::string model_id;
  TraceGraph graph;  // node_features left empty
};
void write_graph_cache(const std::filesystem::path& dir, std::span<const CachedGraph> graphs);
std::vector<CachedGraph> read_graph_cache(const std::filesystem::path& dir);

}  // namespace tracecal

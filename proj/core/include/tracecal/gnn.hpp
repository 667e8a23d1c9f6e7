#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "tracecal/estimator.hpp"
#include "tracecal/graph.hpp"
#include "tracecal/probes.hpp"

namespace tracecal {

// Per-forward view of a graph shared by all message-passing layers.
struct GraphContext {
  Eigen::Index n = 0;
  std::vector<int> src, dst;
  nn::Var edge_attr;                 // m x 5 constant, or undefined
  std::vector<double> edge_weight;   // m, or empty (weight 1)
  nn::Var raw;                       // skip input for the dual GCN2 variant

  static GraphContext from(const TraceGraph& g);
  // Dense symmetric-normalized propagation matrix P[t, s] for messages
  // s -> t, degrees taken at the target; optional unit self-loops.
  nn::Matrix normalized_adjacency(bool self_loops) const;
};

// Family names: gcn, gat, graphsage (chain); gine, nnconv, transformer
// (relational, edge attributes); gcn2, appnp, tagconv (confidence, edge
// weights).
bool family_uses_edge_attr(const std::string& family);
bool family_uses_edge_weight(const std::string& family);
GraphKind graph_kind_for_family(const std::string& family);

class GnnBackbone {
 public:
  virtual ~GnnBackbone() = default;
  virtual nn::Var embed(const nn::Var& x, const GraphContext& g, bool training, Rng& rng) const = 0;
  virtual Eigen::Index out_dim() const = 0;
};

// `dual` applies to gcn2 only and sets the width of the raw skip input.
std::unique_ptr<GnnBackbone> make_backbone(const std::string& family, const nlohmann::json& hp,
                                           Eigen::Index in_dim, Eigen::Index raw_dim,
                                           nn::ParameterList& params, Rng& rng);
// Parameter count of the backbone alone; sets *out_dim.
std::size_t backbone_count(const std::string& family, const nlohmann::json& hp, std::size_t in_dim,
                           std::size_t raw_dim, std::size_t* out_dim);

// Graph readout: mean, max, sum, attention (one learned query) or
// last_node.
class GraphPooling {
 public:
  GraphPooling() = default;
  GraphPooling(const std::string& kind, Eigen::Index dim, nn::ParameterList& params, Rng& rng);
  nn::Var operator()(const nn::Var& h) const;
  static std::size_t count(const std::string& kind, std::size_t dim);

 private:
  std::string kind_ = "mean";
  nn::Var query_;
};

// GNN-SB / GNN-SR / GNN-CD estimator.
class GnnEstimator final : public NeuralEstimator {
 public:
  GnnEstimator(nlohmann::json config, const Services& services);
  std::string method() const override { return config_.at("method").get<std::string>(); }
  nlohmann::json config() const override { return config_; }
  const nn::ParameterList& trainable() const override { return trainable_; }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  // Scores an explicit graph (node features already in place).
  nn::Var forward_graph(const TraceGraph& g, const nn::Var& raw, bool training, Rng& rng) const;
  double score_graph(const TraceGraph& g) const;

  const std::string& family() const { return family_; }
  GraphKind graph_kind() const { return kind_; }
  const EmbeddedProbe* probe() const { return has_probe_ ? &probe_ : nullptr; }
  EmbeddedProbe* mutable_probe() { return has_probe_ ? &probe_ : nullptr; }

  // Builds the trace's graph (cached per trace for edge structure).
  TraceGraph graph_for(const TraceExample& ex) const;

  static std::size_t count_parameters(const nlohmann::json& config);

 private:
  nlohmann::json config_;
  std::string family_;
  GraphKind kind_ = GraphKind::kChain;
  std::shared_ptr<const NliScorer> nli_;
  Distance distance_ = Distance::kWasserstein;
  bool dual_ = false;
  bool has_probe_ = false;
  EmbeddedProbe probe_;
  nn::ParameterList trainable_;
  std::unique_ptr<GnnBackbone> backbone_;
  GraphPooling pool_;
  nn::Mlp head_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const TraceGraph>> cache_;
};

}  // namespace tracecal

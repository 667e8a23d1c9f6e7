#include "tracecal/gnn.hpp"

#include <cmath>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;
using nn::Matrix;
using nn::Var;

GraphContext GraphContext::from(const TraceGraph& g) {
  GraphContext c;
  c.n = static_cast<Eigen::Index>(g.num_nodes());
  for (const auto& [s, t] : g.edges) {
    if (s < 0 || t < 0 || s >= c.n || t >= c.n) throw GraphError("edge endpoint out of range");
    c.src.push_back(s);
    c.dst.push_back(t);
  }
  if (g.edge_attr.size() > 0) {
    if (g.edge_attr.rows() != static_cast<Eigen::Index>(g.edges.size())) {
      throw GraphError("edge_attr rows != edge count");
    }
    c.edge_attr = nn::constant(g.edge_attr);
  }
  if (!g.edge_weight.empty()) {
    if (g.edge_weight.size() != g.edges.size()) throw GraphError("edge_weight length != edge count");
    c.edge_weight = g.edge_weight;
  }
  return c;
}

Matrix GraphContext::normalized_adjacency(bool self_loops) const {
  std::vector<double> deg(static_cast<std::size_t>(n), self_loops ? 1.0 : 0.0);
  auto w = [&](std::size_t e) { return edge_weight.empty() ? 1.0 : edge_weight[e]; };
  for (std::size_t e = 0; e < dst.size(); ++e) deg[static_cast<std::size_t>(dst[e])] += w(e);
  std::vector<double> dinv(deg.size());
  for (std::size_t i = 0; i < deg.size(); ++i) dinv[i] = deg[i] > 0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
  Matrix P = Matrix::Zero(n, n);
  for (std::size_t e = 0; e < dst.size(); ++e) {
    const auto s = static_cast<std::size_t>(src[e]), t = static_cast<std::size_t>(dst[e]);
    P(dst[e], src[e]) += dinv[s] * w(e) * dinv[t];
  }
  if (self_loops) {
    for (Eigen::Index i = 0; i < n; ++i) P(i, i) += dinv[static_cast<std::size_t>(i)] * dinv[static_cast<std::size_t>(i)];
  }
  return P;
}

bool family_uses_edge_attr(const std::string& f) {
  return f == "gine" || f == "nnconv" || f == "transformer";
}
bool family_uses_edge_weight(const std::string& f) {
  return f == "gcn2" || f == "appnp" || f == "tagconv";
}

GraphKind graph_kind_for_family(const std::string& f) {
  if (f == "gcn" || f == "gat" || f == "graphsage") return GraphKind::kChain;
  if (family_uses_edge_attr(f)) return GraphKind::kRelational;
  if (family_uses_edge_weight(f)) return GraphKind::kConfidence;
  throw ConfigError("unknown GNN family '" + f + "'");
}

namespace {

constexpr Eigen::Index kEdgeDim = 5;

int num_layers(const json& hp) {
  const int L = hp_int(hp, "num_layers");
  if (L < 1) throw ConfigError("num_layers must be at least 1");
  return L;
}

int hidden_of(const json& hp) {
  const int h = hp_int(hp, "hidden_dim");
  if (h < 1) throw ConfigError("hidden_dim must be positive");
  return h;
}

Var inv_degree_col(const GraphContext& g) {
  Matrix d = Matrix::Zero(g.n, 1);
  for (int t : g.dst) d(t, 0) += 1.0;
  for (Eigen::Index i = 0; i < g.n; ++i) d(i, 0) = d(i, 0) > 0 ? 1.0 / d(i, 0) : 0.0;
  return nn::constant(std::move(d));
}

// Mean of per-edge messages at each target; zero for isolated targets.
Var mean_aggregate(const Var& msg, const GraphContext& g) {
  return nn::mul_col(nn::scatter_add_rows(msg, g.dst, g.n), inv_degree_col(g));
}

Var combine_heads(const std::vector<Var>& heads, bool concat) {
  if (concat) return nn::concat_cols(heads);
  Var acc = heads[0];
  for (std::size_t k = 1; k < heads.size(); ++k) acc = nn::add(acc, heads[k]);
  return nn::scale(acc, 1.0 / static_cast<double>(heads.size()));
}

class GcnBackbone final : public GnnBackbone {
 public:
  GcnBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng) {
    const int h = hidden_of(hp);
    for (int l = 0; l < num_layers(hp); ++l) {
      layers_.emplace_back(l == 0 ? in : h, h, p, rng);
    }
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    std::size_t total = 0;
    for (int l = 0; l < num_layers(hp); ++l) total += nn::Linear::count(l == 0 ? in : h, h);
    *out = h;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    const Var P = nn::constant(g.normalized_adjacency(true));
    Var h = x;
    for (const auto& lin : layers_) {
      // (P h) W + b, with the bias added after propagation.
      h = nn::relu(lin(nn::matmul(P, h)));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  std::vector<nn::Linear> layers_;
  Eigen::Index out_ = 0;
};

class GatBackbone final : public GnnBackbone {
 public:
  GatBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng)
      : heads_(hp_int(hp, "heads")), concat_(hp_bool(hp, "concat")), c_(hidden_of(hp)) {
    if (heads_ < 1) throw ConfigError("heads must be positive");
    Eigen::Index d = in;
    for (int l = 0; l < num_layers(hp); ++l) {
      Layer layer;
      layer.lin = nn::Linear(d, heads_ * c_, p, rng, false);
      const double bound = 1.0 / std::sqrt(static_cast<double>(c_));
      for (int k = 0; k < heads_; ++k) {
        layer.att_src.push_back(p.add_uniform(c_, 1, bound, rng));
        layer.att_dst.push_back(p.add_uniform(c_, 1, bound, rng));
      }
      d = concat_ ? heads_ * c_ : c_;
      layer.bias = p.add_zeros(1, d);
      layers_.push_back(std::move(layer));
    }
    out_ = d;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto H = static_cast<std::size_t>(hp_int(hp, "heads"));
    const auto C = static_cast<std::size_t>(hidden_of(hp));
    const bool concat = hp_bool(hp, "concat");
    std::size_t d = in, total = 0;
    for (int l = 0; l < num_layers(hp); ++l) {
      const std::size_t o = concat ? H * C : C;
      total += d * H * C + 2 * H * C + o;
      d = o;
    }
    *out = d;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    std::vector<int> src = g.src, dst = g.dst;
    for (int i = 0; i < g.n; ++i) {
      src.push_back(i);
      dst.push_back(i);
    }
    Var h = x;
    for (const auto& layer : layers_) {
      const Var wh = layer.lin(h);
      std::vector<Var> outs;
      for (int k = 0; k < heads_; ++k) {
        const Var whk = nn::slice_cols(wh, k * c_, c_);
        const Var s_src = nn::matmul(whk, layer.att_src[static_cast<std::size_t>(k)]);
        const Var s_dst = nn::matmul(whk, layer.att_dst[static_cast<std::size_t>(k)]);
        const Var e = nn::leaky_relu(nn::add(nn::gather_rows(s_src, src), nn::gather_rows(s_dst, dst)), 0.2);
        const Var alpha = nn::segment_softmax(e, dst, g.n);
        outs.push_back(nn::scatter_add_rows(nn::mul_col(nn::gather_rows(whk, src), alpha), dst, g.n));
      }
      h = nn::relu(nn::add_row(combine_heads(outs, concat_), layer.bias));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  struct Layer {
    nn::Linear lin;
    std::vector<Var> att_src, att_dst;
    Var bias;
  };
  int heads_;
  bool concat_;
  Eigen::Index c_;
  std::vector<Layer> layers_;
  Eigen::Index out_ = 0;
};

class SageBackbone final : public GnnBackbone {
 public:
  SageBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng)
      : aggr_(hp_string(hp, "aggr")) {
    if (aggr_ != "mean" && aggr_ != "max" && aggr_ != "add") throw ConfigError("aggr must be mean, max or add");
    const int h = hidden_of(hp);
    for (int l = 0; l < num_layers(hp); ++l) {
      const Eigen::Index d = l == 0 ? in : h;
      neigh_.emplace_back(d, h, p, rng, true);
      self_.emplace_back(d, h, p, rng, false);
    }
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    std::size_t total = 0;
    for (int l = 0; l < num_layers(hp); ++l) {
      const std::size_t d = l == 0 ? in : h;
      total += nn::Linear::count(d, h, true) + nn::Linear::count(d, h, false);
    }
    *out = h;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    Var h = x;
    for (std::size_t l = 0; l < neigh_.size(); ++l) {
      const Var msg = nn::gather_rows(h, g.src);
      Var agg;
      if (aggr_ == "mean") agg = mean_aggregate(msg, g);
      else if (aggr_ == "max") agg = nn::segment_max(msg, g.dst, g.n);
      else agg = nn::scatter_add_rows(msg, g.dst, g.n);
      h = nn::relu(nn::add(neigh_[l](agg), self_[l](h)));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  std::string aggr_;
  std::vector<nn::Linear> neigh_, self_;
  Eigen::Index out_ = 0;
};

std::vector<int> edge_nn_widths(const json& hp) {
  const std::string kind = hp.contains("edge_nn") ? hp_string(hp, "edge_nn") : "linear";
  if (kind == "linear") return {0};
  if (kind == "mlp_small") return {16};
  if (kind == "mlp_medium") return {64};
  throw ConfigError("edge_nn must be linear, mlp_small or mlp_medium");
}

class GineBackbone final : public GnnBackbone {
 public:
  GineBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng) {
    const int h = hidden_of(hp);
    const auto widths = edge_nn_widths(hp);
    for (int l = 0; l < num_layers(hp); ++l) {
      const Eigen::Index d = l == 0 ? in : h;
      Layer layer;
      layer.edge = nn::Mlp(kEdgeDim, widths, d, 0.0, p, rng);
      layer.lin1 = nn::Linear(d, h, p, rng);
      layer.lin2 = nn::Linear(h, h, p, rng);
      layers_.push_back(std::move(layer));
    }
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    const auto widths = edge_nn_widths(hp);
    std::size_t total = 0;
    for (int l = 0; l < num_layers(hp); ++l) {
      const std::size_t d = l == 0 ? in : h;
      total += nn::Mlp::count(kEdgeDim, widths, d) + nn::Linear::count(d, h) + nn::Linear::count(h, h);
    }
    *out = h;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool training, Rng& rng) const override {
    if (!g.edge_attr.defined() && !g.src.empty()) throw ConfigError("gine needs edge attributes");
    Var h = x;
    for (const auto& layer : layers_) {
      Var z = h;
      if (!g.src.empty()) {
        const Var e = layer.edge(g.edge_attr, training, rng);
        const Var msg = nn::relu(nn::add(nn::gather_rows(h, g.src), e));
        z = nn::add(h, nn::scatter_add_rows(msg, g.dst, g.n));
      }
      h = nn::relu(layer.lin2(nn::relu(layer.lin1(z))));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  struct Layer {
    nn::Mlp edge;
    nn::Linear lin1, lin2;
  };
  std::vector<Layer> layers_;
  Eigen::Index out_ = 0;
};

class NnConvBackbone final : public GnnBackbone {
 public:
  NnConvBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng) {
    if (hp.contains("edge_nn") && hp_string(hp, "edge_nn") != "linear") {
      throw ConfigError("nnconv supports edge_nn linear only");
    }
    const int h = hidden_of(hp);
    for (int l = 0; l < num_layers(hp); ++l) {
      const Eigen::Index d = l == 0 ? in : h;
      Layer layer;
      layer.in = d;
      layer.kernel = nn::Linear(kEdgeDim, d * h, p, rng);
      layer.root = nn::Linear(d, h, p, rng);
      layers_.push_back(std::move(layer));
    }
    h_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    std::size_t total = 0;
    for (int l = 0; l < num_layers(hp); ++l) {
      const std::size_t d = l == 0 ? in : h;
      total += nn::Linear::count(kEdgeDim, d * h) + nn::Linear::count(d, h);
    }
    *out = h;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    if (!g.edge_attr.defined() && !g.src.empty()) throw ConfigError("nnconv needs edge attributes");
    Var h = x;
    for (const auto& layer : layers_) {
      Var out = layer.root(h);
      if (!g.src.empty()) {
        const Var theta = layer.kernel(g.edge_attr);
        const Var msg = nn::rowwise_matvec(nn::gather_rows(h, g.src), theta, h_);
        out = nn::add(out, mean_aggregate(msg, g));
      }
      h = nn::relu(out);
    }
    return h;
  }
  Eigen::Index out_dim() const override { return h_; }

 private:
  struct Layer {
    Eigen::Index in = 0;
    nn::Linear kernel, root;
  };
  std::vector<Layer> layers_;
  Eigen::Index h_ = 0;
};

class TransformerBackbone final : public GnnBackbone {
 public:
  TransformerBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng)
      : heads_(hp_int(hp, "heads")), concat_(hp_bool(hp, "concat")), c_(hidden_of(hp)) {
    if (heads_ < 1) throw ConfigError("heads must be positive");
    Eigen::Index d = in;
    for (int l = 0; l < num_layers(hp); ++l) {
      Layer layer;
      layer.q = nn::Linear(d, heads_ * c_, p, rng);
      layer.k = nn::Linear(d, heads_ * c_, p, rng);
      layer.v = nn::Linear(d, heads_ * c_, p, rng);
      layer.e = nn::Linear(kEdgeDim, heads_ * c_, p, rng, false);
      const Eigen::Index o = concat_ ? heads_ * c_ : c_;
      layer.skip = nn::Linear(d, o, p, rng);
      layers_.push_back(std::move(layer));
      d = o;
    }
    out_ = d;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto H = static_cast<std::size_t>(hp_int(hp, "heads"));
    const auto C = static_cast<std::size_t>(hidden_of(hp));
    const bool concat = hp_bool(hp, "concat");
    std::size_t d = in, total = 0;
    for (int l = 0; l < num_layers(hp); ++l) {
      const std::size_t o = concat ? H * C : C;
      total += 3 * nn::Linear::count(d, H * C) + nn::Linear::count(kEdgeDim, H * C, false) +
               nn::Linear::count(d, o);
      d = o;
    }
    *out = d;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    if (!g.edge_attr.defined() && !g.src.empty()) throw ConfigError("transformer needs edge attributes");
    Var h = x;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c_));
    for (const auto& layer : layers_) {
      Var out = layer.skip(h);
      if (!g.src.empty()) {
        const Var ee = layer.e(g.edge_attr);
        const Var q = nn::gather_rows(layer.q(h), g.dst);
        const Var k = nn::add(nn::gather_rows(layer.k(h), g.src), ee);
        const Var v = nn::add(nn::gather_rows(layer.v(h), g.src), ee);
        std::vector<Var> outs;
        for (int a = 0; a < heads_; ++a) {
          const Var qa = nn::slice_cols(q, a * c_, c_);
          const Var ka = nn::slice_cols(k, a * c_, c_);
          const Var va = nn::slice_cols(v, a * c_, c_);
          const Var alpha = nn::segment_softmax(nn::scale(nn::sum_cols(nn::mul(qa, ka)), inv_sqrt), g.dst, g.n);
          outs.push_back(nn::scatter_add_rows(nn::mul_col(va, alpha), g.dst, g.n));
        }
        out = nn::add(out, combine_heads(outs, concat_));
      }
      h = nn::relu(out);
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  struct Layer {
    nn::Linear q, k, v, e, skip;
  };
  int heads_;
  bool concat_;
  Eigen::Index c_;
  std::vector<Layer> layers_;
  Eigen::Index out_ = 0;
};

class Gcn2Backbone final : public GnnBackbone {
 public:
  Gcn2Backbone(const json& hp, Eigen::Index in, Eigen::Index raw, nn::ParameterList& p, Rng& rng)
      : alpha_(hp_double(hp, "alpha")), theta_(hp_double(hp, "theta")), dual_(raw > 0) {
    const int h = hidden_of(hp);
    input_ = nn::Linear(in + raw, h, p, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (int l = 0; l < num_layers(hp); ++l) weights_.push_back(p.add_uniform(h, h, bound, rng));
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t raw, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    *out = h;
    return nn::Linear::count(in + raw, h) + static_cast<std::size_t>(num_layers(hp)) * h * h;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    Var input = x;
    if (dual_) {
      if (!g.raw.defined()) throw ConfigError("gcn2 dual variant needs the raw hidden states");
      const std::array<Var, 2> parts{x, g.raw};
      input = nn::concat_cols(parts);
    }
    const Var h0 = nn::relu(input_(input));
    const Var P = nn::constant(g.normalized_adjacency(true));
    Var h = h0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const double beta = std::log(theta_ / static_cast<double>(l + 1) + 1.0);
      const Var s = nn::add(nn::scale(nn::matmul(P, h), 1.0 - alpha_), nn::scale(h0, alpha_));
      h = nn::relu(nn::add(nn::scale(s, 1.0 - beta), nn::scale(nn::matmul(s, weights_[l]), beta)));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  double alpha_, theta_;
  bool dual_;
  nn::Linear input_;
  std::vector<Var> weights_;
  Eigen::Index out_ = 0;
};

class AppnpBackbone final : public GnnBackbone {
 public:
  AppnpBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng)
      : k_(hp_int(hp, "K")), alpha_(hp_double(hp, "appnp_alpha")) {
    if (k_ < 1) throw ConfigError("K must be positive");
    const int h = hidden_of(hp);
    for (int l = 0; l < num_layers(hp); ++l) layers_.emplace_back(l == 0 ? in : h, h, p, rng);
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    return GcnBackbone::count(hp, in, out);
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    const Var P = nn::constant(g.normalized_adjacency(true));
    Var h = x;
    for (const auto& lin : layers_) {
      const Var local = nn::relu(lin(h));
      Var z = local;
      for (int k = 0; k < k_; ++k) {
        z = nn::add(nn::scale(nn::matmul(P, z), 1.0 - alpha_), nn::scale(local, alpha_));
      }
      h = z;
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  int k_;
  double alpha_;
  std::vector<nn::Linear> layers_;
  Eigen::Index out_ = 0;
};

class TagBackbone final : public GnnBackbone {
 public:
  TagBackbone(const json& hp, Eigen::Index in, nn::ParameterList& p, Rng& rng) : k_(hp_int(hp, "K")) {
    if (k_ < 1) throw ConfigError("K must be positive");
    const int h = hidden_of(hp);
    for (int l = 0; l < num_layers(hp); ++l) {
      Layer layer;
      for (int k = 0; k <= k_; ++k) layer.hops.emplace_back(l == 0 ? in : h, h, p, rng, false);
      layer.bias = p.add_zeros(1, h);
      layers_.push_back(std::move(layer));
    }
    out_ = h;
  }
  static std::size_t count(const json& hp, std::size_t in, std::size_t* out) {
    const auto h = static_cast<std::size_t>(hidden_of(hp));
    const auto K = static_cast<std::size_t>(hp_int(hp, "K"));
    std::size_t total = 0;
    for (int l = 0; l < num_layers(hp); ++l) total += (K + 1) * (l == 0 ? in : h) * h + h;
    *out = h;
    return total;
  }
  Var embed(const Var& x, const GraphContext& g, bool, Rng&) const override {
    const Var P = nn::constant(g.normalized_adjacency(false));
    Var h = x;
    for (const auto& layer : layers_) {
      Var power = h;
      Var out = layer.hops[0](power);
      for (std::size_t k = 1; k < layer.hops.size(); ++k) {
        power = nn::matmul(P, power);
        out = nn::add(out, layer.hops[k](power));
      }
      h = nn::relu(nn::add_row(out, layer.bias));
    }
    return h;
  }
  Eigen::Index out_dim() const override { return out_; }

 private:
  struct Layer {
    std::vector<nn::Linear> hops;
    Var bias;
  };
  int k_;
  std::vector<Layer> layers_;
  Eigen::Index out_ = 0;
};

}  // namespace

std::unique_ptr<GnnBackbone> make_backbone(const std::string& family, const json& hp, Eigen::Index in,
                                           Eigen::Index raw, nn::ParameterList& p, Rng& rng) {
  if (family == "gcn") return std::make_unique<GcnBackbone>(hp, in, p, rng);
  if (family == "gat") return std::make_unique<GatBackbone>(hp, in, p, rng);
  if (family == "graphsage") return std::make_unique<SageBackbone>(hp, in, p, rng);
  if (family == "gine") return std::make_unique<GineBackbone>(hp, in, p, rng);
  if (family == "nnconv") return std::make_unique<NnConvBackbone>(hp, in, p, rng);
  if (family == "transformer") return std::make_unique<TransformerBackbone>(hp, in, p, rng);
  if (family == "gcn2") return std::make_unique<Gcn2Backbone>(hp, in, raw, p, rng);
  if (family == "appnp") return std::make_unique<AppnpBackbone>(hp, in, p, rng);
  if (family == "tagconv") return std::make_unique<TagBackbone>(hp, in, p, rng);
  throw ConfigError("unknown GNN family '" + family + "'");
}

std::size_t backbone_count(const std::string& family, const json& hp, std::size_t in, std::size_t raw,
                           std::size_t* out) {
  if (family == "gcn") return GcnBackbone::count(hp, in, out);
  if (family == "gat") return GatBackbone::count(hp, in, out);
  if (family == "graphsage") return SageBackbone::count(hp, in, out);
  if (family == "gine") return GineBackbone::count(hp, in, out);
  if (family == "nnconv") return NnConvBackbone::count(hp, in, out);
  if (family == "transformer") return TransformerBackbone::count(hp, in, out);
  if (family == "gcn2") return Gcn2Backbone::count(hp, in, raw, out);
  if (family == "appnp") return AppnpBackbone::count(hp, in, out);
  if (family == "tagconv") return TagBackbone::count(hp, in, out);
  throw ConfigError("unknown GNN family '" + family + "'");
}

GraphPooling::GraphPooling(const std::string& kind, Eigen::Index dim, nn::ParameterList& p, Rng& rng)
    : kind_(kind) {
  if (kind == "attention") {
    query_ = p.add_uniform(dim, 1, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  } else if (kind != "mean" && kind != "max" && kind != "sum" && kind != "last_node") {
    throw ConfigError("unknown pooling '" + kind + "'");
  }
}

std::size_t GraphPooling::count(const std::string& kind, std::size_t dim) {
  return kind == "attention" ? dim : 0;
}

Var GraphPooling::operator()(const Var& h) const {
  if (kind_ == "mean") return nn::mean_rows(h);
  if (kind_ == "max") return nn::max_rows(h);
  if (kind_ == "sum") return nn::sum_rows(h);
  if (kind_ == "last_node") return nn::slice_rows(h, h.rows() - 1, 1);
  const std::vector<int> segment(static_cast<std::size_t>(h.rows()), 0);
  const Var w = nn::segment_softmax(nn::matmul(h, query_), segment, 1);
  return nn::sum_rows(nn::mul_col(h, w));
}

namespace {

std::size_t positive_dim(const json& config, const char* key) {
  if (!config.contains(key) || !config[key].is_number_integer() || config[key].get<long>() <= 0) {
    throw ConfigError(std::string("estimator config needs positive '") + key + "'");
  }
  return config[key].get<std::size_t>();
}

}  // namespace

GnnEstimator::GnnEstimator(json config, const Services& services) : config_(std::move(config)) {
  Rng rng(config_.value("seed", std::uint64_t{0}));
  const json& hp = config_.at("hp");
  family_ = config_.at("family").get<std::string>();
  kind_ = graph_kind_for_family(family_);
  const std::size_t D = positive_dim(config_, "input_dim");
  std::size_t in = D, raw = 0;
  if (kind_ == GraphKind::kRelational) {
    nli_ = services.nli;
    if (!nli_) throw ConfigError("relational graphs need an NLI scorer");
  }
  if (kind_ == GraphKind::kConfidence) {
    distance_ = distance_from_string(config_.value("distance", std::string("wasserstein")));
    dual_ = config_.value("dual", false);
    if (dual_ && family_ != "gcn2") throw ConfigError("the dual variant applies to gcn2 only");
    probe_ = EmbeddedProbe(config_.at("probe"), config_.value("finetune", false));
    has_probe_ = true;
    in = static_cast<std::size_t>(probe_.feature_dim());
    raw = dual_ ? D : 0;
    params_.append(probe_.parameters());
  }
  nn::ParameterList own;
  backbone_ = make_backbone(family_, hp, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(raw), own, rng);
  pool_ = GraphPooling(hp_string(hp, "pooling"), backbone_->out_dim(), own, rng);
  const double dropout = hp.contains("classifier_dropout") ? hp_double(hp, "classifier_dropout") : 0.0;
  head_ = nn::Mlp(backbone_->out_dim(), hp_widths(hp, "classifier_layers"), 1, dropout, own, rng);
  params_.append(own);
  trainable_ = has_probe_ && probe_.finetune() ? params_ : own;
}

std::size_t GnnEstimator::count_parameters(const json& config) {
  const json& hp = config.at("hp");
  const std::string family = config.at("family").get<std::string>();
  const GraphKind kind = graph_kind_for_family(family);
  const std::size_t D = positive_dim(config, "input_dim");
  std::size_t in = D, raw = 0, probe = 0;
  if (kind == GraphKind::kConfidence) {
    in = EmbeddedProbe::feature_dim(config.at("probe"));
    raw = config.value("dual", false) ? D : 0;
    if (config.value("finetune", false)) probe = EmbeddedProbe::count(config.at("probe"));
  }
  std::size_t out = 0;
  const std::size_t backbone = backbone_count(family, hp, in, raw, &out);
  return probe + backbone + GraphPooling::count(hp_string(hp, "pooling"), out) +
         nn::Mlp::count(out, hp_widths(hp, "classifier_layers"), 1);
}

namespace {

std::string cache_key(const TraceExample& ex) {
  return ex.record_id + '\x1f' + ex.model_id + '\x1f' + std::to_string(ex.num_chunks());
}

std::vector<std::vector<double>> tail_logprobs(const TraceExample& ex) {
  const std::size_t n = ex.token_logprobs.size();
  const std::size_t start = n > kMaxSequenceChunks ? n - kMaxSequenceChunks : 0;
  return {ex.token_logprobs.begin() + static_cast<long>(start), ex.token_logprobs.end()};
}

}  // namespace

TraceGraph GnnEstimator::graph_for(const TraceExample& ex) const {
  if (ex.num_chunks() == 0) throw ScoringError("trace " + ex.record_id + " has zero chunks");
  const Matrix hidden = keep_tail(ex.chunk_hidden, kMaxSequenceChunks);
  const std::string key = cache_key(ex);
  {
    std::lock_guard lock(cache_mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      TraceGraph g = *it->second;
      if (kind_ != GraphKind::kConfidence) g.node_features = hidden;
      return g;
    }
  }
  TraceGraph g;
  if (kind_ == GraphKind::kChain) {
    g = build_chain_graph(hidden);
  } else if (kind_ == GraphKind::kRelational) {
    if (ex.chunk_texts.size() != ex.num_chunks()) {
      throw GraphError("trace " + ex.record_id + ": chunk texts do not match chunk count");
    }
    const std::size_t start = ex.chunk_texts.size() - static_cast<std::size_t>(hidden.rows());
    const std::vector<std::string> texts(ex.chunk_texts.begin() + static_cast<long>(start), ex.chunk_texts.end());
    g = build_relational_graph(hidden, texts, *nli_);
  } else {
    const auto lp = tail_logprobs(ex);
    if (lp.size() != static_cast<std::size_t>(hidden.rows())) {
      throw GraphError("trace " + ex.record_id + ": token log-probs do not match chunk count");
    }
    g.kind = GraphKind::kConfidence;
    auto we = confidence_edges(lp, distance_);
    g.edges = std::move(we.edges);
    g.edge_weight = std::move(we.weight);
  }
  auto stored = std::make_shared<TraceGraph>(g);
  stored->node_features = Matrix();
  {
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(key, stored);
  }
  if (kind_ == GraphKind::kConfidence) g.node_features = Matrix();
  return g;
}

Var GnnEstimator::forward_graph(const TraceGraph& g, const Var& raw, bool training, Rng& rng) const {
  if (g.num_nodes() == 0) throw ScoringError("graph has no nodes");
  const bool has_attr = g.edge_attr.size() > 0;
  if (has_attr && !family_uses_edge_attr(family_)) {
    throw ConfigError("edge attributes supplied to the " + family_ + " family, which does not use them");
  }
  if (!g.edge_weight.empty() && !family_uses_edge_weight(family_)) {
    throw ConfigError("edge weights supplied to the " + family_ + " family, which does not use them");
  }
  if (family_uses_edge_attr(family_) && !g.edges.empty() && !has_attr) {
    throw ConfigError("the " + family_ + " family needs edge attributes");
  }
  GraphContext ctx = GraphContext::from(g);
  ctx.raw = raw;
  const Var h = backbone_->embed(nn::constant(g.node_features), ctx, training, rng);
  return head_(pool_(h), training, rng);
}

double GnnEstimator::score_graph(const TraceGraph& g) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  return 1.0 / (1.0 + std::exp(-forward_graph(g, Var(), false, unused).item()));
}

Var GnnEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  TraceGraph g = graph_for(ex);
  if (kind_ != GraphKind::kConfidence) return forward_graph(g, Var(), training, rng);
  const Matrix hidden = keep_tail(ex.chunk_hidden, kMaxSequenceChunks);
  const Var x = probe_.features(hidden, training, rng);
  GraphContext ctx = GraphContext::from([&] {
    TraceGraph shape = g;
    shape.node_features = Matrix::Zero(hidden.rows(), 1);
    return shape;
  }());
  if (dual_) ctx.raw = nn::constant(hidden);
  const Var h = backbone_->embed(x, ctx, training, rng);
  return head_(pool_(h), training, rng);
}

}  // namespace tracecal

#include "tracecal/graph.hpp"

#include <algorithm>
#include <cmath>

#include "tracecal/array_store.hpp"
#include "tracecal/error.hpp"
#include "tracecal/hash.hpp"

namespace tracecal {

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::kChain: return "chain";
    case GraphKind::kRelational: return "relational";
    case GraphKind::kConfidence: return "confidence";
  }
  return "chain";
}

std::array<double, 3> HashNliScorer::score(std::string_view premise, std::string_view hypothesis) const {
  std::string buf;
  append_length_prefixed(buf, premise);
  append_length_prefixed(buf, hypothesis);
  const std::string hex = sha256_hex(buf);
  std::array<double, 3> raw{};
  double total = 0;
  for (int k = 0; k < 3; ++k) {
    const auto v = std::stoul(hex.substr(static_cast<std::size_t>(8 * k), 8), nullptr, 16);
    raw[k] = 1.0 + static_cast<double>(v) / 4294967295.0;
    total += raw[k];
  }
  for (double& r : raw) r /= total;
  return raw;
}

std::vector<std::pair<int, int>> chain_edges(std::size_t n) {
  std::vector<std::pair<int, int>> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
  return e;
}

std::vector<std::pair<int, int>> forward_edges(std::size_t n) {
  std::vector<std::pair<int, int>> e;
  e.reserve(n * (n > 0 ? n - 1 : 0) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return e;
}

double proximity(std::size_t i, std::size_t j, std::size_t n) {
  const double span = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const double gap = j > i ? static_cast<double>(j - i) : static_cast<double>(i - j);
  return 1.0 - gap / span;
}

double cosine_similarity(const nn::RowVector& a, const nn::RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

TraceGraph build_chain_graph(const nn::Matrix& chunk_hidden) {
  if (chunk_hidden.rows() == 0) throw InvalidInput("chain graph needs at least one chunk");
  TraceGraph g;
  g.kind = GraphKind::kChain;
  g.node_features = chunk_hidden;
  g.edges = chain_edges(static_cast<std::size_t>(chunk_hidden.rows()));
  return g;
}

TraceGraph build_relational_graph(const nn::Matrix& chunk_hidden,
                                  std::span<const std::string> chunk_texts, const NliScorer& nli) {
  const auto n = static_cast<std::size_t>(chunk_hidden.rows());
  if (n == 0) throw InvalidInput("relational graph needs at least one chunk");
  if (chunk_texts.size() != n) throw InvalidInput("relational graph: text count != chunk count");
  TraceGraph g;
  g.kind = GraphKind::kRelational;
  g.node_features = chunk_hidden;
  g.edges = forward_edges(n);
  g.edge_attr.resize(static_cast<Eigen::Index>(g.edges.size()), 5);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [i, j] = g.edges[e];
    std::array<double, 3> p;
    try {
      p = nli.score(chunk_texts[static_cast<std::size_t>(i)], chunk_texts[static_cast<std::size_t>(j)]);
    } catch (const std::exception& ex) {
      throw GraphError("NLI scorer failed on pair (" + std::to_string(i) + ", " + std::to_string(j) +
                       "): " + ex.what());
    }
    const double sum = p[0] + p[1] + p[2];
    if (!(p[0] >= 0 && p[1] >= 0 && p[2] >= 0) || std::abs(sum - 1.0) > 1e-6) {
      throw GraphError("NLI scorer returned a non-simplex output on pair (" + std::to_string(i) +
                       ", " + std::to_string(j) + ")");
    }
    EdgeFeatures5 f;
    f.entail = p[0];
    f.contradict = p[1];
    f.neutral = p[2];
    f.proximity = proximity(static_cast<std::size_t>(i), static_cast<std::size_t>(j), n);
    f.cosine = cosine_similarity(chunk_hidden.row(i), chunk_hidden.row(j));
    const auto arr = f.as_array();
    for (int k = 0; k < 5; ++k) g.edge_attr(static_cast<Eigen::Index>(e), k) = arr[static_cast<std::size_t>(k)];
  }
  return g;
}

Distance distance_from_string(const std::string& s) {
  if (s == "wasserstein") return Distance::kWasserstein;
  if (s == "kl") return Distance::kKl;
  throw ConfigError("unknown distance '" + s + "' (expected wasserstein or kl)");
}

std::string to_string(Distance d) { return d == Distance::kWasserstein ? "wasserstein" : "kl"; }

double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidInput("wasserstein: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  // Integrate |F_x - F_y| over the merged support.
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(x.front(), y.front());
  double total = 0;
  while (i < x.size() || j < y.size()) {
    double next;
    if (j >= y.size() || (i < x.size() && x[i] <= y[j])) {
      next = x[i];
    } else {
      next = y[j];
    }
    total += std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny) * (next - prev);
    while (i < x.size() && x[i] == next) ++i;
    while (j < y.size() && y[j] == next) ++j;
    prev = next;
  }
  return total;
}

double kl_histogram(std::span<const double> a, std::span<const double> b, std::size_t bins, double eps) {
  if (a.empty() || b.empty()) throw InvalidInput("kl: empty sample");
  if (bins == 0) throw InvalidInput("kl: bins must be positive");
  double lo = a[0], hi = a[0];
  for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
  auto hist = [&](std::span<const double> s) {
    std::vector<double> h(bins, 0.0);
    for (double v : s) {
      std::size_t k = 0;
      if (hi > lo) {
        k = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        k = std::min(k, bins - 1);
      }
      h[k] += 1.0;
    }
    double total = 0;
    for (double& x : h) {
      x = x / static_cast<double>(s.size()) + eps;
      total += x;
    }
    for (double& x : h) x /= total;
    return h;
  };
  const auto p = hist(a), q = hist(b);
  double kl = 0;
  for (std::size_t k = 0; k < bins; ++k) kl += p[k] * std::log(p[k] / q[k]);
  return std::max(kl, 0.0);
}

double chunk_distance(std::span<const double> a, std::span<const double> b, Distance d) {
  return d == Distance::kWasserstein ? wasserstein_1d(a, b) : kl_histogram(a, b);
}

WeightedEdges confidence_edges(std::span<const std::vector<double>> token_logprobs, Distance d) {
  for (std::size_t c = 0; c < token_logprobs.size(); ++c) {
    if (token_logprobs[c].empty()) throw GraphError("chunk " + std::to_string(c) + " has zero tokens");
  }
  WeightedEdges out;
  out.edges = forward_edges(token_logprobs.size());
  out.weight.reserve(out.edges.size());
  for (const auto& [i, j] : out.edges) {
    out.weight.push_back(chunk_distance(token_logprobs[static_cast<std::size_t>(i)],
                                        token_logprobs[static_cast<std::size_t>(j)], d));
  }
  return out;
}

TraceGraph build_confidence_graph(const nn::Matrix& node_features,
                                  std::span<const std::vector<double>> token_logprobs, Distance d) {
  if (node_features.rows() == 0) throw InvalidInput("confidence graph needs at least one chunk");
  if (static_cast<std::size_t>(node_features.rows()) != token_logprobs.size()) {
    throw InvalidInput("confidence graph: log-prob lists != chunk count");
  }
  TraceGraph g;
  g.kind = GraphKind::kConfidence;
  g.node_features = node_features;
  auto we = confidence_edges(token_logprobs, d);
  g.edges = std::move(we.edges);
  g.edge_weight = std::move(we.weight);
  return g;
}

void write_graph_cache(const std::filesystem::path& dir, std::span<const CachedGraph> graphs) {
  std::vector<std::int32_t> edges;
  std::vector<double> attr, weight;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& cg : graphs) {
    const TraceGraph& g = cg.graph;
    for (const auto& [s, t] : g.edges) {
      edges.push_back(s);
      edges.push_back(t);
    }
    const bool has_attr = g.edge_attr.size() > 0;
    const bool has_weight = !g.edge_weight.empty();
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      for (int k = 0; k < 5; ++k) {
        attr.push_back(has_attr ? g.edge_attr(static_cast<Eigen::Index>(e), k) : 0.0);
      }
      weight.push_back(has_weight ? g.edge_weight[e] : 0.0);
    }
    entries.push_back({{"record_id", cg.record_id},
                       {"model_id", cg.model_id},
                       {"kind", to_string(g.kind)},
                       {"n_nodes", g.num_nodes() > 0 ? g.num_nodes() : 0},
                       {"edge_offset", offset},
                       {"n_edges", g.edges.size()},
                       {"has_edge_attr", has_attr},
                       {"has_edge_weight", has_weight}});
    offset += g.edges.size();
  }
  ArrayStoreWriter w(dir);
  w.add("edge_index", {offset, 2}, std::span<const std::int32_t>(edges));
  w.add("edge_attr", {offset, 5}, std::span<const double>(attr));
  w.add("edge_weight", {offset}, std::span<const double>(weight));
  w.set_meta({{"kind", "graphs"}, {"graphs", entries}});
  w.finish();
}

std::vector<CachedGraph> read_graph_cache(const std::filesystem::path& dir) {
  ArrayStoreReader r(dir);
  if (r.meta().value("kind", "") != "graphs") throw SchemaError(dir.string() + " is not a graph cache");
  const auto edges = r.read_i32("edge_index");
  const auto attr = r.read_f64("edge_attr");
  const auto weight = r.read_f64("edge_weight");
  std::vector<CachedGraph> out;
  for (const auto& e : r.meta().at("graphs")) {
    CachedGraph cg;
    cg.record_id = e.at("record_id").get<std::string>();
    cg.model_id = e.at("model_id").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    cg.graph.kind = kind == "relational" ? GraphKind::kRelational
                    : kind == "confidence" ? GraphKind::kConfidence
                                           : GraphKind::kChain;
    const std::size_t off = e.at("edge_offset").get<std::size_t>();
    const std::size_t m = e.at("n_edges").get<std::size_t>();
    for (std::size_t k = 0; k < m; ++k) {
      cg.graph.edges.emplace_back(edges[2 * (off + k)], edges[2 * (off + k) + 1]);
    }
    if (e.value("has_edge_attr", false)) {
      cg.graph.edge_attr.resize(static_cast<Eigen::Index>(m), 5);
      for (std::size_t k = 0; k < m; ++k)
        for (int f = 0; f < 5; ++f) cg.graph.edge_attr(static_cast<Eigen::Index>(k), f) = attr[5 * (off + k) + static_cast<std::size_t>(f)];
    }
    if (e.value("has_edge_weight", false)) {
      for (std::size_t k = 0; k < m; ++k) cg.graph.edge_weight.push_back(weight[off + k]);
    }
    out.push_back(std::move(cg));
  }
  return out;
}

}  // namespace tracecal

#include "tracecal/representation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "tracecal/array_store.hpp"
#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;

namespace {

std::vector<float> float_array(const json& j, const char* what) {
  if (!j.is_array()) throw SchemaError(std::string(what) + " must be an array of numbers");
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw SchemaError(std::string(what) + " must contain numbers");
    out.push_back(v.get<float>());
  }
  return out;
}

}  // namespace

TraceRepresentation featurize_extraction(const json& row, const FeaturizeOptions& options) {
  if (!row.is_object()) throw SchemaError("extraction row must be an object");
  TraceRepresentation rep;
  try {
    rep.record_id = row.at("record_id").get<std::string>();
    rep.model_id = row.at("model_id").get<std::string>();
  } catch (const json::exception&) {
    throw SchemaError("extraction row needs string record_id and model_id");
  }
  if (row.contains("prompt_hidden")) rep.prompt_hidden = float_array(row["prompt_hidden"], "prompt_hidden");
  if (!row.contains("chunks") || !row["chunks"].is_array()) {
    throw SchemaError("extraction row needs a chunks array");
  }
  std::size_t index = 0;
  for (const auto& c : row["chunks"]) {
    ChunkRepresentation cr;
    cr.record_id = rep.record_id;
    cr.model_id = rep.model_id;
    cr.chunk_index = index++;
    if (!c.contains("hidden")) throw SchemaError("chunk without hidden state");
    cr.hidden = float_array(c["hidden"], "hidden");
    std::vector<TokenFeatureVector> tokens;
    if (c.contains("token_logits")) {
      for (const auto& logits : c["token_logits"]) {
        const auto z = float_array(logits, "token_logits");
        const std::vector<double> zd(z.begin(), z.end());
        tokens.push_back(token_features(zd, options.top_k));
      }
    } else if (c.contains("token_features")) {
      for (const auto& f : c["token_features"]) {
        const auto v = float_array(f, "token_features");
        const std::vector<double> vd(v.begin(), v.end());
        tokens.push_back(TokenFeatureVector::from_array(vd));
      }
    } else {
      throw SchemaError("chunk needs token_logits or token_features");
    }
    if (tokens.empty()) throw SchemaError("chunk " + std::to_string(cr.chunk_index) + " has no tokens");
    cr.tlcc = aggregate_chunk(tokens, tokens.size(), options.max_len_norm);
    if (c.contains("token_logprobs")) {
      cr.token_logprobs = float_array(c["token_logprobs"], "token_logprobs");
    } else {
      for (const auto& t : tokens) cr.token_logprobs.push_back(static_cast<float>(t.log_top1_prob));
    }
    if (c.contains("probe_confidence") && c["probe_confidence"].is_number()) {
      cr.probe_confidence = c["probe_confidence"].get<double>();
    }
    rep.chunks.push_back(std::move(cr));
  }
  return rep;
}

void write_representation_store(const std::filesystem::path& dir,
                                std::vector<TraceRepresentation> traces) {
  std::sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) {
    return std::tie(a.record_id, a.model_id) < std::tie(b.record_id, b.model_id);
  });
  std::size_t hidden_dim = 0;
  bool have_dim = false;
  for (const auto& t : traces) {
    for (const auto& c : t.chunks) {
      if (!have_dim) {
        hidden_dim = c.hidden.size();
        have_dim = true;
      } else if (c.hidden.size() != hidden_dim) {
        throw SchemaError("hidden size differs across chunks");
      }
    }
  }
  std::vector<float> prompt, hidden, tlcc, probe, logprobs;
  std::vector<std::int32_t> offsets{0};
  json entries = json::array();
  std::size_t chunk_offset = 0;
  for (const auto& t : traces) {
    if (t.prompt_hidden.empty()) {
      prompt.insert(prompt.end(), hidden_dim, std::numeric_limits<float>::quiet_NaN());
    } else if (t.prompt_hidden.size() != hidden_dim) {
      throw SchemaError("prompt_hidden size differs from chunk hidden size");
    } else {
      prompt.insert(prompt.end(), t.prompt_hidden.begin(), t.prompt_hidden.end());
    }
    for (const auto& c : t.chunks) {
      hidden.insert(hidden.end(), c.hidden.begin(), c.hidden.end());
      for (double v : c.tlcc) tlcc.push_back(static_cast<float>(v));
      probe.push_back(c.probe_confidence ? static_cast<float>(*c.probe_confidence)
                                         : std::numeric_limits<float>::quiet_NaN());
      logprobs.insert(logprobs.end(), c.token_logprobs.begin(), c.token_logprobs.end());
      offsets.push_back(static_cast<std::int32_t>(logprobs.size()));
    }
    entries.push_back({{"record_id", t.record_id},
                       {"model_id", t.model_id},
                       {"chunk_offset", chunk_offset},
                       {"n_chunks", t.chunks.size()},
                       {"has_prompt_hidden", !t.prompt_hidden.empty()}});
    chunk_offset += t.chunks.size();
  }
  ArrayStoreWriter w(dir);
  w.add("prompt_hidden", {traces.size(), hidden_dim}, std::span<const float>(prompt));
  w.add("hidden", {chunk_offset, hidden_dim}, std::span<const float>(hidden));
  w.add("tlcc", {chunk_offset, kChunkFeatureCount}, std::span<const float>(tlcc));
  w.add("probe", {chunk_offset}, std::span<const float>(probe));
  w.add("logprob_offset", {offsets.size()}, std::span<const std::int32_t>(offsets));
  w.add("token_logprobs", {logprobs.size()}, std::span<const float>(logprobs));
  w.set_meta({{"kind", "representations"},
              {"hidden_dim", hidden_dim},
              {"tlcc_dim", kChunkFeatureCount},
              {"dtype", "f32"},
              {"ordering", "record_id,model_id,chunk_index"},
              {"hidden_definition", "last layer, final token of chunk"},
              {"traces", entries}});
  w.finish();
}

std::vector<TraceRepresentation> read_representation_store(const std::filesystem::path& dir) {
  ArrayStoreReader r(dir);
  const json& meta = r.meta();
  if (meta.value("kind", "") != "representations") {
    throw SchemaError(dir.string() + " is not a representation store");
  }
  const std::size_t D = meta.at("hidden_dim").get<std::size_t>();
  const auto prompt = r.read_f32("prompt_hidden");
  const auto hidden = r.read_f32("hidden");
  const auto tlcc = r.read_f32("tlcc");
  const auto probe = r.read_f32("probe");
  const auto offsets = r.read_i32("logprob_offset");
  const auto logprobs = r.read_f32("token_logprobs");
  std::vector<TraceRepresentation> out;
  std::size_t t_index = 0;
  for (const auto& e : meta.at("traces")) {
    TraceRepresentation t;
    t.record_id = e.at("record_id").get<std::string>();
    t.model_id = e.at("model_id").get<std::string>();
    if (e.value("has_prompt_hidden", true)) {
      t.prompt_hidden.assign(prompt.begin() + static_cast<long>(t_index * D),
                             prompt.begin() + static_cast<long>((t_index + 1) * D));
    }
    const std::size_t off = e.at("chunk_offset").get<std::size_t>();
    const std::size_t n = e.at("n_chunks").get<std::size_t>();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t row = off + k;
      ChunkRepresentation c;
      c.record_id = t.record_id;
      c.model_id = t.model_id;
      c.chunk_index = k;
      c.hidden.assign(hidden.begin() + static_cast<long>(row * D),
                      hidden.begin() + static_cast<long>((row + 1) * D));
      for (std::size_t f = 0; f < kChunkFeatureCount; ++f) c.tlcc[f] = tlcc[row * kChunkFeatureCount + f];
      if (!std::isnan(probe[row])) c.probe_confidence = probe[row];
      c.token_logprobs.assign(logprobs.begin() + offsets[row], logprobs.begin() + offsets[row + 1]);
      t.chunks.push_back(std::move(c));
    }
    out.push_back(std::move(t));
    ++t_index;
  }
  return out;
}

std::vector<TraceExample> assemble_examples(const std::vector<TraceAnnotation>& traces,
                                            const std::vector<TraceRepresentation>& reps,
                                            const std::vector<ReasoningRecord>& records) {
  std::map<std::pair<std::string, std::string>, const TraceRepresentation*> by_key;
  for (const auto& r : reps) by_key[{r.record_id, r.model_id}] = &r;
  std::map<std::string, const ReasoningRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;

  std::vector<TraceExample> out;
  for (const auto& t : traces) {
    auto it = by_key.find({t.record_id, t.model_id});
    if (it == by_key.end()) continue;
    const TraceRepresentation& rep = *it->second;
    if (rep.chunks.size() != t.chunks.size()) {
      throw SchemaError("trace " + t.record_id + "/" + t.model_id + ": " +
                        std::to_string(t.chunks.size()) + " chunks but " +
                        std::to_string(rep.chunks.size()) + " representations");
    }
    if (rep.chunks.empty()) continue;
    TraceExample ex;
    ex.record_id = t.record_id;
    ex.model_id = t.model_id;
    ex.chunk_texts = t.chunks;
    ex.chunk_labels = t.chunk_labels;
    ex.label = t.final_label;
    if (auto rec = by_id.find(t.record_id); rec != by_id.end()) {
      ex.dataset = rec->second->dataset;
      ex.prompt = rec->second->prompt;
    }
    const auto D = static_cast<Eigen::Index>(rep.chunks.front().hidden.size());
    const auto n = static_cast<Eigen::Index>(rep.chunks.size());
    ex.chunk_hidden.resize(n, D);
    ex.tlcc.resize(n, static_cast<Eigen::Index>(kChunkFeatureCount));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& c = rep.chunks[static_cast<std::size_t>(i)];
      for (Eigen::Index d = 0; d < D; ++d) ex.chunk_hidden(i, d) = c.hidden[static_cast<std::size_t>(d)];
      for (std::size_t f = 0; f < kChunkFeatureCount; ++f) ex.tlcc(i, static_cast<Eigen::Index>(f)) = c.tlcc[f];
      ex.token_logprobs.emplace_back(c.token_logprobs.begin(), c.token_logprobs.end());
    }
    if (!rep.prompt_hidden.empty()) {
      ex.prompt_hidden.resize(1, static_cast<Eigen::Index>(rep.prompt_hidden.size()));
      for (std::size_t d = 0; d < rep.prompt_hidden.size(); ++d) {
        ex.prompt_hidden(0, static_cast<Eigen::Index>(d)) = rep.prompt_hidden[d];
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

nn::Matrix keep_tail(const nn::Matrix& m, std::size_t cap) {
  const auto n = static_cast<std::size_t>(m.rows());
  if (n <= cap) return m;
  return m.bottomRows(static_cast<Eigen::Index>(cap));
}

}  // namespace tracecal

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/data.hpp"
#include "tracecal/logit_features.hpp"
#include "tracecal/nn/autograd.hpp"

namespace tracecal {

// Everything extracted from the reasoning model for one trace.
struct TraceRepresentation {
  std::string record_id;
  std::string model_id;
  // Last-layer hidden state at the final prompt token (may be empty).
  std::vector<float> prompt_hidden;
  std::vector<ChunkRepresentation> chunks;
};

struct FeaturizeOptions {
  std::size_t top_k = 5;
  std::size_t max_len_norm = kDefaultMaxLenNorm;
};

// Converts one row of the extraction contract into a representation:
//
//   {"record_id", "model_id", "prompt_hidden": [...],
//    "chunks": [{"hidden": [...],
//                "token_logits": [[...], ...]              // full logit rows
//                  or "token_features": [[10 values], ...] // precomputed
//                "token_logprobs": [...]}]}                // optional
//
// When token_logprobs is absent, it is taken as log p(1) of each token
// (the chosen token under greedy decoding).
TraceRepresentation featurize_extraction(const nlohmann::json& row,
                                         const FeaturizeOptions& options = {});

// Representation store: an ArrayStore directory with arrays
//   prompt_hidden  f32 [traces, hidden_dim]
//   hidden         f32 [chunks, hidden_dim]
//   tlcc           f32 [chunks, 41]
//   probe          f32 [chunks]          NaN when no probe confidence
//   logprob_offset i32 [chunks + 1]      into token_logprobs
//   token_logprobs f32 [tokens]
// and meta {"kind": "representations", "hidden_dim", "tlcc_dim",
// "ordering": "record_id,model_id,chunk_index", "traces": [{"record_id",
// "model_id", "chunk_offset", "n_chunks"}]}. Traces are sorted by
// (record_id, model_id).
void write_representation_store(const std::filesystem::path& dir,
                                std::vector<TraceRepresentation> traces);
std::vector<TraceRepresentation> read_representation_store(const std::filesystem::path& dir);

// Model-ready view of one annotated trace.
struct TraceExample {
  std::string record_id;
  std::string model_id;
  std::string dataset;
  std::string prompt;
  std::vector<std::string> chunk_texts;
  nn::Matrix prompt_hidden;  // 1 x d, or 0 x 0 when unavailable
  nn::Matrix chunk_hidden;   // n x d
  nn::Matrix tlcc;           // n x 41
  std::vector<std::vector<double>> token_logprobs;
  std::vector<ChunkLabel> chunk_labels;
  int label = 0;

  std::size_t num_chunks() const { return static_cast<std::size_t>(chunk_hidden.rows()); }
};

// Joins annotations with representations (and, when given, records for the
// prompt text and dataset). Traces without a representation are skipped;
// a chunk-count mismatch is a SchemaError.
std::vector<TraceExample> assemble_examples(const std::vector<TraceAnnotation>& traces,
                                            const std::vector<TraceRepresentation>& reps,
                                            const std::vector<ReasoningRecord>& records = {});

// Keeps the last `cap` rows (the answer-proximal end of a trace).
nn::Matrix keep_tail(const nn::Matrix& m, std::size_t cap);

}  // namespace tracecal

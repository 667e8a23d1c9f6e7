#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/data.hpp"

namespace tracecal {

// Planted-signal corpus. Each trace's chunk hidden states carry
// `signal` times a fixed unit direction, signed by the chunk's label (none
// for null chunks), plus isotropic Gaussian noise. Token logits get a
// top-1 margin shifted by the same sign and the prompt state a weaker copy
// of the final label. With signal 0 every feature is independent of the
// labels.
struct SyntheticOptions {
  std::size_t n_records = 1000;
  std::vector<std::string> models = {"synth-model-a", "synth-model-b"};
  // The first half of the datasets form the training pool and the rest are
  // held out as test datasets.
  std::vector<std::string> datasets = {"synth-alpha", "synth-beta", "synth-gamma", "synth-delta"};
  std::size_t hidden_dim = 32;
  std::size_t vocab = 16;
  std::size_t min_chunks = 2;
  std::size_t max_chunks = 8;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 8;
  double signal = 1.5;
  double positive_rate = 0.5;
  std::uint64_t seed = 7;
  std::string terminator = "</think>";
};

struct SyntheticCorpus {
  std::vector<ReasoningRecord> records;
  std::vector<RawTrace> raw_traces;
  std::vector<TraceAnnotation> traces;     // planted labels
  std::vector<nlohmann::json> extraction;  // featurize input rows
  std::vector<std::string> test_datasets;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

// records.jsonl, raw_traces.jsonl, labels.jsonl (planted annotations),
// extraction.jsonl and corpus.json (options and test datasets).
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus,
                            const SyntheticOptions& options);

// Deterministic judge used with synthetic traces: a chunk stating
// "intermediate result is X" is graded 1 when X equals the ground truth and
// 0 otherwise, other chunks null; the final grade follows the last chunk
// that states a result. Input and output follow the judge prompt contract.
std::string synthetic_judge_reply(const std::string& user_prompt);

}  // namespace tracecal

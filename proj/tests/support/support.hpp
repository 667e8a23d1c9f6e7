#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tracecal/data.hpp"
#include "tracecal/random.hpp"
#include "tracecal/representation.hpp"
#include "tracecal/synthetic.hpp"

namespace tracecal::test {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = fs::temp_directory_path() / ("tracecal-" + tag + "-" + std::to_string(gen()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Assembled examples of a synthetic corpus, kept alive together.
struct ExampleSet {
  SyntheticCorpus corpus;
  std::vector<TraceExample> examples;
  std::vector<const TraceExample*> all, pool, test;
};

inline std::unique_ptr<ExampleSet> synthetic_examples(const SyntheticOptions& opts) {
  auto set = std::make_unique<ExampleSet>();
  set->corpus = make_synthetic_corpus(opts);
  std::vector<TraceRepresentation> reps;
  for (const auto& row : set->corpus.extraction) reps.push_back(featurize_extraction(row));
  set->examples = assemble_examples(set->corpus.traces, reps, set->corpus.records);
  for (const auto& ex : set->examples) {
    set->all.push_back(&ex);
    const bool held_out = std::find(set->corpus.test_datasets.begin(), set->corpus.test_datasets.end(),
                                    ex.dataset) != set->corpus.test_datasets.end();
    (held_out ? set->test : set->pool).push_back(&ex);
  }
  return set;
}

inline SyntheticOptions small_corpus(std::size_t n = 120, double signal = 1.5, std::uint64_t seed = 7) {
  SyntheticOptions o;
  o.n_records = n;
  o.signal = signal;
  o.seed = seed;
  o.hidden_dim = 8;
  o.models = {"m"};
  return o;
}

// Random example with n chunks of width d and labels drawn with rng.
inline TraceExample random_example(Rng& rng, std::size_t n, std::size_t d, const std::string& id) {
  TraceExample ex;
  ex.record_id = id;
  ex.model_id = "m";
  ex.dataset = "ds";
  ex.prompt = "prompt " + id;
  ex.prompt_hidden = nn::Matrix(1, static_cast<Eigen::Index>(d));
  ex.chunk_hidden = nn::Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ex.tlcc = nn::Matrix(static_cast<Eigen::Index>(n), 41);
  for (Eigen::Index j = 0; j < ex.prompt_hidden.cols(); ++j) ex.prompt_hidden(0, j) = rng.normal();
  for (Eigen::Index i = 0; i < ex.chunk_hidden.rows(); ++i) {
    for (Eigen::Index j = 0; j < ex.chunk_hidden.cols(); ++j) ex.chunk_hidden(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < 41; ++j) ex.tlcc(i, j) = rng.uniform();
    ex.chunk_texts.push_back("chunk " + std::to_string(i) + " of " + id);
    ex.token_logprobs.push_back({-rng.uniform(), -2 * rng.uniform(), -rng.uniform()});
    ex.chunk_labels.push_back(rng.bernoulli(0.2) ? ChunkLabel{} : ChunkLabel{rng.bernoulli(0.5) ? 1 : 0});
  }
  ex.label = rng.bernoulli(0.5) ? 1 : 0;
  return ex;
}

}  // namespace tracecal::test

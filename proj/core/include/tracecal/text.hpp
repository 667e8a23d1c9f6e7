#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracecal/estimator.hpp"

namespace tracecal {

// Frozen text encoder: tokenize + per-token embeddings.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  // Token ids of `text` without special tokens.
  virtual std::vector<int> tokenize(std::string_view text) const = 0;
  virtual int pad_id() const { return 0; }
  virtual int cls_id() const { return 1; }
  virtual int sep_id() const { return 2; }
  virtual std::size_t context_length() const = 0;
  virtual Eigen::Index dim() const = 0;
  // L x dim embeddings; rows where mask is false are ignored by callers.
  virtual nn::Matrix embed(std::span<const int> ids, const std::vector<bool>& mask) const = 0;
};

// Deterministic stand-in encoder: hashed word-piece ids with seeded random
// embedding rows, mixed with the mean of the surrounding [SEP]-delimited
// segment so that a [SEP] state summarizes the text before it.
class HashingEncoder final : public TextEncoder {
 public:
  explicit HashingEncoder(Eigen::Index dim = 64, std::size_t vocab = 4096, std::size_t context = 512,
                          std::uint64_t seed = 17);
  std::string name() const override;
  std::vector<int> tokenize(std::string_view text) const override;
  std::size_t context_length() const override { return context_; }
  Eigen::Index dim() const override { return dim_; }
  nn::Matrix embed(std::span<const int> ids, const std::vector<bool>& mask) const override;

 private:
  Eigen::Index dim_;
  std::size_t vocab_, context_;
  std::uint64_t seed_;
  nn::Matrix table_;
};

// Resolves an encoder reference string such as "hashing-64".
std::shared_ptr<const TextEncoder> make_encoder(const std::string& reference);

// Mean-pooled encoder states of prompt + response through an MLP head.
class EttinEstimator final : public NeuralEstimator {
 public:
  EttinEstimator(nlohmann::json config, const Services& services);
  std::string method() const override { return "ettin"; }
  nlohmann::json config() const override { return config_; }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;

  // [CLS] prompt [SEP] response [SEP], right-truncated to the context length.
  std::vector<int> input_ids(std::string_view prompt, std::string_view response) const;
  double score_text(std::string_view prompt, std::string_view response) const;
  double score_ids(std::span<const int> ids, const std::vector<bool>& mask) const;

  static std::size_t count_parameters(const nlohmann::json& hp, std::size_t encoder_dim);

 private:
  nn::Matrix pooled(std::span<const int> ids, const std::vector<bool>& mask) const;

  nlohmann::json config_;
  std::shared_ptr<const TextEncoder> encoder_;
  nn::Mlp head_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, nn::Matrix> cache_;
};

struct HgaOutputs {
  nn::Var logit;           // 1 x 1
  nn::Var quality_logits;  // n x 1
  nn::Var gates;           // n x 1, sigmoid(quality_logits)
  nn::Var pooled;          // 1 x d
};

// Chunk-level self-attention whose outputs are gated by a per-chunk quality
// head, mean-pooled and classified. Trained with the final BCE plus
// aux_loss_weight times the mean chunk BCE over non-null chunk labels.
class HgaEstimator final : public NeuralEstimator {
 public:
  HgaEstimator(nlohmann::json config, const Services& services);
  std::string method() const override { return "ettin-hga"; }
  nlohmann::json config() const override { return config_; }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  std::unique_ptr<TrainingUnits> make_units(std::span<const TraceExample* const> train) const override;

  HgaOutputs forward_embeddings(const nn::Matrix& chunk_embeddings, bool training, Rng& rng) const;
  // Uses the quality head's logits supplied by the caller instead of its own.
  HgaOutputs forward_with_quality(const nn::Matrix& chunk_embeddings, const nn::Matrix& quality_logits) const;

  struct Layout {
    std::vector<int> ids;
    std::vector<std::size_t> sep_positions;  // one per kept chunk
    std::size_t dropped_chunks = 0;
    bool truncated = false;
  };
  // [CLS] prompt [SEP] c1 [SEP] ... cn [SEP]; over-long inputs keep the
  // trailing chunks.
  Layout layout(std::string_view prompt, std::span<const std::string> chunks) const;
  nn::Matrix chunk_embeddings(std::string_view prompt, std::span<const std::string> chunks,
                              Layout* layout_out = nullptr) const;

  struct Scored {
    double score;
    std::vector<double> gates;
  };
  Scored score_hga(std::string_view prompt, std::span<const std::string> chunks) const;
  double aux_loss_weight() const { return lambda_; }
  std::size_t truncation_warnings() const;

  static std::size_t count_parameters(const nlohmann::json& hp, std::size_t encoder_dim);

 private:
  HgaOutputs head(const nn::Var& e, const nn::Var* quality_override, bool training, Rng& rng) const;
  const nn::Matrix& cached_embeddings(const TraceExample& ex, std::size_t* dropped) const;

  nlohmann::json config_;
  std::shared_ptr<const TextEncoder> encoder_;
  double lambda_ = 0.5;
  double attention_dropout_ = 0.1;
  nn::Linear wq_, wk_, wv_;
  nn::Mlp quality_, classifier_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::pair<nn::Matrix, std::size_t>> cache_;
  mutable std::size_t truncations_ = 0;
};

}  // namespace tracecal

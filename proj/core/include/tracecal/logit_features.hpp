#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tracecal {

inline constexpr std::size_t kTokenFeatureCount = 10;
inline constexpr std::size_t kChunkFeatureCount = 4 * kTokenFeatureCount + 1;  // 41

// Uncertainty statistics of one next-token distribution.
struct TokenFeatureVector {
  double top1_prob = 0;
  double log_top1_prob = 0;
  double logit_margin = 0;
  double prob_gap = 0;
  double entropy = 0;
  double norm_entropy = 0;
  double topk_mass = 0;
  double tail_mass = 0;
  double l2_concentration = 0;
  double logit_std = 0;

  std::array<double, kTokenFeatureCount> as_array() const;
  static TokenFeatureVector from_array(std::span<const double> v);
  static const std::array<std::string, kTokenFeatureCount>& names();
};

// Features of a logit vector of length V >= 2. Softmax uses max-subtraction;
// logit_std is the population standard deviation.
TokenFeatureVector token_features(std::span<const double> logits, std::size_t k = 5);

// Layout: for each statistic in {mean, std, min, max}, the ten token features
// in TokenFeatureVector order (index = stat * 10 + feature), then the
// normalized token count at index 40.
using ChunkFeatureVector = std::array<double, kChunkFeatureCount>;

inline constexpr std::size_t kDefaultMaxLenNorm = 512;

// std is the population standard deviation. norm_token_count is
// min(chunk_len / max_len_norm, 1).
ChunkFeatureVector aggregate_chunk(std::span<const TokenFeatureVector> tokens,
                                   std::size_t chunk_len,
                                   std::size_t max_len_norm = kDefaultMaxLenNorm);

std::vector<std::string> chunk_feature_names();

// Per-chunk representation extracted from the reasoning model.
struct ChunkRepresentation {
  std::string record_id;
  std::string model_id;
  std::size_t chunk_index = 0;
  // Last-layer hidden state at the chunk's final token.
  std::vector<float> hidden;
  ChunkFeatureVector tlcc{};
  // Log-probability of each generated token in the chunk.
  std::vector<float> token_logprobs;
  std::optional<double> probe_confidence;
};

}  // namespace tracecal

#include "tracecal/logit_features.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "tracecal/error.hpp"

namespace tracecal {

std::array<double, kTokenFeatureCount> TokenFeatureVector::as_array() const {
  return {top1_prob, log_top1_prob, logit_margin, prob_gap,         entropy,
          norm_entropy, topk_mass, tail_mass,    l2_concentration, logit_std};
}

TokenFeatureVector TokenFeatureVector::from_array(std::span<const double> v) {
  if (v.size() != kTokenFeatureCount) throw InvalidInput("token feature vector needs 10 values");
  return TokenFeatureVector{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

const std::array<std::string, kTokenFeatureCount>& TokenFeatureVector::names() {
  static const std::array<std::string, kTokenFeatureCount> kNames = {
      "top1_prob", "log_top1_prob", "logit_margin", "prob_gap",         "entropy",
      "norm_entropy", "topk_mass", "tail_mass",    "l2_concentration", "logit_std"};
  return kNames;
}

TokenFeatureVector token_features(std::span<const double> logits, std::size_t k) {
  const std::size_t V = logits.size();
  if (V < 2) throw InvalidInput("token_features: need at least two logits");
  if (k == 0) throw InvalidInput("token_features: k must be >= 1");
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidInput("token_features: non-finite logit");
  }

  std::vector<double> z(logits.begin(), logits.end());
  std::sort(z.begin(), z.end(), std::greater<>());
  const double zmax = z[0];

  // log-sum-exp over shifted logits
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  const double log_norm = std::log(sum);

  TokenFeatureVector f;
  double entropy = 0.0, l2 = 0.0, topk = 0.0;
  const std::size_t kk = std::min(k, V);
  for (std::size_t i = 0; i < V; ++i) {
    const double logp = (z[i] - zmax) - log_norm;
    const double p = std::exp(logp);
    if (p > 0.0) entropy -= p * logp;
    l2 += p * p;
    if (i < kk) topk += p;
  }
  const double p1 = std::exp(-log_norm);
  const double p2 = std::exp((z[1] - zmax) - log_norm);

  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(V);
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(V);

  f.top1_prob = p1;
  f.log_top1_prob = -log_norm;
  f.logit_margin = z[0] - z[1];
  f.prob_gap = p1 - p2;
  f.entropy = entropy;
  f.norm_entropy = std::clamp(entropy / std::log(static_cast<double>(V)), 0.0, 1.0);
  f.topk_mass = std::min(topk, 1.0);
  f.tail_mass = 1.0 - f.topk_mass;
  f.l2_concentration = l2;
  f.logit_std = std::sqrt(var);
  return f;
}

ChunkFeatureVector aggregate_chunk(std::span<const TokenFeatureVector> tokens,
                                   std::size_t chunk_len, std::size_t max_len_norm) {
  if (tokens.empty()) throw InvalidInput("aggregate_chunk: empty token list");
  if (chunk_len != tokens.size()) throw InvalidInput("aggregate_chunk: chunk_len != token count");
  if (max_len_norm == 0) throw InvalidInput("aggregate_chunk: max_len_norm must be >= 1");

  ChunkFeatureVector out{};
  const double n = static_cast<double>(tokens.size());
  std::vector<double> column(tokens.size());
  for (std::size_t f = 0; f < kTokenFeatureCount; ++f) {
    for (std::size_t i = 0; i < tokens.size(); ++i) column[i] = tokens[i].as_array()[f];
    // Summing in sorted order makes the result independent of token order.
    std::sort(column.begin(), column.end());
    double mean = 0.0;
    for (double v : column) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : column) var += (v - mean) * (v - mean);
    var /= n;
    out[0 * kTokenFeatureCount + f] = mean;
    out[1 * kTokenFeatureCount + f] = std::sqrt(var);
    out[2 * kTokenFeatureCount + f] = column.front();
    out[3 * kTokenFeatureCount + f] = column.back();
  }
  out[kChunkFeatureCount - 1] =
      std::min(static_cast<double>(chunk_len) / static_cast<double>(max_len_norm), 1.0);
  return out;
}

std::vector<std::string> chunk_feature_names() {
  static const char* kStats[] = {"mean", "std", "min", "max"};
  std::vector<std::string> out;
  for (const char* s : kStats) {
    for (const auto& f : TokenFeatureVector::names()) out.push_back(std::string(s) + "_" + f);
  }
  out.push_back("norm_token_count");
  return out;
}

}  // namespace tracecal

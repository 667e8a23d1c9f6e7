#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tracecal/estimator.hpp"

namespace tracecal {

// Sequences longer than this keep only their last rows.
inline constexpr std::size_t kMaxSequenceChunks = 64;

// MLP on the hidden state at the final prompt token.
class PikEstimator final : public NeuralEstimator {
 public:
  explicit PikEstimator(nlohmann::json config);
  std::string method() const override { return "pik"; }
  nlohmann::json config() const override { return config_; }
  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  std::unique_ptr<TrainingUnits> make_units(std::span<const TraceExample* const> train) const override;

  static std::size_t count_parameters(const nlohmann::json& hp, std::size_t input_dim);

 private:
  nlohmann::json config_;
  nn::Mlp mlp_;
};

// Per-chunk hidden-state probe. The trace score is the final chunk's output.
class PhsvEstimator final : public NeuralEstimator {
 public:
  explicit PhsvEstimator(nlohmann::json config);
  std::string method() const override { return config_.at("method").get<std::string>(); }
  nlohmann::json config() const override { return config_; }

  struct ChunkOutputs {
    nn::Var logits;       // n x 1
    nn::Var penultimate;  // n x penultimate_dim()
  };
  ChunkOutputs chunk_forward(const nn::Matrix& hidden, bool training, Rng& rng) const;
  std::vector<double> chunk_confidences(const nn::Matrix& hidden) const;
  Eigen::Index penultimate_dim() const { return mlp_.penultimate_dim(); }
  Eigen::Index input_dim() const { return mlp_.in_dim(); }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  // Chunks with a non-null label, inverse-class-frequency weighted.
  std::unique_ptr<TrainingUnits> make_units(std::span<const TraceExample* const> train) const override;

  static std::size_t count_parameters(const nlohmann::json& hp, std::size_t input_dim);

 private:
  nlohmann::json config_;
  nn::Mlp mlp_;
};

// Inverse class frequency weights renormalized to mean 1 over `labels`.
std::vector<double> inverse_frequency_weights(std::span<const double> labels);

// Splits a training pool for the two-stage protocol: the first floor(n/2)
// traces in (record_id, model_id) order train the probe, the rest train the
// downstream model.
struct HalfPartition {
  std::vector<const TraceExample*> probe_half;
  std::vector<const TraceExample*> complement;
};
HalfPartition phsv_half_partition(std::span<const TraceExample* const> pool);

// Sequence heads over chunk hidden states (source "hidden") or TLCC
// vectors (source "tlcc"), with kind mlp (mean-pool then classify), conv or
// lstm.
class SequenceHeadEstimator final : public NeuralEstimator {
 public:
  explicit SequenceHeadEstimator(nlohmann::json config);
  std::string method() const override { return config_.at("method").get<std::string>(); }
  nlohmann::json config() const override { return config_; }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  // Scores a padded sequence: rows where mask is false are ignored.
  double score_padded(const nn::Matrix& seq, const std::vector<bool>& mask) const;
  nn::Var forward_sequence(const nn::Matrix& seq, bool training, Rng& rng) const;

  static std::size_t count_parameters(const std::string& kind, const nlohmann::json& hp,
                                      std::size_t input_dim);

 private:
  nn::Matrix input_of(const TraceExample& ex) const;

  nlohmann::json config_;
  std::string source_;
  Standardizer norm_;
  std::unique_ptr<nn::SequenceEncoder> encoder_;
  nn::Mlp head_;
};

}  // namespace tracecal

namespace tracecal {

// A PHSV-half probe embedded in a downstream model. Its parameters are
// registered first in the owner's list. With finetune = false its outputs
// are computed without gradient and in inference mode.
class EmbeddedProbe {
 public:
  EmbeddedProbe() = default;
  EmbeddedProbe(const nlohmann::json& probe_config, bool finetune);

  // n x (1 + penultimate_dim): [sigmoid(logit) | penultimate activations].
  nn::Var features(const nn::Matrix& hidden, bool training, Rng& rng) const;
  std::vector<double> confidences(const nn::Matrix& hidden) const;
  Eigen::Index feature_dim() const { return 1 + probe_->penultimate_dim(); }
  bool finetune() const { return finetune_; }
  const nn::ParameterList& parameters() const { return *probe_->parameters(); }
  const nlohmann::json& probe_config() const { return config_; }
  void load_from(const PhsvEstimator& trained);

  static std::size_t count(const nlohmann::json& probe_config);
  static std::size_t feature_dim(const nlohmann::json& probe_config);

 private:
  nlohmann::json config_;
  std::shared_ptr<PhsvEstimator> probe_;
  bool finetune_ = false;
};

}  // namespace tracecal

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tracecal/classic.hpp"
#include "tracecal/estimator.hpp"
#include "tracecal/probes.hpp"

namespace tracecal {

inline constexpr std::size_t kDefaultTrajectoryLength = 16;

struct TrajectoryVector {
  std::vector<double> confidences;  // exactly L entries
  std::size_t true_length = 0;      // min(n, L)
};

// Keeps the last L confidences; shorter trajectories are padded by
// repeating the final confidence.
TrajectoryVector make_trajectory(std::span<const double> chunk_confidences, std::size_t L);

// Classic classifier on the probe's confidence trajectory.
class CeEstimator final : public FittableEstimator {
 public:
  explicit CeEstimator(nlohmann::json config);
  std::string method() const override { return config_.at("method").get<std::string>(); }
  nlohmann::json config() const override;
  const nn::ParameterList* parameters() const override { return &probe_.parameters(); }

  void fit(std::span<const TraceExample* const> train, Rng& rng) override;
  double score(const TraceExample& ex) const override;

  TrajectoryVector trajectory(const TraceExample& ex) const;
  EmbeddedProbe& probe() { return probe_; }
  const std::vector<std::string>& warnings() const;

 private:
  nlohmann::json config_;
  std::size_t L_ = kDefaultTrajectoryLength;
  EmbeddedProbe probe_;
  std::unique_ptr<Classifier> classifier_;
};

// Dual-stream model: a semantic stream over chunk hidden states and a
// dynamics stream over [confidence | penultimate] probe features, encoded by
// the same kind of network (mlp, conv or lstm) and fused by concatenation.
class LateFusionEstimator final : public NeuralEstimator {
 public:
  explicit LateFusionEstimator(nlohmann::json config);
  std::string method() const override { return config_.at("method").get<std::string>(); }
  nlohmann::json config() const override { return config_; }
  const nn::ParameterList& trainable() const override { return trainable_; }

  nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const override;
  // Streams given explicitly; rows must match.
  nn::Var forward_streams(const nn::Matrix& semantic, const nn::Var& dynamics, bool training,
                          Rng& rng) const;
  // Inference with either stream replaced by zeros.
  double score_ablated(const TraceExample& ex, bool zero_semantic, bool zero_dynamics) const;

  Eigen::Index fused_dim() const { return semantic_->out_dim() + dynamics_->out_dim(); }
  Eigen::Index semantic_dim() const { return semantic_->out_dim(); }
  Eigen::Index dynamics_dim() const { return dynamics_->out_dim(); }
  EmbeddedProbe& probe() { return probe_; }
  const EmbeddedProbe& probe() const { return probe_; }

  static std::size_t count_parameters(const nlohmann::json& config);

 private:
  nlohmann::json config_;
  EmbeddedProbe probe_;
  nn::ParameterList trainable_;
  std::unique_ptr<nn::SequenceEncoder> semantic_, dynamics_;
  nn::Mlp head_;
};

}  // namespace tracecal

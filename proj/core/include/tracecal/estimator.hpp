#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/nn/layers.hpp"
#include "tracecal/random.hpp"
#include "tracecal/representation.hpp"

namespace tracecal {

class NliScorer;
class TextEncoder;

// Any trained scorer mapping a trace to a correctness probability.
class Estimator {
 public:
  virtual ~Estimator() = default;

  virtual std::string method() const = 0;
  // Probability in [0, 1]. Safe to call concurrently on a trained estimator.
  virtual double score(const TraceExample& ex) const = 0;
  std::vector<double> score_all(std::span<const TraceExample* const> examples) const;

  // Everything needed to rebuild the estimator apart from its tensors.
  virtual nlohmann::json config() const = 0;
  // Tensors in a fixed registration order; nullptr for non-neural models.
  virtual const nn::ParameterList* parameters() const { return nullptr; }

  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

 private:
  double threshold_ = 0.5;
};

// One optimization step's worth of loss over a batch of training units.
class TrainingUnits {
 public:
  virtual ~TrainingUnits() = default;
  virtual std::size_t size() const = 0;
  virtual nn::Var batch_loss(std::span<const std::size_t> batch, Rng& rng) const = 0;
};

class NeuralEstimator : public Estimator {
 public:
  const nn::ParameterList* parameters() const override { return &params_; }
  nn::ParameterList& mutable_parameters() { return params_; }
  // Subset updated by the optimizer (all parameters unless a component is
  // frozen).
  virtual const nn::ParameterList& trainable() const { return params_; }

  // Trace-level logit, 1 x 1.
  virtual nn::Var forward(const TraceExample& ex, bool training, Rng& rng) const = 0;
  double score(const TraceExample& ex) const override;

  // Default: one unit per trace, unweighted BCE on the final label.
  virtual std::unique_ptr<TrainingUnits> make_units(
      std::span<const TraceExample* const> train) const;

 protected:
  nn::ParameterList params_;
};

// Non-gradient learners (the classic classifiers) fit in one call.
class FittableEstimator : public Estimator {
 public:
  virtual void fit(std::span<const TraceExample* const> train, Rng& rng) = 0;
};

// Per-column affine standardization fitted on training rows.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static Standardizer fit(std::span<const nn::Matrix* const> blocks);
  nn::Matrix apply(const nn::Matrix& m) const;
  bool empty() const { return mean.empty(); }
  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

// Non-serialized collaborators referenced by name from estimator configs.
struct Services {
  std::shared_ptr<const NliScorer> nli;
  std::shared_ptr<const TextEncoder> encoder;

  // Deterministic stubs used when nothing else is configured.
  static Services defaults();
};

// Hyperparameter accessors with schema errors on bad types.
int hp_int(const nlohmann::json& hp, const char* key);
double hp_double(const nlohmann::json& hp, const char* key);
bool hp_bool(const nlohmann::json& hp, const char* key);
std::string hp_string(const nlohmann::json& hp, const char* key);
std::vector<int> hp_widths(const nlohmann::json& hp, const char* key);

// Builds an estimator from its config (as returned by config()). Parameters
// are freshly initialized from config["seed"].
std::unique_ptr<Estimator> estimator_from_config(const nlohmann::json& config,
                                                 const Services& services);

// Checkpoint directory: estimator.json {format, method, config, threshold}
// plus weights/ (an array store holding one f64 array per parameter).
void save_checkpoint(const Estimator& est, const std::filesystem::path& dir);
std::unique_ptr<Estimator> load_checkpoint(const std::filesystem::path& dir,
                                           const Services& services);

}  // namespace tracecal

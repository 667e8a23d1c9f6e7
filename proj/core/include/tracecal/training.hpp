#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tracecal/estimator.hpp"
#include "tracecal/metrics.hpp"

namespace tracecal {

struct TrainOptions {
  int max_epochs = 200;
  int patience = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double alpha = 0.6;
  std::size_t ece_bins = 10;
  double min_sensitivity = 0.5;
  double min_specificity = 0.5;
  std::uint64_t seed = 0;
  // Called after each epoch with (epoch starting at 1, validation composite,
  // full history so far); returning true stops the run as pruned.
  std::function<bool(int, double, const std::vector<double>&)> on_epoch;
};

// Tracks the best value under strict improvement and signals when
// `patience` epochs have passed without one.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Returns true when this value is a new best.
  bool update(double value);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = 0;
};

struct Feasibility {
  double threshold = 0.5;
  double sensitivity = 0;
  double specificity = 0;
  bool feasible = false;
};

bool is_feasible(double sensitivity, double specificity, double min_sensitivity = 0.5,
                 double min_specificity = 0.5);

// Youden threshold on `val` and the operating point it induces.
Feasibility assess_feasibility(const ScoredSet& val, double min_sensitivity = 0.5,
                               double min_specificity = 0.5);

struct TrainOutcome {
  int best_epoch = 0;
  int epochs_run = 0;
  bool pruned = false;
  std::vector<double> history;  // validation composite per epoch
  double val_composite = 0;
  double val_auroc = 0;
  double val_ece = 0;
  Feasibility operating_point;
};

// Validation composite for the current state of `est`.
double validation_composite(const Estimator& est, std::span<const TraceExample* const> val,
                            double alpha, std::size_t bins, double* auroc_out = nullptr,
                            double* ece_out = nullptr);

// Minibatch training with early stopping on the validation composite. The
// best epoch's parameters are restored and its Youden threshold installed.
TrainOutcome train_neural(NeuralEstimator& model, std::span<const TraceExample* const> train,
                          std::span<const TraceExample* const> val, const TrainOptions& options);

// One-shot fit for classic learners, reported in the same shape.
TrainOutcome train_fittable(FittableEstimator& model, std::span<const TraceExample* const> train,
                            std::span<const TraceExample* const> val, const TrainOptions& options);

}  // namespace tracecal

#include "tracecal/training.hpp"

#include <cmath>
#include <numeric>

#include "tracecal/error.hpp"

namespace tracecal {

bool EarlyStopper::update(double value) {
  ++epoch_;
  if (epoch_ == 1 || value > best_) {
    best_ = value;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

bool is_feasible(double sensitivity, double specificity, double min_sensitivity,
                 double min_specificity) {
  return sensitivity >= min_sensitivity && specificity >= min_specificity;
}

Feasibility assess_feasibility(const ScoredSet& val, double min_sensitivity,
                               double min_specificity) {
  Feasibility f;
  f.threshold = youden_threshold(val);
  const ThresholdMetrics tm = threshold_metrics(val, f.threshold);
  f.sensitivity = tm.recall;
  f.specificity = tm.specificity;
  f.feasible = is_feasible(f.sensitivity, f.specificity, min_sensitivity, min_specificity);
  return f;
}

namespace {

ScoredSet scored(const Estimator& est, std::span<const TraceExample* const> examples) {
  ScoredSet set;
  set.scores = est.score_all(examples);
  for (const TraceExample* ex : examples) set.labels.push_back(ex->label);
  for (double s : set.scores) {
    if (!std::isfinite(s)) throw TrainingError("estimator produced a non-finite score");
  }
  return set;
}

void require_both_classes(std::span<const TraceExample* const> examples, const char* what) {
  std::size_t pos = 0;
  for (const TraceExample* ex : examples) pos += ex->label == 1;
  if (pos == 0 || pos == examples.size()) {
    throw TrainingError(std::string(what) + " set needs both classes");
  }
}

void finish(const Estimator& est, std::span<const TraceExample* const> val,
            const TrainOptions& options, TrainOutcome& out) {
  const ScoredSet set = scored(est, val);
  out.val_auroc = auroc(set);
  out.val_ece = ece(set, options.ece_bins);
  out.val_composite = composite_score(out.val_auroc, out.val_ece, options.alpha);
  out.operating_point = assess_feasibility(set, options.min_sensitivity, options.min_specificity);
}

}  // namespace

double validation_composite(const Estimator& est, std::span<const TraceExample* const> val,
                            double alpha, std::size_t bins, double* auroc_out, double* ece_out) {
  const ScoredSet set = scored(est, val);
  const double a = auroc(set);
  const double e = ece(set, bins);
  if (auroc_out) *auroc_out = a;
  if (ece_out) *ece_out = e;
  return composite_score(a, e, alpha);
}

TrainOutcome train_neural(NeuralEstimator& model, std::span<const TraceExample* const> train,
                          std::span<const TraceExample* const> val, const TrainOptions& options) {
  if (train.empty()) throw TrainingError("empty training set");
  require_both_classes(val, "validation");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  const auto units = model.make_units(train);
  if (units->size() == 0) throw TrainingError("no training units");

  nn::Adam optimizer(model.trainable(), options.learning_rate, options.weight_decay);
  Rng root(options.seed);
  Rng order_rng = root.split(0x6f72646572ULL);
  Rng dropout_rng = root.split(0x64726f70ULL);
  EarlyStopper stopper(options.patience);
  nn::ParameterList& all = model.mutable_parameters();
  std::vector<nn::Matrix> best_state = all.snapshot();

  TrainOutcome out;
  std::vector<std::size_t> order(units->size());
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t len = std::min(options.batch_size, order.size() - start);
      optimizer.zero_grad();
      const nn::Var loss = units->batch_loss(std::span(order).subspan(start, len), dropout_rng);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
      }
      nn::backward(loss);
      optimizer.step();
    }
    const double composite = validation_composite(model, val, options.alpha, options.ece_bins);
    out.history.push_back(composite);
    out.epochs_run = epoch;
    if (stopper.update(composite)) best_state = all.snapshot();
    if (options.on_epoch && options.on_epoch(epoch, composite, out.history)) {
      out.pruned = true;
      break;
    }
    if (stopper.should_stop()) break;
  }
  all.restore(best_state);
  out.best_epoch = stopper.best_epoch();
  finish(model, val, options, out);
  model.set_threshold(out.operating_point.threshold);
  return out;
}

TrainOutcome train_fittable(FittableEstimator& model, std::span<const TraceExample* const> train,
                            std::span<const TraceExample* const> val, const TrainOptions& options) {
  if (train.empty()) throw TrainingError("empty training set");
  require_both_classes(train, "training");
  require_both_classes(val, "validation");
  Rng rng(options.seed);
  model.fit(train, rng);
  TrainOutcome out;
  out.best_epoch = 1;
  out.epochs_run = 1;
  finish(model, val, options, out);
  out.history.push_back(out.val_composite);
  model.set_threshold(out.operating_point.threshold);
  return out;
}

}  // namespace tracecal

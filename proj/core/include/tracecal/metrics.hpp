#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tracecal {

// Paired confidence scores and binary correctness labels.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }

  // Throws InvalidInput unless non-empty, equal length, scores in [0, 1]
  // and labels in {0, 1}.
  void validate() const;
};

struct MetricBlock {
  double ece = 0, brier = 0, acc = 0, f1 = 0, precision = 0, recall = 0, specificity = 0,
         aucpr = 0, auroc = 0, youden_threshold = 0;

  static const std::vector<std::string>& names();
  // Metric value by name (one of names()).
  double get(const std::string& name) const;
  double& at(const std::string& name);
  // True when smaller values are better (ECE, Brier).
  static bool lower_is_better(const std::string& name);

  nlohmann::json to_json() const;
  static MetricBlock from_json(const nlohmann::json& j);
  bool operator==(const MetricBlock&) const = default;
};

// Uniform, right-closed bins over [0, 1]: bin j covers (j/b, (j+1)/b], with
// 0.0 in bin 0 and 1.0 in bin b-1.
std::size_t calibration_bin(double score, std::size_t bins);

struct CalibrationBin {
  double confidence_mean = 0;
  double accuracy = 0;
  std::size_t count = 0;
};

// Per-bin statistics including empty bins (count 0). Shared by ece() and
// reliability_data().
std::vector<CalibrationBin> calibration_bins(const ScoredSet& set, std::size_t bins);

// Sum over bins of (count / n) * |confidence_mean - accuracy|.
double ece_from_bins(std::span<const CalibrationBin> bins, std::size_t n);

double ece(const ScoredSet& set, std::size_t bins = 10);
double brier(const ScoredSet& set);

// Probability that a random positive outscores a random negative, ties
// counted one half. Requires both classes.
double auroc(const ScoredSet& set);

// Step-wise area under the precision-recall curve (average precision) from a
// descending-score sweep with tied scores treated as one threshold.
double aucpr(const ScoredSet& set);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Predicts positive iff score >= threshold.
ConfusionCounts confusion_at(const ScoredSet& set, double threshold);

struct ThresholdMetrics {
  double acc = 0, f1 = 0, precision = 0, recall = 0, specificity = 0;
  // Set when the corresponding ratio had a zero denominator and was
  // reported as 0.
  bool precision_undefined = false, recall_undefined = false,
       specificity_undefined = false, f1_undefined = false;
};

ThresholdMetrics threshold_metrics(const ConfusionCounts& c);
ThresholdMetrics threshold_metrics(const ScoredSet& set, double threshold);

// Youden's J maximizer over the distinct observed scores plus the sentinels
// 0 and 1 + 1e-9. Ties go to the smaller threshold.
double youden_threshold(const ScoredSet& set);

// alpha * AUROC + (1 - alpha) * (1 - ECE).
double composite_score(double auroc, double ece, double alpha = 0.6);

// Full metric block. Threshold metrics are taken at `threshold` when given,
// otherwise at the set's own Youden threshold.
MetricBlock evaluate(const ScoredSet& set, std::optional<double> threshold = std::nullopt,
                     std::size_t bins = 10);

}  // namespace tracecal

#include "tracecal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tracecal/error.hpp"

namespace tracecal {

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void ScoredSet::validate() const {
  if (scores.empty()) throw InvalidInput("scored set is empty");
  if (scores.size() != labels.size()) throw InvalidInput("scores and labels differ in length");
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("score outside [0, 1]");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidInput("label outside {0, 1}");
  }
}

const std::vector<std::string>& MetricBlock::names() {
  static const std::vector<std::string> kNames = {
      "ece", "brier", "acc", "f1", "precision", "recall", "specificity",
      "aucpr", "auroc", "youden_threshold"};
  return kNames;
}

double& MetricBlock::at(const std::string& name) {
  if (name == "ece") return ece;
  if (name == "brier") return brier;
  if (name == "acc") return acc;
  if (name == "f1") return f1;
  if (name == "precision") return precision;
  if (name == "recall") return recall;
  if (name == "specificity") return specificity;
  if (name == "aucpr") return aucpr;
  if (name == "auroc") return auroc;
  if (name == "youden_threshold") return youden_threshold;
  throw InvalidInput("unknown metric '" + name + "'");
}

double MetricBlock::get(const std::string& name) const {
  return const_cast<MetricBlock*>(this)->at(name);
}

bool MetricBlock::lower_is_better(const std::string& name) {
  return name == "ece" || name == "brier";
}

nlohmann::json MetricBlock::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& n : names()) j[n] = get(n);
  return j;
}

MetricBlock MetricBlock::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("metric block must be an object");
  MetricBlock m;
  for (const auto& n : names()) {
    auto it = j.find(n);
    if (it == j.end() || !it->is_number()) throw SchemaError("metric block missing '" + n + "'");
    m.at(n) = it->get<double>();
  }
  return m;
}

std::size_t calibration_bin(double score, std::size_t bins) {
  if (bins == 0) throw InvalidInput("bins must be >= 1");
  const double b = static_cast<double>(bins);
  auto edge = [b](std::size_t j) { return static_cast<double>(j) / b; };
  long idx = static_cast<long>(std::ceil(score * b)) - 1;
  idx = std::clamp(idx, 0L, static_cast<long>(bins) - 1);
  // Repair floating-point drift so that membership follows the exact edges.
  while (idx > 0 && score <= edge(static_cast<std::size_t>(idx))) --idx;
  while (idx + 1 < static_cast<long>(bins) && score > edge(static_cast<std::size_t>(idx) + 1)) ++idx;
  return static_cast<std::size_t>(idx);
}

std::vector<CalibrationBin> calibration_bins(const ScoredSet& set, std::size_t bins) {
  set.validate();
  if (bins == 0) throw InvalidInput("bins must be >= 1");
  std::vector<double> conf(bins, 0.0), hits(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::size_t j = calibration_bin(set.scores[i], bins);
    conf[j] += set.scores[i];
    hits[j] += set.labels[i];
    ++count[j];
  }
  std::vector<CalibrationBin> out(bins);
  for (std::size_t j = 0; j < bins; ++j) {
    out[j].count = count[j];
    if (count[j] > 0) {
      out[j].confidence_mean = conf[j] / static_cast<double>(count[j]);
      out[j].accuracy = hits[j] / static_cast<double>(count[j]);
    }
  }
  return out;
}

double ece_from_bins(std::span<const CalibrationBin> bins, std::size_t n) {
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += (static_cast<double>(b.count) / static_cast<double>(n)) *
             std::abs(b.confidence_mean - b.accuracy);
  }
  return total;
}

double ece(const ScoredSet& set, std::size_t bins) {
  const auto stats = calibration_bins(set, bins);
  return ece_from_bins(stats, set.size());
}

double brier(const ScoredSet& set) {
  set.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = set.scores[i] - set.labels[i];
    total += d * d;
  }
  return total / static_cast<double>(set.size());
}

namespace {

std::vector<std::size_t> order_descending(const ScoredSet& set) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
  return idx;
}

}  // namespace

double auroc(const ScoredSet& set) {
  set.validate();
  const std::size_t pos = set.positives();
  const std::size_t neg = set.negatives();
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUROC requires both classes");
  // Count, for each tie group in descending order, the negatives strictly
  // below the group; concordant pairs are pos_in_group * neg_below plus half
  // of pos_in_group * neg_in_group.
  const auto idx = order_descending(set);
  double concordant = 0.0;
  std::size_t neg_seen = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    std::size_t p = 0, q = 0;
    while (j < idx.size() && set.scores[idx[j]] == set.scores[idx[i]]) {
      (set.labels[idx[j]] == 1 ? p : q) += 1;
      ++j;
    }
    const std::size_t neg_below = neg - neg_seen - q;
    concordant += static_cast<double>(p) * static_cast<double>(neg_below) +
                  0.5 * static_cast<double>(p) * static_cast<double>(q);
    neg_seen += q;
    i = j;
  }
  return concordant / (static_cast<double>(pos) * static_cast<double>(neg));
}

double aucpr(const ScoredSet& set) {
  set.validate();
  const std::size_t pos = set.positives();
  if (pos == 0) throw UndefinedMetric("AUCPR requires at least one positive");
  const auto idx = order_descending(set);
  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && set.scores[idx[j]] == set.scores[idx[i]]) {
      (set.labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

ConfusionCounts confusion_at(const ScoredSet& set, double threshold) {
  set.validate();
  ConfusionCounts c;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool predicted = set.scores[i] >= threshold;
    if (set.labels[i] == 1) (predicted ? c.tp : c.fn) += 1;
    else (predicted ? c.fp : c.tn) += 1;
  }
  return c;
}

ThresholdMetrics threshold_metrics(const ConfusionCounts& c) {
  ThresholdMetrics m;
  auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    if (den == 0) {
      undefined = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  const std::size_t n = c.tp + c.fp + c.tn + c.fn;
  bool acc_undefined = false;
  m.acc = ratio(c.tp + c.tn, n, acc_undefined);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_undefined);
  m.recall = ratio(c.tp, c.tp + c.fn, m.recall_undefined);
  m.specificity = ratio(c.tn, c.tn + c.fp, m.specificity_undefined);
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.f1 = 0.0;
    m.f1_undefined = true;
  }
  return m;
}

ThresholdMetrics threshold_metrics(const ScoredSet& set, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0 + 1e-6)) {
    throw InvalidInput("threshold outside [0, 1]");
  }
  return threshold_metrics(confusion_at(set, threshold));
}

double youden_threshold(const ScoredSet& set) {
  set.validate();
  const std::size_t pos = set.positives();
  const std::size_t neg = set.negatives();
  if (pos == 0 || neg == 0) throw UndefinedMetric("Youden's J requires both classes");
  std::vector<double> candidates = set.scores;
  candidates.push_back(0.0);
  candidates.push_back(1.0 + 1e-9);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Sweep ascending thresholds; predicted positives are scores >= t.
  const auto idx = order_descending(set);
  std::vector<std::size_t> asc(idx.rbegin(), idx.rend());
  std::size_t k = 0;  // number of samples with score < current threshold
  std::size_t tp_below = 0, fp_below = 0;
  double best_t = candidates.front();
  double best_j = -2.0;
  for (double t : candidates) {
    while (k < asc.size() && set.scores[asc[k]] < t) {
      (set.labels[asc[k]] == 1 ? tp_below : fp_below) += 1;
      ++k;
    }
    const double tpr = static_cast<double>(pos - tp_below) / static_cast<double>(pos);
    const double fpr = static_cast<double>(neg - fp_below) / static_cast<double>(neg);
    const double j = tpr - fpr;
    if (j > best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

double composite_score(double auroc_value, double ece_value, double alpha) {
  return alpha * auroc_value + (1.0 - alpha) * (1.0 - ece_value);
}

MetricBlock evaluate(const ScoredSet& set, std::optional<double> threshold, std::size_t bins) {
  MetricBlock m;
  m.ece = ece(set, bins);
  m.brier = brier(set);
  m.auroc = auroc(set);
  m.aucpr = aucpr(set);
  m.youden_threshold = threshold ? *threshold : youden_threshold(set);
  const auto t = threshold_metrics(confusion_at(set, m.youden_threshold));
  m.acc = t.acc;
  m.f1 = t.f1;
  m.precision = t.precision;
  m.recall = t.recall;
  m.specificity = t.specificity;
  return m;
}

}  // namespace tracecal

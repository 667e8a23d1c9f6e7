#pragma once

// Brute-force reference implementations, written independently of the
// library: pairwise enumeration, exhaustive threshold sweeps, direct binning.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "tracecal/logit_features.hpp"
#include "tracecal/random.hpp"

namespace tracecal::oracle {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Both classes present; scores drawn from a small grid so ties are common,
// with the exact bin edges 0, 0.1, ..., 1 included.
inline Instance random_instance(Rng& rng, std::size_t max_n = 50) {
  Instance in;
  const std::size_t n = 2 + rng.uniform_index(max_n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mode = rng.uniform_index(3);
    double s = 0;
    if (mode == 0) s = static_cast<double>(rng.uniform_index(11)) / 10.0;
    else if (mode == 1) s = static_cast<double>(rng.uniform_index(21)) / 20.0;
    else s = rng.uniform();
    in.scores.push_back(s);
    in.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

inline double auroc(const Instance& in) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < in.scores.size(); ++i) {
    if (in.labels[i] != 1) continue;
    for (std::size_t j = 0; j < in.scores.size(); ++j) {
      if (in.labels[j] != 0) continue;
      pairs += 1;
      if (in.scores[i] > in.scores[j]) num += 1;
      else if (in.scores[i] == in.scores[j]) num += 0.5;
    }
  }
  return num / pairs;
}

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts counts_at(const Instance& in, double t) {
  Counts c;
  for (std::size_t i = 0; i < in.scores.size(); ++i) {
    const bool pred = in.scores[i] >= t;
    if (in.labels[i] == 1) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

// Average precision: sum over distinct thresholds (descending) of the recall
// increment times the precision at that threshold.
inline double aucpr(const Instance& in) {
  std::set<double, std::greater<>> thresholds(in.scores.begin(), in.scores.end());
  double prev_recall = 0, area = 0;
  double positives = 0;
  for (int l : in.labels) positives += l;
  for (double t : thresholds) {
    const Counts c = counts_at(in, t);
    const double recall = c.tp / positives;
    const double precision = c.tp / (c.tp + c.fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

inline double brier(const Instance& in) {
  double s = 0;
  for (std::size_t i = 0; i < in.scores.size(); ++i) s += std::pow(in.scores[i] - in.labels[i], 2);
  return s / static_cast<double>(in.scores.size());
}

// Bin j holds scores in (j/b, (j+1)/b]; 0 joins bin 0. Membership is decided
// by comparisons against exact edges.
inline std::size_t bin_of(double s, std::size_t bins) {
  for (std::size_t j = 0; j < bins; ++j) {
    const double hi = static_cast<double>(j + 1) / static_cast<double>(bins);
    if (s <= hi) return j;
  }
  return bins - 1;
}

inline double ece(const Instance& in, std::size_t bins = 10) {
  double total = 0;
  const double n = static_cast<double>(in.scores.size());
  for (std::size_t j = 0; j < bins; ++j) {
    double conf = 0, acc = 0, count = 0;
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
      if (bin_of(in.scores[i], bins) != j) continue;
      conf += in.scores[i];
      acc += in.labels[i];
      count += 1;
    }
    if (count > 0) total += (count / n) * std::abs(conf / count - acc / count);
  }
  return total;
}

struct Rates {
  double acc = 0, precision = 0, recall = 0, specificity = 0, f1 = 0;
};

inline Rates rates(const Counts& c) {
  Rates r;
  r.acc = (c.tp + c.tn) / (c.tp + c.tn + c.fp + c.fn);
  r.precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0;
  r.recall = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0;
  r.specificity = c.tn + c.fp > 0 ? c.tn / (c.tn + c.fp) : 0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0;
  return r;
}

// Youden's J over the candidate set {observed scores, 0, 1 + 1e-9}; the
// smallest threshold wins ties.
inline double youden(const Instance& in) {
  std::set<double> cands(in.scores.begin(), in.scores.end());
  cands.insert(0.0);
  cands.insert(1.0 + 1e-9);
  double best_j = -2, best_t = 0;
  for (double t : cands) {
    const Counts c = counts_at(in, t);
    const double j = c.tp / (c.tp + c.fn) - c.fp / (c.fp + c.tn);
    if (j > best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

// Direct formulas in long double.
inline TokenFeatureVector token_features(const std::vector<double>& logits, std::size_t k = 5) {
  std::vector<long double> z(logits.begin(), logits.end());
  std::sort(z.begin(), z.end(), std::greater<>());
  long double den = 0;
  for (auto v : z) den += std::exp(v - z[0]);
  std::vector<long double> p;
  for (auto v : z) p.push_back(std::exp(v - z[0]) / den);
  long double h = 0, l2 = 0, topk = 0, mean = 0, var = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) h -= p[i] * std::log(p[i]);
    l2 += p[i] * p[i];
    if (i < k) topk += p[i];
    mean += z[i];
  }
  mean /= static_cast<long double>(z.size());
  for (auto v : z) var += (v - mean) * (v - mean);
  var /= static_cast<long double>(z.size());
  TokenFeatureVector f;
  f.top1_prob = static_cast<double>(p[0]);
  f.log_top1_prob = static_cast<double>(std::log(p[0]));
  f.logit_margin = static_cast<double>(z[0] - z[1]);
  f.prob_gap = static_cast<double>(p[0] - p[1]);
  f.entropy = static_cast<double>(h);
  f.norm_entropy = static_cast<double>(h / std::log(static_cast<long double>(z.size())));
  f.topk_mass = static_cast<double>(std::min<long double>(topk, 1));
  f.tail_mass = static_cast<double>(1 - std::min<long double>(topk, 1));
  f.l2_concentration = static_cast<double>(l2);
  f.logit_std = static_cast<double>(std::sqrt(var));
  return f;
}

}  // namespace tracecal::oracle

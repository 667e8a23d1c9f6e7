#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/nn/autograd.hpp"
#include "tracecal/random.hpp"

namespace tracecal {

// Small non-neural classifiers over fixed-length feature rows.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string family() const = 0;
  virtual void fit(const nn::Matrix& X, std::span<const int> y, Rng& rng) = 0;
  virtual double predict_proba(const nn::RowVector& x) const = 0;
  virtual nlohmann::json state() const = 0;
  const std::vector<std::string>& warnings() const { return warnings_; }

 protected:
  std::vector<std::string> warnings_;
};

// Families: logreg, dt, rf, knn, xgb. `options` overrides the defaults
// (logreg C=1; dt unlimited depth; rf 100 trees with sqrt features; knn k=5;
// xgb 100 rounds, depth 6, eta 0.3, lambda 1).
std::unique_ptr<Classifier> make_classifier(const std::string& family,
                                            const nlohmann::json& options = nlohmann::json::object());
std::unique_ptr<Classifier> classifier_from_state(const nlohmann::json& state);

const std::vector<std::string>& classifier_families();

// Binary decision tree with threshold splits (x[feature] <= threshold goes
// left). Leaves hold a value: a probability for CART, a margin for boosting.
struct DecisionTreeModel {
  std::vector<int> feature, left, right;
  std::vector<double> threshold, value;

  double predict(const nn::RowVector& x) const;
  std::size_t num_nodes() const { return value.size(); }
  nlohmann::json to_json() const;
  static DecisionTreeModel from_json(const nlohmann::json& j);
};

}  // namespace tracecal

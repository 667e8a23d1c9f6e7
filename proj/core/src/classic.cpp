#include "tracecal/classic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;
using nn::Matrix;
using nn::RowVector;

double DecisionTreeModel::predict(const RowVector& x) const {
  if (value.empty()) throw ScoringError("tree is not fitted");
  int node = 0;
  while (left[static_cast<std::size_t>(node)] >= 0) {
    const auto k = static_cast<std::size_t>(node);
    node = x(feature[k]) <= threshold[k] ? left[k] : right[k];
  }
  return value[static_cast<std::size_t>(node)];
}

json DecisionTreeModel::to_json() const {
  return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}};
}

DecisionTreeModel DecisionTreeModel::from_json(const json& j) {
  DecisionTreeModel t;
  t.feature = j.at("feature").get<std::vector<int>>();
  t.threshold = j.at("threshold").get<std::vector<double>>();
  t.left = j.at("left").get<std::vector<int>>();
  t.right = j.at("right").get<std::vector<int>>();
  t.value = j.at("value").get<std::vector<double>>();
  const std::size_t n = t.value.size();
  if (t.feature.size() != n || t.threshold.size() != n || t.left.size() != n || t.right.size() != n) {
    throw SchemaError("tree arrays differ in length");
  }
  return t;
}

namespace {

bool all_rows_equal(const Matrix& X) {
  for (Eigen::Index r = 1; r < X.rows(); ++r) {
    if (X.row(r) != X.row(0)) return false;
  }
  return true;
}

void check_fit_input(const Matrix& X, std::span<const int> y) {
  if (X.rows() == 0) throw TrainingError("classifier: empty training set");
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw InvalidInput("classifier: rows != labels");
  for (int v : y) {
    if (v != 0 && v != 1) throw InvalidInput("classifier: labels must be 0 or 1");
  }
}

// CART with Gini impurity over a subset of rows.
class CartBuilder {
 public:
  CartBuilder(const Matrix& X, std::span<const int> y, std::size_t max_features, int max_depth,
              std::size_t min_samples_split, Rng* rng)
      : X_(X), y_(y), max_features_(max_features), max_depth_(max_depth),
        min_split_(min_samples_split), rng_(rng) {}

  DecisionTreeModel build(std::vector<std::size_t> rows) {
    tree_ = {};
    grow(std::move(rows), 0);
    return tree_;
  }

 private:
  int new_node(double value) {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(value);
    return static_cast<int>(tree_.value.size() - 1);
  }

  int grow(std::vector<std::size_t> rows, int depth) {
    double pos = 0;
    for (std::size_t r : rows) pos += y_[r];
    const double n = static_cast<double>(rows.size());
    const int node = new_node(pos / n);
    if (pos == 0 || pos == n || rows.size() < min_split_ || (max_depth_ >= 0 && depth >= max_depth_)) {
      return node;
    }
    const double parent_gini = 1.0 - (pos / n) * (pos / n) - (1 - pos / n) * (1 - pos / n);

    std::vector<Eigen::Index> features(static_cast<std::size_t>(X_.cols()));
    std::iota(features.begin(), features.end(), Eigen::Index{0});
    if (rng_ && max_features_ < features.size()) {
      rng_->shuffle(features);
      features.resize(max_features_);
      std::sort(features.begin(), features.end());
    }

    double best_gain = 1e-12;
    Eigen::Index best_feature = -1;
    double best_threshold = 0;
    std::vector<std::size_t> sorted = rows;
    for (Eigen::Index f : features) {
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return X_(static_cast<Eigen::Index>(a), f) < X_(static_cast<Eigen::Index>(b), f); });
      double left_pos = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left_pos += y_[sorted[i]];
        const double xa = X_(static_cast<Eigen::Index>(sorted[i]), f);
        const double xb = X_(static_cast<Eigen::Index>(sorted[i + 1]), f);
        if (xa == xb) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        const double pl = left_pos / nl, pr = (pos - left_pos) / nr;
        const double gini = (nl / n) * (1 - pl * pl - (1 - pl) * (1 - pl)) +
                            (nr / n) * (1 - pr * pr - (1 - pr) * (1 - pr));
        const double gain = parent_gini - gini;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = xa + (xb - xa) / 2;
          if (best_threshold >= xb) best_threshold = xa;
        }
      }
    }
    if (best_feature < 0) return node;
    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) {
      (X_(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? lrows : rrows).push_back(r);
    }
    const auto k = static_cast<std::size_t>(node);
    tree_.feature[k] = static_cast<int>(best_feature);
    tree_.threshold[k] = best_threshold;
    const int l = grow(std::move(lrows), depth + 1);
    tree_.left[k] = l;
    const int r = grow(std::move(rrows), depth + 1);
    tree_.right[k] = r;
    return node;
  }

  const Matrix& X_;
  std::span<const int> y_;
  std::size_t max_features_;
  int max_depth_;
  std::size_t min_split_;
  Rng* rng_;
  DecisionTreeModel tree_;
};

class LogisticRegression final : public Classifier {
 public:
  explicit LogisticRegression(const json& o) : c_(o.value("C", 1.0)), max_iter_(o.value("max_iter", 100)) {
    if (c_ <= 0) throw ConfigError("logreg C must be positive");
  }
  std::string family() const override { return "logreg"; }

  void fit(const Matrix& X, std::span<const int> y, Rng&) override {
    check_fit_input(X, y);
    const Eigen::Index n = X.rows(), d = X.cols();
    Matrix A(n, d + 1);
    A.leftCols(d) = X;
    A.col(d).setOnes();
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = y[static_cast<std::size_t>(i)];
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
    Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, 1.0 / c_);
    reg(d) = 0.0;
    for (int it = 0; it < max_iter_; ++it) {
      const Eigen::VectorXd z = A * beta;
      Eigen::VectorXd p(n), w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        p(i) = 1.0 / (1.0 + std::exp(-z(i)));
        w(i) = std::max(p(i) * (1 - p(i)), 1e-12);
      }
      const Eigen::VectorXd grad = A.transpose() * (p - t) + reg.cwiseProduct(beta);
      Matrix H = A.transpose() * w.asDiagonal() * A;
      H.diagonal() += reg;
      H.diagonal().array() += 1e-10;
      const Eigen::VectorXd step = H.ldlt().solve(grad);
      beta -= step;
      if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
    }
    weights_.assign(beta.data(), beta.data() + d);
    intercept_ = beta(d);
  }

  double predict_proba(const RowVector& x) const override {
    if (static_cast<std::size_t>(x.size()) != weights_.size()) throw ScoringError("logreg: feature size mismatch");
    double z = intercept_;
    for (std::size_t k = 0; k < weights_.size(); ++k) z += weights_[k] * x(static_cast<Eigen::Index>(k));
    return 1.0 / (1.0 + std::exp(-z));
  }

  json state() const override {
    return {{"family", "logreg"}, {"C", c_}, {"max_iter", max_iter_}, {"weights", weights_}, {"intercept", intercept_}};
  }
  void load(const json& s) {
    weights_ = s.at("weights").get<std::vector<double>>();
    intercept_ = s.at("intercept").get<double>();
  }

 private:
  double c_;
  int max_iter_;
  std::vector<double> weights_;
  double intercept_ = 0;
};

class DecisionTree final : public Classifier {
 public:
  explicit DecisionTree(const json& o) : max_depth_(o.value("max_depth", -1)) {}
  std::string family() const override { return "dt"; }
  void fit(const Matrix& X, std::span<const int> y, Rng&) override {
    check_fit_input(X, y);
    if (all_rows_equal(X)) warnings_.push_back("dt: constant features, predicting the base rate");
    std::vector<std::size_t> rows(static_cast<std::size_t>(X.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    tree_ = CartBuilder(X, y, static_cast<std::size_t>(X.cols()), max_depth_, 2, nullptr).build(rows);
  }
  double predict_proba(const RowVector& x) const override { return tree_.predict(x); }
  json state() const override { return {{"family", "dt"}, {"max_depth", max_depth_}, {"tree", tree_.to_json()}}; }
  void load(const json& s) { tree_ = DecisionTreeModel::from_json(s.at("tree")); }

 private:
  int max_depth_;
  DecisionTreeModel tree_;
};

class RandomForest final : public Classifier {
 public:
  explicit RandomForest(const json& o)
      : n_trees_(o.value("n_estimators", 100)), max_depth_(o.value("max_depth", -1)) {
    if (n_trees_ < 1) throw ConfigError("rf n_estimators must be positive");
  }
  std::string family() const override { return "rf"; }
  void fit(const Matrix& X, std::span<const int> y, Rng& rng) override {
    check_fit_input(X, y);
    if (all_rows_equal(X)) warnings_.push_back("rf: constant features, predicting the base rate");
    const auto n = static_cast<std::size_t>(X.rows());
    const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(X.cols()))));
    trees_.clear();
    for (int t = 0; t < n_trees_; ++t) {
      Rng tree_rng = rng.split(static_cast<std::uint64_t>(t) + 1);
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = static_cast<std::size_t>(tree_rng.uniform_index(n));
      trees_.push_back(CartBuilder(X, y, m, max_depth_, 2, &tree_rng).build(rows));
    }
  }
  double predict_proba(const RowVector& x) const override {
    if (trees_.empty()) throw ScoringError("rf is not fitted");
    double s = 0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }
  json state() const override {
    json trees = json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return {{"family", "rf"}, {"n_estimators", n_trees_}, {"max_depth", max_depth_}, {"trees", trees}};
  }
  void load(const json& s) {
    trees_.clear();
    for (const auto& t : s.at("trees")) trees_.push_back(DecisionTreeModel::from_json(t));
  }

 private:
  int n_trees_;
  int max_depth_;
  std::vector<DecisionTreeModel> trees_;
};

class Knn final : public Classifier {
 public:
  explicit Knn(const json& o) : k_(o.value("k", 5)) {
    if (k_ < 1) throw ConfigError("knn k must be positive");
  }
  std::string family() const override { return "knn"; }
  void fit(const Matrix& X, std::span<const int> y, Rng&) override {
    check_fit_input(X, y);
    if (static_cast<Eigen::Index>(k_) > X.rows()) {
      throw ConfigError("knn k = " + std::to_string(k_) + " exceeds the " + std::to_string(X.rows()) +
                        " training rows");
    }
    X_ = X;
    y_.assign(y.begin(), y.end());
  }
  double predict_proba(const RowVector& x) const override {
    if (y_.empty()) throw ScoringError("knn is not fitted");
    if (x.size() != X_.cols()) throw ScoringError("knn: feature size mismatch");
    std::vector<std::pair<double, std::size_t>> d(y_.size());
    for (std::size_t i = 0; i < y_.size(); ++i) {
      d[i] = {(X_.row(static_cast<Eigen::Index>(i)) - x).squaredNorm(), i};
    }
    std::partial_sort(d.begin(), d.begin() + k_, d.end());
    double pos = 0;
    for (int i = 0; i < k_; ++i) pos += y_[d[static_cast<std::size_t>(i)].second];
    return pos / k_;
  }
  json state() const override {
    std::vector<double> flat(X_.data(), X_.data() + X_.size());
    return {{"family", "knn"}, {"k", k_}, {"rows", X_.rows()}, {"cols", X_.cols()}, {"X_colmajor", flat}, {"y", y_}};
  }
  void load(const json& s) {
    const auto rows = s.at("rows").get<Eigen::Index>(), cols = s.at("cols").get<Eigen::Index>();
    const auto flat = s.at("X_colmajor").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw SchemaError("knn state size mismatch");
    X_ = Eigen::Map<const Matrix>(flat.data(), rows, cols);
    y_ = s.at("y").get<std::vector<int>>();
  }

 private:
  int k_;
  Matrix X_;
  std::vector<int> y_;
};

// Second-order gradient boosting on the logistic loss.
class BoostedTrees final : public Classifier {
 public:
  explicit BoostedTrees(const json& o)
      : rounds_(o.value("n_estimators", 100)), depth_(o.value("max_depth", 6)), eta_(o.value("eta", 0.3)),
        lambda_(o.value("lambda", 1.0)), min_child_weight_(o.value("min_child_weight", 1.0)) {
    if (rounds_ < 1 || depth_ < 1 || eta_ <= 0) throw ConfigError("xgb options out of range");
  }
  std::string family() const override { return "xgb"; }

  void fit(const Matrix& X, std::span<const int> y, Rng&) override {
    check_fit_input(X, y);
    if (all_rows_equal(X)) warnings_.push_back("xgb: constant features, predicting the base rate");
    X_ = &X;
    const auto n = static_cast<std::size_t>(X.rows());
    std::vector<double> margin(n, 0.0);
    g_.assign(n, 0.0);
    h_.assign(n, 0.0);
    trees_.clear();
    for (int round = 0; round < rounds_; ++round) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-margin[i]));
        g_[i] = p - y[i];
        h_[i] = p * (1 - p);
      }
      std::vector<std::size_t> rows(n);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      tree_ = {};
      grow(rows, 0);
      for (std::size_t i = 0; i < n; ++i) margin[i] += tree_.predict(X.row(static_cast<Eigen::Index>(i)));
      trees_.push_back(std::move(tree_));
    }
    X_ = nullptr;
  }

  double predict_proba(const RowVector& x) const override {
    double m = 0;
    for (const auto& t : trees_) m += t.predict(x);
    return 1.0 / (1.0 + std::exp(-m));
  }

  json state() const override {
    json trees = json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return {{"family", "xgb"}, {"n_estimators", rounds_}, {"max_depth", depth_}, {"eta", eta_},
            {"lambda", lambda_}, {"min_child_weight", min_child_weight_}, {"trees", trees}};
  }
  void load(const json& s) {
    trees_.clear();
    for (const auto& t : s.at("trees")) trees_.push_back(DecisionTreeModel::from_json(t));
  }

 private:
  int grow(const std::vector<std::size_t>& rows, int depth) {
    double G = 0, H = 0;
    for (std::size_t r : rows) G += g_[r], H += h_[r];
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(-eta_ * G / (H + lambda_));
    const int node = static_cast<int>(tree_.value.size() - 1);
    if (depth >= depth_ || rows.size() < 2) return node;
    const double parent = G * G / (H + lambda_);
    double best_gain = 1e-12;
    Eigen::Index best_f = -1;
    double best_t = 0;
    std::vector<std::size_t> sorted = rows;
    for (Eigen::Index f = 0; f < X_->cols(); ++f) {
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        return (*X_)(static_cast<Eigen::Index>(a), f) < (*X_)(static_cast<Eigen::Index>(b), f);
      });
      double GL = 0, HL = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        GL += g_[sorted[i]];
        HL += h_[sorted[i]];
        const double xa = (*X_)(static_cast<Eigen::Index>(sorted[i]), f);
        const double xb = (*X_)(static_cast<Eigen::Index>(sorted[i + 1]), f);
        if (xa == xb) continue;
        const double GR = G - GL, HR = H - HL;
        if (HL < min_child_weight_ || HR < min_child_weight_) continue;
        const double gain = 0.5 * (GL * GL / (HL + lambda_) + GR * GR / (HR + lambda_) - parent);
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_t = xa + (xb - xa) / 2;
          if (best_t >= xb) best_t = xa;
        }
      }
    }
    if (best_f < 0) return node;
    std::vector<std::size_t> l, r;
    for (std::size_t row : rows) ((*X_)(static_cast<Eigen::Index>(row), best_f) <= best_t ? l : r).push_back(row);
    const auto k = static_cast<std::size_t>(node);
    tree_.feature[k] = static_cast<int>(best_f);
    tree_.threshold[k] = best_t;
    const int li = grow(l, depth + 1);
    tree_.left[k] = li;
    const int ri = grow(r, depth + 1);
    tree_.right[k] = ri;
    return node;
  }

  int rounds_, depth_;
  double eta_, lambda_, min_child_weight_;
  std::vector<DecisionTreeModel> trees_;
  const Matrix* X_ = nullptr;
  std::vector<double> g_, h_;
  DecisionTreeModel tree_;
};

}  // namespace

const std::vector<std::string>& classifier_families() {
  static const std::vector<std::string> f{"logreg", "rf", "dt", "knn", "xgb"};
  return f;
}

std::unique_ptr<Classifier> make_classifier(const std::string& family, const json& options) {
  const json o = options.is_object() ? options : json::object();
  if (family == "logreg") return std::make_unique<LogisticRegression>(o);
  if (family == "dt") return std::make_unique<DecisionTree>(o);
  if (family == "rf") return std::make_unique<RandomForest>(o);
  if (family == "knn") return std::make_unique<Knn>(o);
  if (family == "xgb") return std::make_unique<BoostedTrees>(o);
  throw ConfigError("unknown classifier family '" + family + "'");
}

std::unique_ptr<Classifier> classifier_from_state(const json& s) {
  const std::string family = s.at("family").get<std::string>();
  auto c = make_classifier(family, s);
  if (family == "logreg") static_cast<LogisticRegression&>(*c).load(s);
  else if (family == "dt") static_cast<DecisionTree&>(*c).load(s);
  else if (family == "rf") static_cast<RandomForest&>(*c).load(s);
  else if (family == "knn") static_cast<Knn&>(*c).load(s);
  else static_cast<BoostedTrees&>(*c).load(s);
  return c;
}

}  // namespace tracecal

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tracecal {
class Rng;
}

namespace tracecal::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// A node in the reverse-mode tape. `backward` reads `grad` and accumulates
// into the parents' grads.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& ensure_grad();
};

// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool defined() const { return node_ != nullptr; }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

  // Internal: creates an op result wired to `parents`.
  static Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Runs backpropagation from a 1x1 output.
void backward(const Var& output);

Var constant(Matrix value);
Var parameter(Matrix value);

// Arithmetic
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a (n x k) + b (1 x k) broadcast over rows
Var add_row(const Var& a, const Var& row);
// a (n x k) * s (n x 1) broadcast over columns
Var mul_col(const Var& a, const Var& col);
Var transpose(const Var& a);

// Activations
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

// Shape
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
// Row t of the result is row t + offset of `a`, or zero when out of range.
Var shift_rows(const Var& a, Eigen::Index offset);

// Reductions
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var sum_rows(const Var& a);   // n x k -> 1 x k
Var mean_rows(const Var& a);  // n x k -> 1 x k
Var max_rows(const Var& a);   // n x k -> 1 x k, column-wise max
Var sum_cols(const Var& a);   // n x k -> n x 1

// Index ops for message passing
Var gather_rows(const Var& a, std::span<const int> index);
// out[index[e]] += a[e]; result has `n` rows.
Var scatter_add_rows(const Var& a, std::span<const int> index, Eigen::Index n);
// Column-wise max of rows sharing a segment id; empty segments give zeros.
Var segment_max(const Var& a, std::span<const int> segment, Eigen::Index n);
// Softmax of an (m x 1) score vector within each segment.
Var segment_softmax(const Var& scores, std::span<const int> segment, Eigen::Index n);
// Row-wise softmax; entries where `mask` is false get probability 0.
// Rows with no allowed entry produce zeros.
Var masked_softmax_rows(const Var& a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);

// Per-row vector-matrix product: out[e, k] = sum_a x[e, a] * t[e, a * out + k]
// where each row of t is a row-major (in x out) matrix.
Var rowwise_matvec(const Var& x, const Var& t, Eigen::Index out);

// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& a, double p, bool training, Rng& rng);

// Weighted mean of binary cross-entropy with logits:
//   sum_i w_i * (softplus(z_i) - y_i * z_i) / n
// `logits` is n x 1.
Var bce_with_logits(const Var& logits, std::span<const double> targets,
                    std::span<const double> weights = {});

}  // namespace tracecal::nn

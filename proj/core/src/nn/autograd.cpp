#include "tracecal/nn/autograd.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "tracecal/error.hpp"
#include "tracecal/random.hpp"

namespace tracecal::nn {

namespace {

thread_local bool g_grad_enabled = true;

void accumulate(const std::shared_ptr<Node>& parent, const Matrix& delta) {
  if (parent->requires_grad) parent->ensure_grad() += delta;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Matrix& Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw InvalidInput("item() on a non-scalar");
  return node_->value(0, 0);
}

void Var::zero_grad() {
  if (node_) node_->grad.setZero(node_->value.rows(), node_->value.cols());
}

Var Var::make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward_fn);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& output) {
  if (output.rows() != 1 || output.cols() != 1) throw InvalidInput("backward: output must be 1x1");
  if (!output.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.contains(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  output.node()->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var parameter(Matrix value) { return Var(std::move(value), true); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  return Var::make(a.value() * b.value(), {a, b}, [](Node& n) {
    const auto& A = n.parents[0];
    const auto& B = n.parents[1];
    if (A->requires_grad) A->ensure_grad().noalias() += n.grad * B->value.transpose();
    if (B->requires_grad) B->ensure_grad().noalias() += A->value.transpose() * n.grad;
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return Var::make(a.value() + b.value(), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return Var::make(a.value() - b.value(), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], -n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return Var::make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(n.parents[1]->value));
    accumulate(n.parents[1], n.grad.cwiseProduct(n.parents[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return Var::make(a.value() * s, {a}, [s](Node& n) { accumulate(n.parents[0], n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return Var::make(a.value().array() + s, {a},
                   [](Node& n) { accumulate(n.parents[0], n.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("add_row: shape mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return Var::make(std::move(v), {a, row}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw InvalidInput("mul_col: shape mismatch");
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return Var::make(std::move(v), {a, col}, [](Node& n) {
    const auto& A = n.parents[0];
    const auto& C = n.parents[1];
    if (A->requires_grad) {
      A->ensure_grad().array() += n.grad.array().colwise() * C->value.col(0).array();
    }
    if (C->requires_grad) {
      C->ensure_grad() += n.grad.cwiseProduct(A->value).rowwise().sum();
    }
  });
}

Var transpose(const Var& a) {
  return Var::make(a.value().transpose(), {a},
                   [](Node& n) { accumulate(n.parents[0], n.grad.transpose()); });
}

Var relu(const Var& a) {
  return Var::make(a.value().cwiseMax(0.0), {a}, [](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) {
      A->ensure_grad().array() += (A->value.array() > 0.0).cast<double>() * n.grad.array();
    }
  });
}

Var leaky_relu(const Var& a, double slope) {
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return Var::make(std::move(v), {a}, [slope](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) {
      A->ensure_grad().array() +=
          A->value.array().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; }) *
          n.grad.array();
    }
  });
}

Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh().matrix();
  return Var::make(v, {a}, [](Node& n) {
    accumulate(n.parents[0], (n.grad.array() * (1.0 - n.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return Var::make(std::move(v), {a}, [](Node& n) {
    accumulate(n.parents[0],
               (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw InvalidInput("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    offsets.push_back(c);
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return Var::make(std::move(v), std::vector<Var>(parts.begin(), parts.end()),
                   [offsets](Node& n) {
                     for (std::size_t i = 0; i < n.parents.size(); ++i) {
                       const auto& P = n.parents[i];
                       if (P->requires_grad) {
                         P->ensure_grad() += n.grad.middleCols(offsets[i], P->value.cols());
                       }
                     }
                   });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InvalidInput("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return Var::make(std::move(v), std::vector<Var>(parts.begin(), parts.end()),
                   [offsets](Node& n) {
                     for (std::size_t i = 0; i < n.parents.size(); ++i) {
                       const auto& P = n.parents[i];
                       if (P->requires_grad) {
                         P->ensure_grad() += n.grad.middleRows(offsets[i], P->value.rows());
                       }
                     }
                   });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw InvalidInput("slice_rows: out of range");
  return Var::make(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) A->ensure_grad().middleRows(start, count) += n.grad;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidInput("slice_cols: out of range");
  return Var::make(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) A->ensure_grad().middleCols(start, count) += n.grad;
  });
}

Var shift_rows(const Var& a, Eigen::Index offset) {
  const Eigen::Index L = a.rows();
  Matrix v = Matrix::Zero(L, a.cols());
  for (Eigen::Index t = 0; t < L; ++t) {
    const Eigen::Index s = t + offset;
    if (s >= 0 && s < L) v.row(t) = a.value().row(s);
  }
  return Var::make(std::move(v), {a}, [offset, L](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    Matrix& g = A->ensure_grad();
    for (Eigen::Index t = 0; t < L; ++t) {
      const Eigen::Index s = t + offset;
      if (s >= 0 && s < L) g.row(s) += n.grad.row(t);
    }
  });
}

Var sum_all(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return Var::make(std::move(v), {a}, [](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) A->ensure_grad().array() += n.grad(0, 0);
  });
}

Var mean_all(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw InvalidInput("mean_all: empty input");
  return scale(sum_all(a), 1.0 / count);
}

Var sum_rows(const Var& a) {
  return Var::make(a.value().colwise().sum(), {a}, [](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) A->ensure_grad().rowwise() += n.grad.row(0);
  });
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw InvalidInput("mean_rows: no rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var max_rows(const Var& a) {
  if (a.rows() == 0) throw InvalidInput("max_rows: no rows");
  const Eigen::Index k = a.cols();
  Matrix v(1, k);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index r;
    v(0, c) = a.value().col(c).maxCoeff(&r);
    arg[static_cast<std::size_t>(c)] = r;
  }
  return Var::make(std::move(v), {a}, [arg](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    Matrix& g = A->ensure_grad();
    for (std::size_t c = 0; c < arg.size(); ++c) {
      g(arg[c], static_cast<Eigen::Index>(c)) += n.grad(0, static_cast<Eigen::Index>(c));
    }
  });
}

Var sum_cols(const Var& a) {
  return Var::make(a.value().rowwise().sum(), {a}, [](Node& n) {
    const auto& A = n.parents[0];
    if (A->requires_grad) A->ensure_grad().colwise() += n.grad.col(0);
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  const Eigen::Index m = static_cast<Eigen::Index>(index.size());
  Matrix v(m, a.cols());
  for (Eigen::Index e = 0; e < m; ++e) {
    const int r = index[static_cast<std::size_t>(e)];
    if (r < 0 || r >= a.rows()) throw InvalidInput("gather_rows: index out of range");
    v.row(e) = a.value().row(r);
  }
  std::vector<int> idx(index.begin(), index.end());
  return Var::make(std::move(v), {a}, [idx](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    Matrix& g = A->ensure_grad();
    for (std::size_t e = 0; e < idx.size(); ++e) g.row(idx[e]) += n.grad.row(static_cast<Eigen::Index>(e));
  });
}

Var scatter_add_rows(const Var& a, std::span<const int> index, Eigen::Index n_out) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw InvalidInput("scatter_add_rows: index length != rows");
  }
  Matrix v = Matrix::Zero(n_out, a.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    const int r = index[e];
    if (r < 0 || r >= n_out) throw InvalidInput("scatter_add_rows: index out of range");
    v.row(r) += a.value().row(static_cast<Eigen::Index>(e));
  }
  std::vector<int> idx(index.begin(), index.end());
  return Var::make(std::move(v), {a}, [idx](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    Matrix& g = A->ensure_grad();
    for (std::size_t e = 0; e < idx.size(); ++e) g.row(static_cast<Eigen::Index>(e)) += n.grad.row(idx[e]);
  });
}

Var segment_max(const Var& a, std::span<const int> segment, Eigen::Index n_out) {
  if (static_cast<Eigen::Index>(segment.size()) != a.rows()) {
    throw InvalidInput("segment_max: segment length != rows");
  }
  const Eigen::Index k = a.cols();
  Matrix v = Matrix::Zero(n_out, k);
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> arg =
      Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_out, k, -1);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    const int s = segment[e];
    if (s < 0 || s >= n_out) throw InvalidInput("segment_max: segment out of range");
    for (Eigen::Index c = 0; c < k; ++c) {
      const double x = a.value()(static_cast<Eigen::Index>(e), c);
      if (arg(s, c) < 0 || x > v(s, c)) {
        v(s, c) = x;
        arg(s, c) = static_cast<Eigen::Index>(e);
      }
    }
  }
  return Var::make(std::move(v), {a}, [arg](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    Matrix& g = A->ensure_grad();
    for (Eigen::Index s = 0; s < arg.rows(); ++s) {
      for (Eigen::Index c = 0; c < arg.cols(); ++c) {
        if (arg(s, c) >= 0) g(arg(s, c), c) += n.grad(s, c);
      }
    }
  });
}

Var segment_softmax(const Var& scores, std::span<const int> segment, Eigen::Index n_out) {
  if (scores.cols() != 1 || static_cast<Eigen::Index>(segment.size()) != scores.rows()) {
    throw InvalidInput("segment_softmax: expects m x 1 scores and m segment ids");
  }
  const Eigen::Index m = scores.rows();
  std::vector<double> max(static_cast<std::size_t>(n_out), -std::numeric_limits<double>::infinity());
  for (Eigen::Index e = 0; e < m; ++e) {
    const int s = segment[static_cast<std::size_t>(e)];
    if (s < 0 || s >= n_out) throw InvalidInput("segment_softmax: segment out of range");
    max[s] = std::max(max[s], scores.value()(e, 0));
  }
  std::vector<double> denom(static_cast<std::size_t>(n_out), 0.0);
  Matrix v(m, 1);
  for (Eigen::Index e = 0; e < m; ++e) {
    const int s = segment[static_cast<std::size_t>(e)];
    v(e, 0) = std::exp(scores.value()(e, 0) - max[s]);
    denom[s] += v(e, 0);
  }
  for (Eigen::Index e = 0; e < m; ++e) v(e, 0) /= denom[segment[static_cast<std::size_t>(e)]];
  std::vector<int> seg(segment.begin(), segment.end());
  return Var::make(std::move(v), {scores}, [seg, n_out](Node& n) {
    const auto& S = n.parents[0];
    if (!S->requires_grad) return;
    // d s_e = p_e * (g_e - sum_{f in seg(e)} p_f g_f)
    std::vector<double> dot(static_cast<std::size_t>(n_out), 0.0);
    for (std::size_t e = 0; e < seg.size(); ++e) {
      dot[seg[e]] += n.value(static_cast<Eigen::Index>(e), 0) * n.grad(static_cast<Eigen::Index>(e), 0);
    }
    Matrix& g = S->ensure_grad();
    for (std::size_t e = 0; e < seg.size(); ++e) {
      const auto r = static_cast<Eigen::Index>(e);
      g(r, 0) += n.value(r, 0) * (n.grad(r, 0) - dot[seg[e]]);
    }
  });
}

Var rowwise_matvec(const Var& x, const Var& t, Eigen::Index out) {
  const Eigen::Index m = x.rows(), in = x.cols();
  if (t.rows() != m || t.cols() != in * out) throw InvalidInput("rowwise_matvec: shape mismatch");
  Matrix v = Matrix::Zero(m, out);
  const Matrix& X = x.value();
  const Matrix& T = t.value();
  for (Eigen::Index e = 0; e < m; ++e) {
    for (Eigen::Index a = 0; a < in; ++a) {
      const double xa = X(e, a);
      for (Eigen::Index k = 0; k < out; ++k) v(e, k) += xa * T(e, a * out + k);
    }
  }
  return Var::make(std::move(v), {x, t}, [in, out](Node& n) {
    const auto& Xn = n.parents[0];
    const auto& Tn = n.parents[1];
    const Eigen::Index m = n.value.rows();
    if (Xn->requires_grad) {
      Matrix& g = Xn->ensure_grad();
      for (Eigen::Index e = 0; e < m; ++e)
        for (Eigen::Index a = 0; a < in; ++a)
          for (Eigen::Index k = 0; k < out; ++k) g(e, a) += n.grad(e, k) * Tn->value(e, a * out + k);
    }
    if (Tn->requires_grad) {
      Matrix& g = Tn->ensure_grad();
      for (Eigen::Index e = 0; e < m; ++e)
        for (Eigen::Index a = 0; a < in; ++a)
          for (Eigen::Index k = 0; k < out; ++k) g(e, a * out + k) += n.grad(e, k) * Xn->value(e, a);
    }
  });
}

Var masked_softmax_rows(const Var& a,
                        const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw InvalidInput("masked_softmax_rows: mask shape mismatch");
  }
  Matrix v = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (mask(r, c)) mx = std::max(mx, a.value()(r, c));
    }
    if (!std::isfinite(mx)) continue;
    double denom = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (mask(r, c)) {
        v(r, c) = std::exp(a.value()(r, c) - mx);
        denom += v(r, c);
      }
    }
    v.row(r) /= denom;
  }
  return Var::make(std::move(v), {a}, [](Node& n) {
    const auto& A = n.parents[0];
    if (!A->requires_grad) return;
    // Masked entries have p = 0 and therefore receive no gradient.
    Eigen::VectorXd dot = n.value.cwiseProduct(n.grad).rowwise().sum();
    A->ensure_grad().array() += n.value.array() * (n.grad.colwise() - dot).array();
  });
}

Var dropout(const Var& a, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw InvalidInput("dropout probability must be < 1");
  const double keep = 1.0 - p;
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Matrix v = a.value().cwiseProduct(mask);
  return Var::make(std::move(v), {a}, [mask](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(mask));
  });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets,
                    std::span<const double> weights) {
  const Eigen::Index n = logits.rows();
  if (logits.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != n) {
    throw InvalidInput("bce_with_logits: expects n x 1 logits and n targets");
  }
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n) {
    throw InvalidInput("bce_with_logits: weight count mismatch");
  }
  if (n == 0) throw InvalidInput("bce_with_logits: empty batch");
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> w = weights.empty() ? std::vector<double>(static_cast<std::size_t>(n), 1.0)
                                          : std::vector<double>(weights.begin(), weights.end());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = logits.value()(i, 0);
    // softplus(z) - y z, computed stably
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    total += w[static_cast<std::size_t>(i)] * (softplus - y[static_cast<std::size_t>(i)] * z);
  }
  Matrix v(1, 1);
  v(0, 0) = total / static_cast<double>(n);
  return Var::make(std::move(v), {logits}, [y, w](Node& node) {
    const auto& L = node.parents[0];
    if (!L->requires_grad) return;
    Matrix& g = L->ensure_grad();
    const double scale_factor = node.grad(0, 0) / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double z = L->value(static_cast<Eigen::Index>(i), 0);
      const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g(static_cast<Eigen::Index>(i), 0) += scale_factor * w[i] * (p - y[i]);
    }
  });
}

}  // namespace tracecal::nn

#include "tracecal/nn/layers.hpp"

#include <cmath>

#include "tracecal/error.hpp"
#include "tracecal/hash.hpp"
#include "tracecal/random.hpp"

namespace tracecal::nn {

namespace {

bool no_hidden(const std::vector<int>& widths) {
  return widths.empty() || (widths.size() == 1 && widths[0] == 0);
}

}  // namespace

Var ParameterList::add_uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-bound, bound);
  vars_.push_back(parameter(std::move(m)));
  return vars_.back();
}

Var ParameterList::add_zeros(Eigen::Index rows, Eigen::Index cols) {
  vars_.push_back(parameter(Matrix::Zero(rows, cols)));
  return vars_.back();
}

void ParameterList::append(const ParameterList& other) {
  vars_.insert(vars_.end(), other.vars_.begin(), other.vars_.end());
}

std::size_t ParameterList::count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParameterList::zero_grad() {
  for (auto& v : vars_) v.zero_grad();
}

std::vector<Matrix> ParameterList::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(v.value());
  return out;
}

void ParameterList::restore(const std::vector<Matrix>& values) {
  if (values.size() != vars_.size()) throw InvalidInput("restore: parameter count mismatch");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (values[i].rows() != vars_[i].rows() || values[i].cols() != vars_[i].cols()) {
      throw InvalidInput("restore: parameter shape mismatch");
    }
    vars_[i].mutable_value() = values[i];
  }
}

std::vector<double> ParameterList::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& v : vars_) {
    for (Eigen::Index i = 0; i < v.value().size(); ++i) out.push_back(v.value()(i));
  }
  return out;
}

std::string ParameterList::checksum() const {
  const auto flat = flatten();
  return sha256_hex(std::span<const double>(flat));
}

Linear::Linear(Eigen::Index in, Eigen::Index out, ParameterList& params, Rng& rng, bool bias)
    : in_(in), out_(out), has_bias_(bias) {
  if (in <= 0 || out <= 0) throw ConfigError("Linear: dimensions must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = params.add_uniform(in, out, bound, rng);
  if (bias) bias_ = params.add_uniform(1, out, bound, rng);
}

Var Linear::operator()(const Var& x) const {
  Var y = matmul(x, weight_);
  return has_bias_ ? add_row(y, bias_) : y;
}

Mlp::Mlp(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out, double dropout,
         ParameterList& params, Rng& rng)
    : in_(in), dropout_(dropout) {
  Eigen::Index prev = in;
  if (!no_hidden(hidden)) {
    for (int w : hidden) {
      if (w <= 0) throw ConfigError("Mlp: hidden widths must be positive");
      hidden_.emplace_back(prev, w, params, rng);
      prev = w;
    }
  }
  out_ = Linear(prev, out, params, rng);
}

Var Mlp::penultimate(const Var& x, bool training, Rng& rng) const {
  Var h = x;
  for (const auto& layer : hidden_) h = dropout(relu(layer(h)), dropout_, training, rng);
  return h;
}

Var Mlp::operator()(const Var& x, bool training, Rng& rng) const {
  return out_(penultimate(x, training, rng));
}

Eigen::Index Mlp::penultimate_dim() const {
  return hidden_.empty() ? in_ : hidden_.back().out_dim();
}

std::size_t Mlp::count(std::size_t in, const std::vector<int>& hidden, std::size_t out) {
  std::size_t total = 0, prev = in;
  if (!no_hidden(hidden)) {
    for (int w : hidden) {
      total += Linear::count(prev, static_cast<std::size_t>(w));
      prev = static_cast<std::size_t>(w);
    }
  }
  return total + Linear::count(prev, out);
}

FeedForward::FeedForward(Eigen::Index in, const std::vector<int>& widths, double dropout,
                         ParameterList& params, Rng& rng)
    : out_(in), dropout_(dropout) {
  if (no_hidden(widths)) return;
  Eigen::Index prev = in;
  for (int w : widths) {
    if (w <= 0) throw ConfigError("FeedForward: widths must be positive");
    layers_.emplace_back(prev, w, params, rng);
    prev = w;
  }
  out_ = prev;
}

Var FeedForward::operator()(const Var& x, bool training, Rng& rng) const {
  Var h = x;
  for (const auto& l : layers_) h = dropout(relu(l(h)), dropout_, training, rng);
  return h;
}

std::size_t FeedForward::count(std::size_t in, const std::vector<int>& widths) {
  if (no_hidden(widths)) return 0;
  std::size_t total = 0, prev = in;
  for (int w : widths) {
    total += Linear::count(prev, static_cast<std::size_t>(w));
    prev = static_cast<std::size_t>(w);
  }
  return total;
}

std::size_t FeedForward::out_dim(std::size_t in, const std::vector<int>& widths) {
  return no_hidden(widths) ? in : static_cast<std::size_t>(widths.back());
}

Conv1d::Conv1d(Eigen::Index in, Eigen::Index out, int kernel, ParameterList& params, Rng& rng)
    : kernel_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("Conv1d: kernel size must be odd");
  if (in <= 0 || out <= 0) throw ConfigError("Conv1d: channel counts must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
  for (int k = 0; k < kernel; ++k) taps_.push_back(params.add_uniform(in, out, bound, rng));
  bias_ = params.add_uniform(1, out, bound, rng);
}

Var Conv1d::operator()(const Var& x) const {
  const int half = (kernel_ - 1) / 2;
  Var acc;
  for (int k = 0; k < kernel_; ++k) {
    Var term = matmul(k == half ? x : shift_rows(x, k - half), taps_[static_cast<std::size_t>(k)]);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return add_row(acc, bias_);
}

LstmLayer::LstmLayer(Eigen::Index in, Eigen::Index hidden, ParameterList& params, Rng& rng)
    : hidden_(hidden) {
  if (in <= 0 || hidden <= 0) throw ConfigError("LSTM: dimensions must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = params.add_uniform(in, 4 * hidden, bound, rng);
  w_hh_ = params.add_uniform(hidden, 4 * hidden, bound, rng);
  bias_ = params.add_uniform(1, 4 * hidden, bound, rng);
}

Var LstmLayer::operator()(const Var& x, bool reverse, Var* last_hidden) const {
  const Eigen::Index L = x.rows();
  const Eigen::Index H = hidden_;
  Var projected = add_row(matmul(x, w_ih_), bias_);
  Var h = constant(Matrix::Zero(1, H));
  Var c = constant(Matrix::Zero(1, H));
  std::vector<Var> outputs(static_cast<std::size_t>(L));
  for (Eigen::Index step = 0; step < L; ++step) {
    const Eigen::Index t = reverse ? L - 1 - step : step;
    Var gates = add(slice_rows(projected, t, 1), matmul(h, w_hh_));
    Var i = sigmoid(slice_cols(gates, 0, H));
    Var f = sigmoid(slice_cols(gates, H, H));
    Var g = tanh(slice_cols(gates, 2 * H, H));
    Var o = sigmoid(slice_cols(gates, 3 * H, H));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  if (last_hidden) *last_hidden = h;
  return concat_rows(outputs);
}

MeanPoolEncoder::MeanPoolEncoder(Eigen::Index in, const std::vector<int>& widths, double dropout,
                                 ParameterList& params, Rng& rng)
    : ff_(in, widths, dropout, params, rng) {}

Var MeanPoolEncoder::encode(const Var& seq, bool training, Rng& rng) const {
  return ff_(mean_rows(seq), training, rng);
}

ConvEncoder::ConvEncoder(Eigen::Index in, const std::vector<int>& channels,
                         const std::vector<int>& kernels, double dropout, ParameterList& params,
                         Rng& rng)
    : dropout_(dropout) {
  if (channels.empty() || channels.size() != kernels.size()) {
    throw ConfigError("ConvEncoder: need one kernel size per conv layer");
  }
  Eigen::Index prev = in;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    layers_.emplace_back(prev, channels[l], kernels[l], params, rng);
    prev = channels[l];
  }
  out_ = prev;
}

Var ConvEncoder::encode(const Var& seq, bool training, Rng& rng) const {
  Var h = seq;
  for (const auto& conv : layers_) h = dropout(relu(conv(h)), dropout_, training, rng);
  return mean_rows(h);
}

std::size_t ConvEncoder::count(std::size_t in, const std::vector<int>& channels,
                               const std::vector<int>& kernels) {
  std::size_t total = 0, prev = in;
  for (std::size_t l = 0; l < channels.size() && l < kernels.size(); ++l) {
    total += Conv1d::count(prev, static_cast<std::size_t>(channels[l]),
                           static_cast<std::size_t>(kernels[l]));
    prev = static_cast<std::size_t>(channels[l]);
  }
  return total;
}

LstmEncoder::LstmEncoder(Eigen::Index in, int hidden, int layers, bool bidirectional,
                         double dropout, ParameterList& params, Rng& rng)
    : hidden_(hidden), bidirectional_(bidirectional), dropout_(dropout) {
  if (layers < 1) throw ConfigError("LSTM: num_layers must be >= 1");
  Eigen::Index prev = in;
  for (int l = 0; l < layers; ++l) {
    forward_.emplace_back(prev, hidden, params, rng);
    if (bidirectional) backward_.emplace_back(prev, hidden, params, rng);
    prev = hidden * (bidirectional ? 2 : 1);
  }
}

Var LstmEncoder::encode(const Var& seq, bool training, Rng& rng) const {
  Var x = seq;
  Var last_fwd, last_bwd;
  for (std::size_t l = 0; l < forward_.size(); ++l) {
    if (l > 0) x = dropout(x, dropout_, training, rng);
    Var out_f = forward_[l](x, false, &last_fwd);
    if (bidirectional_) {
      Var out_b = backward_[l](x, true, &last_bwd);
      const Var parts[] = {out_f, out_b};
      x = concat_cols(parts);
    } else {
      x = out_f;
    }
  }
  if (!bidirectional_) return last_fwd;
  const Var parts[] = {last_fwd, last_bwd};
  return concat_cols(parts);
}

std::size_t LstmEncoder::count(std::size_t in, int hidden, int layers, bool bidirectional) {
  std::size_t total = 0, prev = in;
  const std::size_t dirs = bidirectional ? 2 : 1;
  for (int l = 0; l < layers; ++l) {
    total += dirs * LstmLayer::count(prev, static_cast<std::size_t>(hidden));
    prev = static_cast<std::size_t>(hidden) * dirs;
  }
  return total;
}

Adam::Adam(const ParameterList& params, double lr, double weight_decay, double beta1,
           double beta2, double eps)
    : params_(params.vars()), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    Matrix g = p.grad().size() == p.value().size() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    if (wd_ != 0.0) g += wd_ * p.value();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace tracecal::nn

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "tracecal/nn/autograd.hpp"

namespace tracecal {
class Rng;
}

namespace tracecal::nn {

// Ordered collection of trainable tensors owned by a model.
class ParameterList {
 public:
  // Registers a tensor initialized U(-bound, bound); returns its handle.
  Var add_uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);
  Var add_zeros(Eigen::Index rows, Eigen::Index cols);
  void append(const ParameterList& other);

  const std::vector<Var>& vars() const { return vars_; }
  std::size_t count() const;
  void zero_grad();

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);
  std::vector<double> flatten() const;
  std::string checksum() const;

 private:
  std::vector<Var> vars_;
};

class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, ParameterList& params, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const;
  Eigen::Index in_dim() const { return in_; }
  Eigen::Index out_dim() const { return out_; }
  static std::size_t count(std::size_t in, std::size_t out, bool bias = true) {
    return in * out + (bias ? out : 0);
  }
  const Var& weight() const { return weight_; }

 private:
  Eigen::Index in_ = 0, out_ = 0;
  Var weight_, bias_;
  bool has_bias_ = true;
};

// Stack of Linear + ReLU + dropout blocks followed by an output Linear.
// A width list of {0} (or empty) means no hidden layers.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out, double dropout,
      ParameterList& params, Rng& rng);

  Var operator()(const Var& x, bool training, Rng& rng) const;
  // Activations entering the output layer (the input itself when there are
  // no hidden layers).
  Var penultimate(const Var& x, bool training, Rng& rng) const;
  Var output_from_penultimate(const Var& h) const { return out_(h); }

  Eigen::Index in_dim() const { return in_; }
  Eigen::Index penultimate_dim() const;
  static std::size_t count(std::size_t in, const std::vector<int>& hidden, std::size_t out);

 private:
  Eigen::Index in_ = 0;
  std::vector<Linear> hidden_;
  Linear out_;
  double dropout_ = 0.0;
};

// Hidden-layer stack without an output layer; identity when widths are {0}.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(Eigen::Index in, const std::vector<int>& widths, double dropout,
              ParameterList& params, Rng& rng);
  Var operator()(const Var& x, bool training, Rng& rng) const;
  Eigen::Index out_dim() const { return out_; }
  static std::size_t count(std::size_t in, const std::vector<int>& widths);
  static std::size_t out_dim(std::size_t in, const std::vector<int>& widths);

 private:
  std::vector<Linear> layers_;
  Eigen::Index out_ = 0;
  double dropout_ = 0.0;
};

// 1-D convolution over rows of an (L x C) sequence with zero "same" padding.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(Eigen::Index in, Eigen::Index out, int kernel, ParameterList& params, Rng& rng);
  Var operator()(const Var& x) const;
  static std::size_t count(std::size_t in, std::size_t out, std::size_t kernel) {
    return kernel * in * out + out;
  }

 private:
  int kernel_ = 1;
  std::vector<Var> taps_;  // each in x out
  Var bias_;
};

// Single-direction LSTM layer; gate order (input, forget, cell, output).
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(Eigen::Index in, Eigen::Index hidden, ParameterList& params, Rng& rng);

  // Returns per-step hidden states (L x hidden), processing rows in order,
  // or in reverse when `reverse` (outputs stay aligned with input rows).
  Var operator()(const Var& x, bool reverse, Var* last_hidden = nullptr) const;
  static std::size_t count(std::size_t in, std::size_t hidden) {
    return 4 * hidden * (in + hidden) + 4 * hidden;
  }

 private:
  Eigen::Index hidden_ = 0;
  Var w_ih_, w_hh_, bias_;
};

// Sequence-to-vector encoders shared by the sequential heads and the
// dual-stream fusion model. Input is an (L x d) sequence with L >= 1 valid
// rows; output is 1 x out_dim().
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;
  virtual Var encode(const Var& seq, bool training, Rng& rng) const = 0;
  virtual Eigen::Index out_dim() const = 0;
};

// Mean over time, then an optional feed-forward stack.
class MeanPoolEncoder final : public SequenceEncoder {
 public:
  MeanPoolEncoder(Eigen::Index in, const std::vector<int>& widths, double dropout,
                  ParameterList& params, Rng& rng);
  Var encode(const Var& seq, bool training, Rng& rng) const override;
  Eigen::Index out_dim() const override { return ff_.out_dim(); }
  static std::size_t count(std::size_t in, const std::vector<int>& widths) {
    return FeedForward::count(in, widths);
  }

 private:
  FeedForward ff_;
};

// Conv1d + ReLU + dropout per layer, then mean over time.
class ConvEncoder final : public SequenceEncoder {
 public:
  ConvEncoder(Eigen::Index in, const std::vector<int>& channels, const std::vector<int>& kernels,
              double dropout, ParameterList& params, Rng& rng);
  Var encode(const Var& seq, bool training, Rng& rng) const override;
  Eigen::Index out_dim() const override { return out_; }
  static std::size_t count(std::size_t in, const std::vector<int>& channels,
                           const std::vector<int>& kernels);

 private:
  std::vector<Conv1d> layers_;
  Eigen::Index out_ = 0;
  double dropout_ = 0.0;
};

// Stacked (optionally bidirectional) LSTM. The encoding concatenates the
// forward direction's final state with the backward direction's final state
// (the one computed at the first row).
class LstmEncoder final : public SequenceEncoder {
 public:
  LstmEncoder(Eigen::Index in, int hidden, int layers, bool bidirectional, double dropout,
              ParameterList& params, Rng& rng);
  Var encode(const Var& seq, bool training, Rng& rng) const override;
  Eigen::Index out_dim() const override { return hidden_ * (bidirectional_ ? 2 : 1); }
  static std::size_t count(std::size_t in, int hidden, int layers, bool bidirectional);

 private:
  std::vector<LstmLayer> forward_, backward_;
  Eigen::Index hidden_ = 0;
  bool bidirectional_ = false;
  double dropout_ = 0.0;
};

// Adam with L2 weight decay added to the gradient.
class Adam {
 public:
  Adam(const ParameterList& params, double lr, double weight_decay = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace tracecal::nn

#include "tracecal/probes.hpp"

#include <algorithm>
#include <cmath>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;
using nn::Matrix;
using nn::Var;

namespace {

std::size_t config_dim(const json& config, const char* key) {
  if (!config.contains(key) || !config[key].is_number_integer() || config[key].get<long>() <= 0) {
    throw ConfigError(std::string("estimator config needs positive '") + key + "'");
  }
  return config[key].get<std::size_t>();
}

Rng config_rng(const json& config) { return Rng(config.value("seed", std::uint64_t{0})); }

double classifier_dropout(const json& hp) {
  return hp.contains("classifier_dropout") ? hp_double(hp, "classifier_dropout") : 0.0;
}

}  // namespace

PikEstimator::PikEstimator(json config) : config_(std::move(config)) {
  Rng rng = config_rng(config_);
  const json& hp = config_.at("hp");
  const auto D = static_cast<Eigen::Index>(config_dim(config_, "input_dim"));
  mlp_ = nn::Mlp(D, hp_widths(hp, "classifier_layers"), 1, classifier_dropout(hp), params_, rng);
}

Var PikEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  if (ex.prompt_hidden.size() == 0) {
    throw ScoringError("trace " + ex.record_id + " has no prompt hidden state");
  }
  return mlp_(nn::constant(ex.prompt_hidden), training, rng);
}

std::unique_ptr<TrainingUnits> PikEstimator::make_units(
    std::span<const TraceExample* const> train) const {
  std::size_t pos = 0;
  for (const TraceExample* ex : train) pos += ex->label == 1;
  if (pos == 0 || pos == train.size()) throw TrainingError("P(IK) needs both label classes");
  return NeuralEstimator::make_units(train);
}

std::size_t PikEstimator::count_parameters(const json& hp, std::size_t input_dim) {
  return nn::Mlp::count(input_dim, hp_widths(hp, "classifier_layers"), 1);
}

PhsvEstimator::PhsvEstimator(json config) : config_(std::move(config)) {
  Rng rng = config_rng(config_);
  const json& hp = config_.at("hp");
  const auto D = static_cast<Eigen::Index>(config_dim(config_, "input_dim"));
  mlp_ = nn::Mlp(D, hp_widths(hp, "classifier_layers"), 1, classifier_dropout(hp), params_, rng);
}

PhsvEstimator::ChunkOutputs PhsvEstimator::chunk_forward(const Matrix& hidden, bool training,
                                                         Rng& rng) const {
  if (hidden.rows() == 0) throw ScoringError("probe input has zero chunks");
  ChunkOutputs out;
  out.penultimate = mlp_.penultimate(nn::constant(hidden), training, rng);
  out.logits = mlp_.output_from_penultimate(out.penultimate);
  return out;
}

std::vector<double> PhsvEstimator::chunk_confidences(const Matrix& hidden) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  const Matrix z = chunk_forward(hidden, false, unused).logits.value();
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-z(i, 0)));
  return out;
}

Var PhsvEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  if (ex.num_chunks() == 0) throw ScoringError("trace " + ex.record_id + " has zero chunks");
  const Matrix last = ex.chunk_hidden.bottomRows(1);
  return mlp_(nn::constant(last), training, rng);
}

std::vector<double> inverse_frequency_weights(std::span<const double> labels) {
  double pos = 0;
  for (double y : labels) pos += y;
  const double n = static_cast<double>(labels.size());
  const double neg = n - pos;
  std::vector<double> w;
  w.reserve(labels.size());
  for (double y : labels) {
    const double count = y > 0.5 ? pos : neg;
    w.push_back(n / (2.0 * count));
  }
  if (pos == 0 || neg == 0) std::fill(w.begin(), w.end(), 1.0);
  return w;
}

namespace {

class ChunkUnits final : public TrainingUnits {
 public:
  ChunkUnits(const PhsvEstimator& model, std::span<const TraceExample* const> train) : model_(model) {
    std::vector<double> labels;
    for (const TraceExample* ex : train) {
      for (std::size_t c = 0; c < ex->chunk_labels.size() && c < ex->num_chunks(); ++c) {
        if (!ex->chunk_labels[c]) continue;
        rows_.push_back({ex, static_cast<Eigen::Index>(c)});
        labels.push_back(*ex->chunk_labels[c]);
      }
    }
    if (rows_.empty()) throw TrainingError("every chunk label is null");
    targets_ = labels;
    weights_ = inverse_frequency_weights(labels);
  }

  std::size_t size() const override { return rows_.size(); }

  Var batch_loss(std::span<const std::size_t> batch, Rng& rng) const override {
    const Eigen::Index D = rows_.front().ex->chunk_hidden.cols();
    Matrix x(static_cast<Eigen::Index>(batch.size()), D);
    std::vector<double> y, w;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Row& r = rows_[batch[b]];
      x.row(static_cast<Eigen::Index>(b)) = r.ex->chunk_hidden.row(r.chunk);
      y.push_back(targets_[batch[b]]);
      w.push_back(weights_[batch[b]]);
    }
    return nn::bce_with_logits(model_.chunk_forward(x, true, rng).logits, y, w);
  }

 private:
  struct Row {
    const TraceExample* ex;
    Eigen::Index chunk;
  };
  const PhsvEstimator& model_;
  std::vector<Row> rows_;
  std::vector<double> targets_, weights_;
};

}  // namespace

std::unique_ptr<TrainingUnits> PhsvEstimator::make_units(
    std::span<const TraceExample* const> train) const {
  return std::make_unique<ChunkUnits>(*this, train);
}

std::size_t PhsvEstimator::count_parameters(const json& hp, std::size_t input_dim) {
  return nn::Mlp::count(input_dim, hp_widths(hp, "classifier_layers"), 1);
}

HalfPartition phsv_half_partition(std::span<const TraceExample* const> pool) {
  std::vector<const TraceExample*> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end(), [](const TraceExample* a, const TraceExample* b) {
    return std::tie(a->record_id, a->model_id) < std::tie(b->record_id, b->model_id);
  });
  HalfPartition p;
  const std::size_t half = sorted.size() / 2;
  p.probe_half.assign(sorted.begin(), sorted.begin() + static_cast<long>(half));
  p.complement.assign(sorted.begin() + static_cast<long>(half), sorted.end());
  return p;
}

namespace {

std::unique_ptr<nn::SequenceEncoder> make_sequence_encoder(const std::string& kind, const json& hp,
                                                           Eigen::Index in, nn::ParameterList& params,
                                                           Rng& rng) {
  if (kind == "mlp") {
    return std::make_unique<nn::MeanPoolEncoder>(in, std::vector<int>{0}, 0.0, params, rng);
  }
  if (kind == "conv") {
    return std::make_unique<nn::ConvEncoder>(in, hp_widths(hp, "conv_layers"),
                                             hp_widths(hp, "kernel_sizes"), hp_double(hp, "dropout"),
                                             params, rng);
  }
  if (kind == "lstm") {
    return std::make_unique<nn::LstmEncoder>(in, hp_int(hp, "hidden_dim"), hp_int(hp, "num_layers"),
                                             hp_bool(hp, "bidirectional"), hp_double(hp, "dropout"),
                                             params, rng);
  }
  throw ConfigError("unknown sequence head kind '" + kind + "'");
}

std::size_t sequence_encoder_count(const std::string& kind, const json& hp, std::size_t in,
                                   std::size_t* out_dim) {
  if (kind == "mlp") {
    *out_dim = in;
    return 0;
  }
  if (kind == "conv") {
    const auto channels = hp_widths(hp, "conv_layers");
    const auto kernels = hp_widths(hp, "kernel_sizes");
    if (channels.empty() || channels.size() != kernels.size()) {
      throw ConfigError("conv_layers and kernel_sizes must have equal non-zero length");
    }
    for (int k : kernels) {
      if (k <= 0 || k % 2 == 0) throw ConfigError("conv kernel sizes must be odd");
    }
    *out_dim = static_cast<std::size_t>(channels.back());
    return nn::ConvEncoder::count(in, channels, kernels);
  }
  if (kind == "lstm") {
    const int h = hp_int(hp, "hidden_dim");
    const bool bi = hp_bool(hp, "bidirectional");
    *out_dim = static_cast<std::size_t>(h) * (bi ? 2 : 1);
    return nn::LstmEncoder::count(in, h, hp_int(hp, "num_layers"), bi);
  }
  throw ConfigError("unknown sequence head kind '" + kind + "'");
}

}  // namespace

SequenceHeadEstimator::SequenceHeadEstimator(json config) : config_(std::move(config)) {
  Rng rng = config_rng(config_);
  const json& hp = config_.at("hp");
  source_ = config_.at("source").get<std::string>();
  if (source_ != "hidden" && source_ != "tlcc") throw ConfigError("sequence source must be hidden or tlcc");
  if (config_.contains("norm")) norm_ = Standardizer::from_json(config_["norm"]);
  const std::string kind = config_.at("kind").get<std::string>();
  const auto D = static_cast<Eigen::Index>(config_dim(config_, "input_dim"));
  std::size_t check_dim = 0;
  sequence_encoder_count(kind, hp, static_cast<std::size_t>(D), &check_dim);
  encoder_ = make_sequence_encoder(kind, hp, D, params_, rng);
  head_ = nn::Mlp(encoder_->out_dim(), hp_widths(hp, "classifier_layers"), 1, classifier_dropout(hp),
                  params_, rng);
}

Matrix SequenceHeadEstimator::input_of(const TraceExample& ex) const {
  if (ex.num_chunks() == 0) throw ScoringError("trace " + ex.record_id + " has zero chunks");
  const Matrix& raw = source_ == "hidden" ? ex.chunk_hidden : ex.tlcc;
  return norm_.apply(keep_tail(raw, kMaxSequenceChunks));
}

Var SequenceHeadEstimator::forward_sequence(const Matrix& seq, bool training, Rng& rng) const {
  if (seq.rows() == 0) throw ScoringError("empty sequence");
  return head_(encoder_->encode(nn::constant(seq), training, rng), training, rng);
}

Var SequenceHeadEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  return forward_sequence(input_of(ex), training, rng);
}

double SequenceHeadEstimator::score_padded(const Matrix& seq, const std::vector<bool>& mask) const {
  if (static_cast<Eigen::Index>(mask.size()) != seq.rows()) throw InvalidInput("mask length mismatch");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < seq.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  Matrix valid(static_cast<Eigen::Index>(keep.size()), seq.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) valid.row(static_cast<Eigen::Index>(k)) = seq.row(keep[k]);
  nn::NoGradGuard guard;
  Rng unused(0);
  const double z = forward_sequence(norm_.apply(keep_tail(valid, kMaxSequenceChunks)), false, unused).item();
  return 1.0 / (1.0 + std::exp(-z));
}

std::size_t SequenceHeadEstimator::count_parameters(const std::string& kind, const json& hp,
                                                    std::size_t input_dim) {
  std::size_t out_dim = 0;
  const std::size_t enc = sequence_encoder_count(kind, hp, input_dim, &out_dim);
  return enc + nn::Mlp::count(out_dim, hp_widths(hp, "classifier_layers"), 1);
}

}  // namespace tracecal

namespace tracecal {

EmbeddedProbe::EmbeddedProbe(const json& probe_config, bool finetune)
    : config_(probe_config), probe_(std::make_shared<PhsvEstimator>(probe_config)), finetune_(finetune) {}

Var EmbeddedProbe::features(const Matrix& hidden, bool training, Rng& rng) const {
  auto build = [&](bool train_mode) {
    const auto out = probe_->chunk_forward(hidden, train_mode, rng);
    const std::array<Var, 2> parts{nn::sigmoid(out.logits), out.penultimate};
    return nn::concat_cols(parts);
  };
  if (finetune_) return build(training);
  Matrix value;
  {
    nn::NoGradGuard guard;
    value = build(false).value();
  }
  return nn::constant(std::move(value));
}

std::vector<double> EmbeddedProbe::confidences(const Matrix& hidden) const {
  return probe_->chunk_confidences(hidden);
}

void EmbeddedProbe::load_from(const PhsvEstimator& trained) {
  probe_->mutable_parameters().restore(trained.parameters()->snapshot());
}

std::size_t EmbeddedProbe::count(const json& probe_config) {
  return PhsvEstimator::count_parameters(probe_config.at("hp"), config_dim(probe_config, "input_dim"));
}

std::size_t EmbeddedProbe::feature_dim(const json& probe_config) {
  const auto widths = hp_widths(probe_config.at("hp"), "classifier_layers");
  const std::size_t in = config_dim(probe_config, "input_dim");
  return 1 + nn::FeedForward::out_dim(in, widths);
}

}  // namespace tracecal

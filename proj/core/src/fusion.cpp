#include "tracecal/fusion.hpp"

#include <cmath>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;
using nn::Matrix;
using nn::Var;

TrajectoryVector make_trajectory(std::span<const double> c, std::size_t L) {
  if (c.empty()) throw InvalidInput("trajectory needs at least one chunk");
  if (L == 0) throw ConfigError("trajectory length must be positive");
  TrajectoryVector t;
  const std::size_t n = c.size();
  const std::size_t start = n > L ? n - L : 0;
  t.confidences.assign(c.begin() + static_cast<long>(start), c.end());
  t.true_length = t.confidences.size();
  while (t.confidences.size() < L) t.confidences.push_back(c.back());
  return t;
}

CeEstimator::CeEstimator(json config) : config_(std::move(config)) {
  L_ = config_.value("trajectory_length", kDefaultTrajectoryLength);
  probe_ = EmbeddedProbe(config_.at("probe"), false);
  const std::string family = config_.at("family").get<std::string>();
  if (config_.contains("state")) {
    classifier_ = classifier_from_state(config_["state"]);
  } else {
    classifier_ = make_classifier(family, config_.value("options", json::object()));
  }
}

json CeEstimator::config() const {
  json c = config_;
  c["state"] = classifier_->state();
  return c;
}

const std::vector<std::string>& CeEstimator::warnings() const { return classifier_->warnings(); }

TrajectoryVector CeEstimator::trajectory(const TraceExample& ex) const {
  if (ex.num_chunks() == 0) throw ScoringError("trace " + ex.record_id + " has zero chunks");
  const auto conf = probe_.confidences(ex.chunk_hidden);
  return make_trajectory(conf, L_);
}

void CeEstimator::fit(std::span<const TraceExample* const> train, Rng& rng) {
  Matrix X(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(L_));
  std::vector<int> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto t = trajectory(*train[i]);
    for (std::size_t k = 0; k < L_; ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.confidences[k];
    y.push_back(train[i]->label);
  }
  classifier_->fit(X, y, rng);
}

double CeEstimator::score(const TraceExample& ex) const {
  const auto t = trajectory(ex);
  nn::RowVector x(static_cast<Eigen::Index>(L_));
  for (std::size_t k = 0; k < L_; ++k) x(static_cast<Eigen::Index>(k)) = t.confidences[k];
  return std::clamp(classifier_->predict_proba(x), 0.0, 1.0);
}

namespace {

double stream_dropout(const json& hp) {
  if (hp.contains("dropout")) return hp_double(hp, "dropout");
  if (hp.contains("classifier_dropout")) return hp_double(hp, "classifier_dropout");
  return 0.0;
}

int int_or(const json& hp, const char* key, int def) { return hp.contains(key) ? hp_int(hp, key) : def; }
bool bool_or(const json& hp, const char* key, bool def) { return hp.contains(key) ? hp_bool(hp, key) : def; }

std::unique_ptr<nn::SequenceEncoder> make_stream(const std::string& kind, const std::string& prefix,
                                                 const json& hp, Eigen::Index in, nn::ParameterList& p,
                                                 Rng& rng) {
  const double dropout = stream_dropout(hp);
  const auto key = [&](const char* suffix) { return prefix + suffix; };
  if (kind == "mlp") {
    return std::make_unique<nn::MeanPoolEncoder>(in, hp_widths(hp, key("_hidden").c_str()), dropout, p, rng);
  }
  if (kind == "conv") {
    return std::make_unique<nn::ConvEncoder>(in, hp_widths(hp, key("_conv").c_str()),
                                             hp_widths(hp, key("_kernels").c_str()), dropout, p, rng);
  }
  if (kind == "lstm") {
    return std::make_unique<nn::LstmEncoder>(in, hp_int(hp, key("_hidden_dim").c_str()),
                                             int_or(hp, key("_num_layers").c_str(), 1),
                                             bool_or(hp, key("_bidirectional").c_str(), true), dropout, p, rng);
  }
  throw ConfigError("unknown LateFusion kind '" + kind + "'");
}

std::size_t stream_count(const std::string& kind, const std::string& prefix, const json& hp, std::size_t in,
                         std::size_t* out) {
  const auto key = [&](const char* suffix) { return prefix + suffix; };
  if (kind == "mlp") {
    const auto w = hp_widths(hp, key("_hidden").c_str());
    *out = nn::FeedForward::out_dim(in, w);
    return nn::FeedForward::count(in, w);
  }
  if (kind == "conv") {
    const auto ch = hp_widths(hp, key("_conv").c_str());
    const auto ks = hp_widths(hp, key("_kernels").c_str());
    if (ch.empty() || ch.size() != ks.size()) throw ConfigError(prefix + ": conv widths and kernels differ in length");
    for (int k : ks) {
      if (k <= 0 || k % 2 == 0) throw ConfigError("conv kernel sizes must be odd");
    }
    *out = static_cast<std::size_t>(ch.back());
    return nn::ConvEncoder::count(in, ch, ks);
  }
  if (kind == "lstm") {
    const int h = hp_int(hp, key("_hidden_dim").c_str());
    const bool bi = bool_or(hp, key("_bidirectional").c_str(), true);
    *out = static_cast<std::size_t>(h) * (bi ? 2 : 1);
    return nn::LstmEncoder::count(in, h, int_or(hp, key("_num_layers").c_str(), 1), bi);
  }
  throw ConfigError("unknown LateFusion kind '" + kind + "'");
}

}  // namespace

LateFusionEstimator::LateFusionEstimator(json config) : config_(std::move(config)) {
  Rng rng(config_.value("seed", std::uint64_t{0}));
  const json& hp = config_.at("hp");
  const std::string kind = config_.at("kind").get<std::string>();
  const auto D = config_.at("input_dim").get<Eigen::Index>();
  probe_ = EmbeddedProbe(config_.at("probe"), config_.value("finetune", false));
  params_.append(probe_.parameters());
  nn::ParameterList own;
  semantic_ = make_stream(kind, "semantic", hp, D, own, rng);
  dynamics_ = make_stream(kind, "dynamics", hp, probe_.feature_dim(), own, rng);
  head_ = nn::Mlp(fused_dim(), hp_widths(hp, "classifier_layers"), 1,
                  hp.contains("classifier_dropout") ? hp_double(hp, "classifier_dropout") : 0.0, own, rng);
  params_.append(own);
  trainable_ = probe_.finetune() ? params_ : own;
}

std::size_t LateFusionEstimator::count_parameters(const json& config) {
  const json& hp = config.at("hp");
  const std::string kind = config.at("kind").get<std::string>();
  const auto D = config.at("input_dim").get<std::size_t>();
  std::size_t sem_out = 0, dyn_out = 0;
  std::size_t total = stream_count(kind, "semantic", hp, D, &sem_out);
  total += stream_count(kind, "dynamics", hp, EmbeddedProbe::feature_dim(config.at("probe")), &dyn_out);
  total += nn::Mlp::count(sem_out + dyn_out, hp_widths(hp, "classifier_layers"), 1);
  if (config.value("finetune", false)) total += EmbeddedProbe::count(config.at("probe"));
  return total;
}

Var LateFusionEstimator::forward_streams(const Matrix& semantic, const Var& dynamics, bool training,
                                         Rng& rng) const {
  if (semantic.rows() != dynamics.rows()) {
    throw InvalidInput("LateFusion stream length mismatch: " + std::to_string(semantic.rows()) + " vs " +
                       std::to_string(dynamics.rows()));
  }
  if (semantic.rows() == 0) throw ScoringError("LateFusion needs at least one chunk");
  const std::array<Var, 2> parts{semantic_->encode(nn::constant(semantic), training, rng),
                                 dynamics_->encode(dynamics, training, rng)};
  return head_(nn::concat_cols(parts), training, rng);
}

Var LateFusionEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  if (ex.num_chunks() == 0) throw ScoringError("trace " + ex.record_id + " has zero chunks");
  const Matrix hidden = keep_tail(ex.chunk_hidden, kMaxSequenceChunks);
  return forward_streams(hidden, probe_.features(hidden, training, rng), training, rng);
}

double LateFusionEstimator::score_ablated(const TraceExample& ex, bool zero_semantic,
                                          bool zero_dynamics) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  Matrix hidden = keep_tail(ex.chunk_hidden, kMaxSequenceChunks);
  Matrix dyn = probe_.features(hidden, false, unused).value();
  if (zero_semantic) hidden.setZero();
  if (zero_dynamics) dyn.setZero();
  const double z = forward_streams(hidden, nn::constant(dyn), false, unused).item();
  return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace tracecal

#include "tracecal/text.hpp"

#include <cctype>
#include <cmath>

#include "tracecal/error.hpp"
#include "tracecal/hash.hpp"
#include "tracecal/random.hpp"

namespace tracecal {

using nlohmann::json;
using nn::Matrix;
using nn::Var;

HashingEncoder::HashingEncoder(Eigen::Index dim, std::size_t vocab, std::size_t context, std::uint64_t seed)
    : dim_(dim), vocab_(vocab), context_(context), seed_(seed) {
  if (dim < 1 || vocab < 8 || context < 4) throw ConfigError("hashing encoder: bad dimensions");
  Rng rng(seed);
  table_.resize(static_cast<Eigen::Index>(vocab), dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index r = 0; r < table_.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c) table_(r, c) = rng.normal() * s;
}

std::string HashingEncoder::name() const {
  return "hashing-" + std::to_string(dim_) + "-" + std::to_string(context_);
}

std::vector<int> HashingEncoder::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    ids.push_back(3 + static_cast<int>(stable_hash64(word) % (vocab_ - 3)));
    word.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(u)));
    } else {
      flush();
      if (!std::isspace(u)) {
        word.push_back(ch);
        flush();
      }
    }
  }
  flush();
  return ids;
}

Matrix HashingEncoder::embed(std::span<const int> ids, const std::vector<bool>& mask) const {
  if (mask.size() != ids.size()) throw InvalidInput("encoder: mask length mismatch");
  const auto L = static_cast<Eigen::Index>(ids.size());
  Matrix own = Matrix::Zero(L, dim_);
  for (Eigen::Index t = 0; t < L; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_) throw InvalidInput("encoder: token id out of range");
    own.row(t) = table_.row(id);
  }
  // Segment s holds the tokens after the s-th [SEP] up to and including the
  // next one.
  Matrix out = Matrix::Zero(L, dim_);
  Eigen::Index start = 0;
  while (start < L) {
    Eigen::Index end = start;
    while (end < L && ids[static_cast<std::size_t>(end)] != sep_id()) ++end;
    if (end < L) ++end;
    nn::RowVector mean = nn::RowVector::Zero(dim_);
    double count = 0;
    for (Eigen::Index t = start; t < end; ++t) {
      if (!mask[static_cast<std::size_t>(t)]) continue;
      mean += own.row(t);
      count += 1;
    }
    if (count > 0) mean /= count;
    for (Eigen::Index t = start; t < end; ++t) {
      if (mask[static_cast<std::size_t>(t)]) out.row(t) = 0.5 * own.row(t) + 0.5 * mean;
    }
    start = end;
  }
  return out;
}

std::shared_ptr<const TextEncoder> make_encoder(const std::string& ref) {
  if (ref.rfind("hashing-", 0) == 0) {
    const std::string rest = ref.substr(8);
    const auto dash = rest.find('-');
    try {
      const long dim = std::stol(rest.substr(0, dash));
      const long ctx = dash == std::string::npos ? 512 : std::stol(rest.substr(dash + 1));
      return std::make_shared<HashingEncoder>(dim, 4096, static_cast<std::size_t>(ctx));
    } catch (const std::logic_error&) {
      throw ConfigError("bad encoder reference '" + ref + "'");
    }
  }
  throw ConfigError("unknown encoder reference '" + ref + "' (available: hashing-<dim>[-<context>])");
}

namespace {

std::shared_ptr<const TextEncoder> resolve_encoder(const json& config, const Services& services) {
  const std::string ref = config.value("encoder", std::string("hashing-64-512"));
  if (services.encoder && services.encoder->name() == ref) return services.encoder;
  if (services.encoder && config.value("encoder", std::string()).empty()) return services.encoder;
  return make_encoder(ref);
}

std::string join_chunks(std::span<const std::string> chunks) {
  std::string out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (i) out += "\n\n";
    out += chunks[i];
  }
  return out;
}

std::string trace_key(const TraceExample& ex) { return ex.record_id + '\x1f' + ex.model_id; }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

EttinEstimator::EttinEstimator(json config, const Services& services) : config_(std::move(config)) {
  encoder_ = resolve_encoder(config_, services);
  config_["encoder"] = encoder_->name();
  config_["encoder_dim"] = encoder_->dim();
  Rng rng(config_.value("seed", std::uint64_t{0}));
  const json& hp = config_.at("hp");
  head_ = nn::Mlp(encoder_->dim(), hp_widths(hp, "classifier_layers"), 1,
                  hp.contains("classifier_dropout") ? hp_double(hp, "classifier_dropout") : 0.0, params_, rng);
}

std::size_t EttinEstimator::count_parameters(const json& hp, std::size_t d) {
  return nn::Mlp::count(d, hp_widths(hp, "classifier_layers"), 1);
}

std::vector<int> EttinEstimator::input_ids(std::string_view prompt, std::string_view response) const {
  const auto p = encoder_->tokenize(prompt);
  const auto r = encoder_->tokenize(response);
  if (p.empty() && r.empty()) throw InvalidInput("text encoder input is empty");
  std::vector<int> ids{encoder_->cls_id()};
  ids.insert(ids.end(), p.begin(), p.end());
  ids.push_back(encoder_->sep_id());
  ids.insert(ids.end(), r.begin(), r.end());
  ids.push_back(encoder_->sep_id());
  if (ids.size() > encoder_->context_length()) ids.resize(encoder_->context_length());
  return ids;
}

Matrix EttinEstimator::pooled(std::span<const int> ids, const std::vector<bool>& mask) const {
  const Matrix e = encoder_->embed(ids, mask);
  nn::RowVector sum = nn::RowVector::Zero(e.cols());
  double n = 0;
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    if (!mask[static_cast<std::size_t>(t)] || ids[static_cast<std::size_t>(t)] == encoder_->pad_id()) continue;
    sum += e.row(t);
    n += 1;
  }
  if (n == 0) throw InvalidInput("text encoder input has no tokens");
  return sum / n;
}

double EttinEstimator::score_ids(std::span<const int> ids, const std::vector<bool>& mask) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  return sigmoid(head_(nn::constant(pooled(ids, mask)), false, unused).item());
}

double EttinEstimator::score_text(std::string_view prompt, std::string_view response) const {
  const auto ids = input_ids(prompt, response);
  return score_ids(ids, std::vector<bool>(ids.size(), true));
}

Var EttinEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  const std::string key = trace_key(ex);
  Matrix x;
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) x = it->second;
  }
  if (x.size() == 0) {
    const auto ids = input_ids(ex.prompt, join_chunks(ex.chunk_texts));
    x = pooled(ids, std::vector<bool>(ids.size(), true));
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(key, x);
  }
  return head_(nn::constant(x), training, rng);
}

HgaEstimator::HgaEstimator(json config, const Services& services) : config_(std::move(config)) {
  encoder_ = resolve_encoder(config_, services);
  config_["encoder"] = encoder_->name();
  config_["encoder_dim"] = encoder_->dim();
  lambda_ = config_.value("aux_loss_weight", 0.5);
  if (lambda_ < 0 || lambda_ > 1) throw ConfigError("aux_loss_weight must be in [0, 1]");
  config_["aux_loss_weight"] = lambda_;
  Rng rng(config_.value("seed", std::uint64_t{0}));
  const json& hp = config_.at("hp");
  attention_dropout_ = hp.contains("attention_dropout") ? hp_double(hp, "attention_dropout") : 0.1;
  const Eigen::Index d = encoder_->dim();
  wq_ = nn::Linear(d, d, params_, rng);
  wk_ = nn::Linear(d, d, params_, rng);
  wv_ = nn::Linear(d, d, params_, rng);
  const double dropout = hp.contains("classifier_dropout") ? hp_double(hp, "classifier_dropout") : 0.0;
  quality_ = nn::Mlp(d, hp_widths(hp, "quality_layers"), 1, dropout, params_, rng);
  classifier_ = nn::Mlp(d, hp_widths(hp, "classifier_layers"), 1, dropout, params_, rng);
}

std::size_t HgaEstimator::count_parameters(const json& hp, std::size_t d) {
  return 3 * nn::Linear::count(d, d) + nn::Mlp::count(d, hp_widths(hp, "quality_layers"), 1) +
         nn::Mlp::count(d, hp_widths(hp, "classifier_layers"), 1);
}

HgaEstimator::Layout HgaEstimator::layout(std::string_view prompt, std::span<const std::string> chunks) const {
  if (chunks.empty()) throw InvalidInput("HGA input needs at least one chunk");
  std::vector<int> p = encoder_->tokenize(prompt);
  std::vector<std::vector<int>> c;
  for (const auto& ch : chunks) c.push_back(encoder_->tokenize(ch));
  const std::size_t ctx = encoder_->context_length();
  auto total = [&](std::size_t first) {
    std::size_t t = 2 + p.size();
    for (std::size_t i = first; i < c.size(); ++i) t += c[i].size() + 1;
    return t;
  };
  Layout out;
  std::size_t first = 0;
  while (total(first) > ctx && first + 1 < c.size()) ++first;
  out.dropped_chunks = first;
  if (total(first) > ctx) {
    const std::size_t excess = total(first) - ctx;
    const std::size_t cut = std::min(excess, p.size());
    p.erase(p.begin(), p.begin() + static_cast<long>(cut));
    out.truncated = true;
  }
  if (total(first) > ctx) {
    auto& last = c.back();
    const std::size_t excess = total(first) - ctx;
    last.erase(last.begin(), last.begin() + static_cast<long>(std::min(excess, last.size())));
  }
  out.truncated = out.truncated || first > 0;
  out.ids.push_back(encoder_->cls_id());
  out.ids.insert(out.ids.end(), p.begin(), p.end());
  out.ids.push_back(encoder_->sep_id());
  for (std::size_t i = first; i < c.size(); ++i) {
    out.ids.insert(out.ids.end(), c[i].begin(), c[i].end());
    out.ids.push_back(encoder_->sep_id());
    out.sep_positions.push_back(out.ids.size() - 1);
  }
  return out;
}

Matrix HgaEstimator::chunk_embeddings(std::string_view prompt, std::span<const std::string> chunks,
                                      Layout* layout_out) const {
  Layout l = layout(prompt, chunks);
  const Matrix e = encoder_->embed(l.ids, std::vector<bool>(l.ids.size(), true));
  Matrix out(static_cast<Eigen::Index>(l.sep_positions.size()), e.cols());
  for (std::size_t k = 0; k < l.sep_positions.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = e.row(static_cast<Eigen::Index>(l.sep_positions[k]));
  }
  if (l.truncated) {
    std::lock_guard lock(cache_mutex_);
    ++truncations_;
  }
  if (layout_out) *layout_out = std::move(l);
  return out;
}

std::size_t HgaEstimator::truncation_warnings() const {
  std::lock_guard lock(cache_mutex_);
  return truncations_;
}

HgaOutputs HgaEstimator::head(const Var& e, const Var* quality_override, bool training, Rng& rng) const {
  const double scale = 1.0 / std::sqrt(static_cast<double>(e.cols()));
  const Var q = wq_(e), k = wk_(e), v = wv_(e);
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> all =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(e.rows(), e.rows(), true);
  Var attn = nn::masked_softmax_rows(nn::scale(nn::matmul(q, nn::transpose(k)), scale), all);
  attn = nn::dropout(attn, attention_dropout_, training, rng);
  const Var context = nn::matmul(attn, v);
  HgaOutputs out;
  out.quality_logits = quality_override ? *quality_override : quality_(context, training, rng);
  out.gates = nn::sigmoid(out.quality_logits);
  out.pooled = nn::mean_rows(nn::mul_col(context, out.gates));
  out.logit = classifier_(out.pooled, training, rng);
  return out;
}

HgaOutputs HgaEstimator::forward_embeddings(const Matrix& emb, bool training, Rng& rng) const {
  if (emb.rows() == 0) throw ScoringError("HGA needs at least one chunk embedding");
  return head(nn::constant(emb), nullptr, training, rng);
}

HgaOutputs HgaEstimator::forward_with_quality(const Matrix& emb, const Matrix& quality_logits) const {
  if (quality_logits.rows() != emb.rows() || quality_logits.cols() != 1) {
    throw InvalidInput("quality logits must be n x 1");
  }
  Rng unused(0);
  const Var qv = nn::constant(quality_logits);
  return head(nn::constant(emb), &qv, false, unused);
}

const Matrix& HgaEstimator::cached_embeddings(const TraceExample& ex, std::size_t* dropped) const {
  const std::string key = trace_key(ex);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      *dropped = it->second.second;
      return it->second.first;
    }
  }
  Layout l;
  Matrix e = chunk_embeddings(ex.prompt, ex.chunk_texts, &l);
  std::lock_guard lock(cache_mutex_);
  auto [it, inserted] = cache_.emplace(key, std::make_pair(std::move(e), l.dropped_chunks));
  *dropped = it->second.second;
  return it->second.first;
}

Var HgaEstimator::forward(const TraceExample& ex, bool training, Rng& rng) const {
  std::size_t dropped = 0;
  return head(nn::constant(cached_embeddings(ex, &dropped)), nullptr, training, rng).logit;
}

HgaEstimator::Scored HgaEstimator::score_hga(std::string_view prompt, std::span<const std::string> chunks) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  const HgaOutputs out = head(nn::constant(chunk_embeddings(prompt, chunks)), nullptr, false, unused);
  Scored s;
  s.score = sigmoid(out.logit.item());
  for (Eigen::Index i = 0; i < out.gates.rows(); ++i) s.gates.push_back(out.gates.value()(i, 0));
  return s;
}

namespace {

class HgaUnits final : public TrainingUnits {
 public:
  HgaUnits(const HgaEstimator& model, std::span<const TraceExample* const> train,
           std::function<const Matrix&(const TraceExample&, std::size_t*)> embeddings)
      : model_(model), train_(train.begin(), train.end()), embeddings_(std::move(embeddings)) {}
  std::size_t size() const override { return train_.size(); }
  Var batch_loss(std::span<const std::size_t> batch, Rng& rng) const override {
    std::vector<Var> logits, chunk_logits;
    std::vector<double> y, chunk_y;
    for (std::size_t i : batch) {
      const TraceExample& ex = *train_[i];
      std::size_t dropped = 0;
      const Matrix& e = embeddings_(ex, &dropped);
      const HgaOutputs out = model_.forward_embeddings(e, true, rng);
      logits.push_back(out.logit);
      y.push_back(ex.label);
      for (Eigen::Index c = 0; c < out.quality_logits.rows(); ++c) {
        const std::size_t label_index = dropped + static_cast<std::size_t>(c);
        if (label_index >= ex.chunk_labels.size() || !ex.chunk_labels[label_index]) continue;
        chunk_logits.push_back(nn::slice_rows(out.quality_logits, c, 1));
        chunk_y.push_back(*ex.chunk_labels[label_index]);
      }
    }
    Var loss = nn::bce_with_logits(nn::concat_rows(logits), y);
    if (!chunk_logits.empty() && model_.aux_loss_weight() > 0) {
      loss = nn::add(loss, nn::scale(nn::bce_with_logits(nn::concat_rows(chunk_logits), chunk_y),
                                     model_.aux_loss_weight()));
    }
    return loss;
  }

 private:
  const HgaEstimator& model_;
  std::vector<const TraceExample*> train_;
  std::function<const Matrix&(const TraceExample&, std::size_t*)> embeddings_;
};

}  // namespace

std::unique_ptr<TrainingUnits> HgaEstimator::make_units(std::span<const TraceExample* const> train) const {
  return std::make_unique<HgaUnits>(*this, train, [this](const TraceExample& ex, std::size_t* dropped) -> const Matrix& {
    return cached_embeddings(ex, dropped);
  });
}

}  // namespace tracecal

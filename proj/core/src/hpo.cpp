#include "tracecal/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tracecal/error.hpp"
#include "tracecal/fusion.hpp"
#include "tracecal/gnn.hpp"
#include "tracecal/hash.hpp"
#include "tracecal/text.hpp"

namespace tracecal {

using nlohmann::json;

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

json widths(std::initializer_list<int> w) { return json(std::vector<int>(w)); }

std::vector<json> classifier_layer_options() {
  return {widths({128, 64}), widths({128, 32}), widths({64, 32}),   widths({32, 16}),
          widths({128}),     widths({64}),      widths({32}),       widths({0}),
          widths({256, 128}), widths({512, 256}), widths({256}),    widths({512})};
}

std::vector<json> dropout_options() { return {0.1, 0.25, 0.4}; }

SearchSpace shared_space() {
  return {{"learning_rate", {1e-4, 1e-3}},
          {"weight_decay", {1e-5, 1e-4}},
          {"classifier_layers", classifier_layer_options()},
          {"classifier_dropout", dropout_options()}};
}

std::vector<json> gnn_pooling_all() { return {"mean", "max", "sum", "attention", "last_node"}; }

// Suffix after the last '-' (the architecture kind of sfhs/tlcc/latefusion).
std::string kind_of(const std::string& method) { return method.substr(method.rfind('-') + 1); }

struct GnnMethod {
  std::string family;
  bool cd = false;
  bool finetune = false;
  bool dual = false;
};

std::optional<GnnMethod> parse_gnn(const std::string& m) {
  static const std::map<std::string, std::string> sb = {
      {"gnn-sb-gcn", "gcn"}, {"gnn-sb-gat", "gat"}, {"gnn-sb-graphsage", "graphsage"}};
  static const std::map<std::string, std::string> sr = {
      {"gnn-sr-gine", "gine"}, {"gnn-sr-nnconv", "nnconv"}, {"gnn-sr-transformer", "transformer"}};
  if (auto it = sb.find(m); it != sb.end()) return GnnMethod{it->second};
  if (auto it = sr.find(m); it != sr.end()) return GnnMethod{it->second};
  for (const char* ft : {"noft", "ft"}) {
    const std::string prefix = std::string("gnn-cd-") + ft + "-";
    if (!starts_with(m, prefix.c_str())) continue;
    const std::string rest = m.substr(prefix.size());
    GnnMethod g{"", true, std::string(ft) == "ft", false};
    if (rest == "gcn2-same") g.family = "gcn2";
    else if (rest == "gcn2-dual") g.family = "gcn2", g.dual = true;
    else if (rest == "appnp" || rest == "tagconv") g.family = rest;
    else return std::nullopt;
    return g;
  }
  return std::nullopt;
}

void append(SearchSpace& s, SearchSpace extra) {
  for (auto& c : extra) s.push_back(std::move(c));
}

}  // namespace

const std::vector<std::string>& searchable_methods() {
  static const std::vector<std::string> methods = [] {
    std::vector<std::string> m = {"pik", "phsv", "phsv-half"};
    for (const char* src : {"sfhs", "tlcc"})
      for (const char* k : {"mlp", "conv", "lstm"}) m.push_back(std::string(src) + "-" + k);
    for (const char* f : {"gcn", "gat", "graphsage"}) m.push_back(std::string("gnn-sb-") + f);
    for (const char* f : {"gine", "nnconv", "transformer"}) m.push_back(std::string("gnn-sr-") + f);
    for (const char* ft : {"noft", "ft"})
      for (const char* f : {"gcn2-same", "gcn2-dual", "appnp", "tagconv"})
        m.push_back(std::string("gnn-cd-") + ft + "-" + f);
    for (const auto& f : classifier_families()) m.push_back("ce-" + f);
    m.push_back("ce");
    for (const char* ft : {"noft", "ft"})
      for (const char* k : {"mlp", "conv", "lstm"}) m.push_back(std::string("latefusion-") + ft + "-" + k);
    m.push_back("ettin");
    m.push_back("ettin-hga");
    return m;
  }();
  return methods;
}

bool is_known_method(const std::string& method) {
  const auto& m = searchable_methods();
  return std::find(m.begin(), m.end(), method) != m.end();
}

bool uses_probe(const std::string& method) {
  return starts_with(method, "ce") || starts_with(method, "latefusion-") || starts_with(method, "gnn-cd-");
}

SearchSpace search_space(const std::string& method) {
  if (!is_known_method(method)) throw ConfigError("unknown method '" + method + "'");
  if (method == "ce") {
    std::vector<json> fams(classifier_families().begin(), classifier_families().end());
    return {{"family", fams}};
  }
  // Classic classifiers are fit with their library defaults; nothing to search.
  if (starts_with(method, "ce-")) return {};

  SearchSpace s = shared_space();
  if (starts_with(method, "sfhs-") || starts_with(method, "tlcc-")) {
    const std::string k = kind_of(method);
    if (k == "conv") {
      append(s, {{"conv_layers", {widths({32, 64}), widths({64, 128})}},
                 {"kernel_sizes", {widths({3, 3}), widths({5, 3})}},
                 {"dropout", dropout_options()}});
    } else if (k == "lstm") {
      append(s, {{"hidden_dim", {16, 32, 64}},
                 {"num_layers", {1, 2}},
                 {"bidirectional", {true, false}},
                 {"dropout", dropout_options()}});
    }
  } else if (starts_with(method, "latefusion-")) {
    const std::string k = kind_of(method);
    if (k == "mlp") {
      append(s, {{"semantic_hidden", {widths({128, 64}), widths({64}), widths({0})}},
                 {"dynamics_hidden", {widths({64, 32}), widths({32}), widths({0})}}});
    } else if (k == "conv") {
      append(s, {{"semantic_conv", {widths({32, 64})}},
                 {"semantic_kernels", {widths({3, 3}), widths({5, 3})}},
                 {"dynamics_conv", {widths({16, 32}), widths({32, 32})}},
                 {"dynamics_kernels", {widths({3, 3})}},
                 {"dropout", dropout_options()}});
    } else {
      append(s, {{"semantic_hidden_dim", {32, 64}},
                 {"semantic_num_layers", {1}},
                 {"semantic_bidirectional", {true}},
                 {"dynamics_hidden_dim", {16, 32}},
                 {"dynamics_num_layers", {1}},
                 {"dynamics_bidirectional", {true}},
                 {"dropout", dropout_options()}});
    }
  } else if (auto g = parse_gnn(method)) {
    if (g->family == "gcn" || g->family == "gat" || g->family == "graphsage") {
      append(s, {{"hidden_dim", {64, 128, 256}}, {"num_layers", {1, 2, 3, 4}}, {"pooling", {"mean", "max", "sum"}}});
      if (g->family == "gat") append(s, {{"heads", {1, 2, 4}}, {"concat", {true, false}}});
      if (g->family == "graphsage") append(s, {{"aggr", {"mean", "max", "add"}}});
    } else if (g->family == "gine") {
      append(s, {{"hidden_dim", {64, 128, 256}},
                 {"num_layers", {1, 2}},
                 {"pooling", gnn_pooling_all()},
                 {"edge_nn", {"linear", "mlp_small", "mlp_medium"}}});
    } else if (g->family == "transformer") {
      append(s, {{"hidden_dim", {64, 128, 256}},
                 {"num_layers", {1, 2}},
                 {"pooling", gnn_pooling_all()},
                 {"heads", {2, 4, 8}},
                 {"concat", {true, false}}});
    } else if (g->family == "nnconv") {
      append(s, {{"hidden_dim", {32, 64, 128, 256}},
                 {"num_layers", {1, 2}},
                 {"pooling", gnn_pooling_all()},
                 {"edge_nn", {"linear"}}});
    } else if (g->family == "gcn2") {
      append(s, {{"hidden_dim", g->dual ? std::vector<json>{128, 256} : std::vector<json>{128, 256, 512}},
                 {"num_layers", {1, 2}},
                 {"pooling", gnn_pooling_all()},
                 {"alpha", {0.1, 0.3, 0.5}},
                 {"theta", {1.0, 1.5, 2.0}}});
    } else if (g->family == "tagconv") {
      append(s, {{"hidden_dim", {128, 256, 512}}, {"num_layers", {1, 2}}, {"K", {2, 3}}, {"pooling", gnn_pooling_all()}});
    } else if (g->family == "appnp") {
      append(s, {{"hidden_dim", {128, 256, 512}},
                 {"num_layers", {1, 2}},
                 {"K", {2, 3}},
                 {"appnp_alpha", {0.1, 0.5, 0.9}},
                 {"pooling", gnn_pooling_all()}});
    }
  } else if (method == "ettin-hga") {
    append(s, {{"attention_dropout", dropout_options()}, {"quality_layers", classifier_layer_options()}});
  }
  return s;
}

bool in_space(const SearchSpace& space, const json& hp) {
  for (const auto& c : space) {
    if (!hp.contains(c.name)) return false;
    if (std::find(c.options.begin(), c.options.end(), hp[c.name]) == c.options.end()) return false;
  }
  return true;
}

json sample_hyperparameters(const SearchSpace& space, Rng& rng) {
  json hp = json::object();
  for (const auto& c : space) hp[c.name] = c.options[static_cast<std::size_t>(rng.uniform_index(c.options.size()))];
  return hp;
}

json build_estimator_config(const TrialConfig& cfg, const TrialDims& dims, std::uint64_t seed) {
  std::string method = cfg.method;
  json hp = cfg.hp.is_null() ? json::object() : cfg.hp;
  if (method == "ce") {
    if (!hp.contains("family")) throw ConfigError("method ce needs hp.family");
    method = "ce-" + hp_string(hp, "family");
  }
  if (!is_known_method(method)) throw ConfigError("unknown method '" + method + "'");
  json c = {{"method", method}, {"seed", seed}, {"hp", hp}};
  if (uses_probe(method)) {
    if (dims.probe_config.is_null()) throw ConfigError(method + " needs a trained PHSV-half probe");
    c["probe"] = dims.probe_config;
  }
  if (method == "pik" || method == "phsv" || method == "phsv-half") {
    c["input_dim"] = dims.hidden_dim;
  } else if (starts_with(method, "sfhs-") || starts_with(method, "tlcc-")) {
    const bool tlcc = starts_with(method, "tlcc-");
    c["source"] = tlcc ? "tlcc" : "hidden";
    c["kind"] = kind_of(method);
    c["input_dim"] = tlcc ? dims.tlcc_dim : dims.hidden_dim;
    if (tlcc && !dims.tlcc_norm.is_null()) c["norm"] = dims.tlcc_norm;
  } else if (auto g = parse_gnn(method)) {
    c["family"] = g->family;
    c["input_dim"] = dims.hidden_dim;
    if (g->cd) {
      c["finetune"] = g->finetune;
      c["dual"] = g->dual;
      c["distance"] = hp.value("distance", std::string("wasserstein"));
      c["hp"].erase("distance");
    }
  } else if (starts_with(method, "ce-")) {
    c["family"] = method.substr(3);
    c["trajectory_length"] = kDefaultTrajectoryLength;
    c.erase("hp");
    c["options"] = json::object();
  } else if (starts_with(method, "latefusion-")) {
    c["kind"] = kind_of(method);
    c["finetune"] = method.find("-ft-") != std::string::npos;
    c["input_dim"] = dims.hidden_dim;
  } else {
    c["encoder"] = dims.encoder;
  }
  return c;
}

std::size_t count_parameters(const json& config) {
  const std::string method = config.at("method").get<std::string>();
  if (!is_known_method(method) || method == "ce") throw ConfigError("unknown method '" + method + "'");
  try {
    if (starts_with(method, "ce-")) return 0;
    const json& hp = config.at("hp");
    if (method == "pik") return PikEstimator::count_parameters(hp, config.at("input_dim").get<std::size_t>());
    if (method == "phsv" || method == "phsv-half") {
      return PhsvEstimator::count_parameters(hp, config.at("input_dim").get<std::size_t>());
    }
    if (starts_with(method, "sfhs-") || starts_with(method, "tlcc-")) {
      return SequenceHeadEstimator::count_parameters(config.at("kind").get<std::string>(), hp,
                                                     config.at("input_dim").get<std::size_t>());
    }
    if (starts_with(method, "gnn-")) return GnnEstimator::count_parameters(config);
    if (starts_with(method, "latefusion-")) return LateFusionEstimator::count_parameters(config);
    const auto dim = config.contains("encoder_dim")
                         ? config["encoder_dim"].get<std::size_t>()
                         : static_cast<std::size_t>(
                               make_encoder(config.value("encoder", std::string("hashing-64-512")))->dim());
    if (method == "ettin") return EttinEstimator::count_parameters(hp, dim);
    return HgaEstimator::count_parameters(hp, dim);
  } catch (const json::exception& e) {
    throw ConfigError("parameter count for '" + method + "': " + e.what());
  }
}

std::size_t count_parameters(const TrialConfig& cfg, const TrialDims& dims) {
  return count_parameters(build_estimator_config(cfg, dims, 0));
}

json TrialResult::to_json() const {
  return {{"index", index},
          {"method", method},
          {"hp", hp},
          {"status", status},
          {"parameter_count", parameter_count},
          {"best_epoch", best_epoch},
          {"epochs_run", epochs_run},
          {"val_composite", val_composite},
          {"val_auroc", val_auroc},
          {"val_ece", val_ece},
          {"threshold", threshold},
          {"sensitivity", sensitivity},
          {"specificity", specificity},
          {"feasible", feasible},
          {"history", history}};
}

TrialRun run_trial(const TrialConfig& cfg, const TrialData& data, std::uint64_t seed, TrainOptions options,
                   std::size_t budget) {
  TrialDims dims;
  dims.hidden_dim = data.hidden_dim;
  dims.encoder = data.encoder;
  if (uses_probe(cfg.method)) {
    if (!data.probe) throw ConfigError(cfg.method + " needs a trained PHSV-half probe");
    dims.probe_config = data.probe->config();
  }
  if (starts_with(cfg.method, "tlcc-")) {
    std::vector<const nn::Matrix*> blocks;
    for (const auto* ex : data.train) blocks.push_back(&ex->tlcc);
    dims.tlcc_norm = Standardizer::fit(blocks).to_json();
  }
  const json config = build_estimator_config(cfg, dims, seed);
  const std::size_t params = count_parameters(config);
  if (params > budget) {
    throw BudgetExceeded(cfg.method + " configuration has " + std::to_string(params) +
                         " trainable parameters (budget " + std::to_string(budget) + ")");
  }

  TrialRun run;
  run.estimator = estimator_from_config(config, data.services);
  if (data.probe) {
    if (auto* g = dynamic_cast<GnnEstimator*>(run.estimator.get()); g && g->mutable_probe()) {
      g->mutable_probe()->load_from(*data.probe);
    } else if (auto* lf = dynamic_cast<LateFusionEstimator*>(run.estimator.get())) {
      lf->probe().load_from(*data.probe);
    } else if (auto* ce = dynamic_cast<CeEstimator*>(run.estimator.get())) {
      ce->probe().load_from(*data.probe);
    }
  }

  if (cfg.hp.contains("learning_rate")) options.learning_rate = hp_double(cfg.hp, "learning_rate");
  if (cfg.hp.contains("weight_decay")) options.weight_decay = hp_double(cfg.hp, "weight_decay");
  options.seed = seed;

  TrainOutcome out;
  if (auto* neural = dynamic_cast<NeuralEstimator*>(run.estimator.get())) {
    out = train_neural(*neural, data.train, data.val, options);
  } else if (auto* fittable = dynamic_cast<FittableEstimator*>(run.estimator.get())) {
    out = train_fittable(*fittable, data.train, data.val, options);
  } else {
    throw ConfigError("estimator '" + cfg.method + "' cannot be trained");
  }

  TrialResult& r = run.result;
  r.method = config.at("method").get<std::string>();
  r.hp = cfg.hp;
  r.status = out.pruned ? "pruned" : "complete";
  r.parameter_count = params;
  r.best_epoch = out.best_epoch;
  r.epochs_run = out.epochs_run;
  r.val_composite = out.val_composite;
  r.val_auroc = out.val_auroc;
  r.val_ece = out.val_ece;
  r.threshold = out.operating_point.threshold;
  r.sensitivity = out.operating_point.sensitivity;
  r.specificity = out.operating_point.specificity;
  r.feasible = out.operating_point.feasible;
  r.history = out.history;
  return run;
}

Selection select_best(std::span<const TrialResult> trials) {
  if (trials.empty()) throw InvalidInput("select_best needs at least one trial");
  auto best_of = [&](bool feasible_only) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i) {
      if (feasible_only && !trials[i].feasible) continue;
      if (!best || trials[i].val_composite > trials[*best].val_composite) best = i;
    }
    return best;
  };
  if (auto f = best_of(true)) return {*f, false};
  return {*best_of(false), true};
}

bool prune_decision(std::span<const double> history, std::span<const double> peer_medians, int warmup_epochs) {
  const std::size_t epoch = history.size();
  if (epoch == 0 || static_cast<int>(epoch) <= warmup_epochs) return false;
  if (peer_medians.size() < epoch) return false;
  const double median = peer_medians[epoch - 1];
  if (std::isnan(median)) return false;
  const double best = *std::max_element(history.begin(), history.end());
  return best < median;
}

void MedianPruner::report(std::size_t trial, int epoch, double value) {
  std::lock_guard lock(mutex_);
  auto& v = values_[trial];
  if (static_cast<int>(v.size()) != epoch - 1) throw InvalidInput("pruner: epochs must be reported in order");
  v.push_back(value);
}

void MedianPruner::finish(std::size_t trial) {
  std::lock_guard lock(mutex_);
  if (finished_.size() <= trial) finished_.resize(trial + 1, false);
  finished_[trial] = true;
}

double MedianPruner::peer_median(std::size_t trial, int epoch) const {
  std::lock_guard lock(mutex_);
  std::vector<double> vals;
  for (const auto& [id, v] : values_) {
    if (id == trial || id >= finished_.size() || !finished_[id]) continue;
    if (static_cast<int>(v.size()) >= epoch) vals.push_back(v[static_cast<std::size_t>(epoch - 1)]);
  }
  if (vals.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(vals.begin(), vals.end());
  const std::size_t m = vals.size() / 2;
  return vals.size() % 2 ? vals[m] : 0.5 * (vals[m - 1] + vals[m]);
}

bool MedianPruner::should_prune(std::size_t trial, std::span<const double> history) const {
  std::vector<double> medians;
  for (std::size_t e = 1; e <= history.size(); ++e) medians.push_back(peer_median(trial, static_cast<int>(e)));
  return prune_decision(history, medians, warmup_);
}

namespace {

std::size_t space_cardinality(const SearchSpace& space, std::size_t cap) {
  std::size_t n = 1;
  for (const auto& c : space) {
    n *= c.options.size();
    if (n >= cap) return cap;
  }
  return n;
}

}  // namespace

StudyResult run_study(const std::string& method, const TrialData& data, const StudyOptions& options) {
  if (options.n_trials == 0 || options.n_trials > kMaxTrials) {
    throw ConfigError("n_trials must be in [1, " + std::to_string(kMaxTrials) + "]");
  }
  const SearchSpace space = search_space(method);
  const std::size_t n = std::min(options.n_trials, space_cardinality(space, options.n_trials));
  Rng sampler = Rng(options.seed).split(stable_hash64(method));
  MedianPruner pruner(options.warmup_epochs);
  std::ofstream ledger;
  if (options.ledger) {
    ledger.open(*options.ledger, std::ios::trunc);
    if (!ledger) throw IoError("cannot write " + options.ledger->string());
  }
  std::mutex ledger_mutex;

  StudyResult study;
  std::set<std::string> seen;
  std::vector<TrialResult> completed, partial;
  std::vector<std::size_t> completed_index, partial_index;
  std::unique_ptr<Estimator> best_completed, best_partial;

  for (std::size_t i = 0; i < n; ++i) {
    json hp = sample_hyperparameters(space, sampler);
    for (int attempt = 0; attempt < 64 && seen.count(hp.dump()); ++attempt) hp = sample_hyperparameters(space, sampler);
    seen.insert(hp.dump());
    const std::uint64_t seed = Rng(options.seed).split(i + 1).next_u64();

    TrainOptions train = options.train;
    train.on_epoch = [&, i, hp](int epoch, double value, const std::vector<double>& history) {
      pruner.report(i, epoch, value);
      if (ledger.is_open()) {
        std::lock_guard lock(ledger_mutex);
        ledger << json{{"trial", i}, {"method", method}, {"epoch", epoch}, {"composite", value}, {"hp", hp}}.dump()
               << '\n';
      }
      return pruner.should_prune(i, history);
    };

    TrialResult result;
    TrialRun run;
    try {
      run = run_trial({method, hp}, data, seed, train, options.budget);
      result = run.result;
    } catch (const BudgetExceeded&) {
      result.method = method;
      result.hp = hp;
      result.status = "rejected";
      try {
        TrialDims dims;
        dims.hidden_dim = data.hidden_dim;
        dims.encoder = data.encoder;
        if (data.probe) dims.probe_config = data.probe->config();
        result.parameter_count = count_parameters({method, hp}, dims);
      } catch (const Error&) {
      }
    }
    result.index = i;
    if (result.status == "complete") pruner.finish(i);
    study.trials.push_back(result);

    auto keep = [&](std::vector<TrialResult>& pool, std::vector<std::size_t>& idx, std::unique_ptr<Estimator>& best) {
      pool.push_back(result);
      idx.push_back(i);
      if (select_best(pool).index == pool.size() - 1) best = std::move(run.estimator);
    };
    if (result.status == "complete") keep(completed, completed_index, best_completed);
    else if (result.status == "pruned") keep(partial, partial_index, best_partial);
  }

  if (!completed.empty()) {
    const Selection s = select_best(completed);
    study.best = {completed_index[s.index], s.infeasible};
    study.estimator = std::move(best_completed);
  } else if (!partial.empty()) {
    const Selection s = select_best(partial);
    study.best = {partial_index[s.index], s.infeasible};
    study.estimator = std::move(best_partial);
  } else {
    throw BudgetExceeded("every " + method + " trial exceeded the parameter budget");
  }
  return study;
}

std::string trace_set_digest(std::span<const TraceExample* const> traces) {
  std::vector<std::pair<std::string, std::string>> ids;
  for (const auto* t : traces) ids.emplace_back(t->record_id, t->model_id);
  std::sort(ids.begin(), ids.end());
  std::string buf;
  for (const auto& [r, m] : ids) {
    append_length_prefixed(buf, r);
    append_length_prefixed(buf, m);
  }
  return sha256_hex(buf);
}

PartitionRecord record_partition(const HalfPartition& partition) {
  PartitionRecord rec;
  rec.probe_digest = trace_set_digest(partition.probe_half);
  rec.complement_digest = trace_set_digest(partition.complement);
  rec.probe_size = partition.probe_half.size();
  rec.complement_size = partition.complement.size();
  std::set<std::pair<std::string, std::string>> probe;
  for (const auto* t : partition.probe_half) probe.emplace(t->record_id, t->model_id);
  rec.disjoint = std::none_of(partition.complement.begin(), partition.complement.end(), [&](const TraceExample* t) {
    return probe.count({t->record_id, t->model_id}) > 0;
  });
  return rec;
}

bool verify_partition(const json& manifest, std::span<const TraceExample* const> probe_half,
                      std::span<const TraceExample* const> complement) {
  if (!manifest.contains("phsv_half")) return false;
  const json& p = manifest["phsv_half"];
  HalfPartition part{{probe_half.begin(), probe_half.end()}, {complement.begin(), complement.end()}};
  const PartitionRecord rec = record_partition(part);
  return rec.disjoint && p.value("disjoint", false) && p.value("probe_digest", std::string()) == rec.probe_digest &&
         p.value("complement_digest", std::string()) == rec.complement_digest;
}

}  // namespace tracecal

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/estimator.hpp"
#include "tracecal/probes.hpp"
#include "tracecal/training.hpp"

namespace tracecal {

inline constexpr std::size_t kParameterBudget = 3'200'000;
inline constexpr std::size_t kMaxTrials = 100;
inline constexpr int kPrunerWarmupEpochs = 10;

// One discrete hyperparameter and its admissible values.
struct Choice {
  std::string name;
  std::vector<nlohmann::json> options;
};
using SearchSpace = std::vector<Choice>;

// Every method with a search space, in catalog order.
const std::vector<std::string>& searchable_methods();
bool is_known_method(const std::string& method);
// Shared space plus the method's own rows. Unknown methods raise ConfigError.
SearchSpace search_space(const std::string& method);
// True when every key of the space is present in `hp` with an admissible value.
bool in_space(const SearchSpace& space, const nlohmann::json& hp);
// Independent uniform draw per choice.
nlohmann::json sample_hyperparameters(const SearchSpace& space, Rng& rng);

// Methods built on a trained PHSV-half probe.
bool uses_probe(const std::string& method);

struct TrialConfig {
  std::string method;
  nlohmann::json hp = nlohmann::json::object();
};

// Data-dependent context needed to turn a TrialConfig into an estimator.
struct TrialDims {
  std::size_t hidden_dim = 0;
  std::size_t tlcc_dim = 41;
  nlohmann::json probe_config;  // PHSV-half config for probe-based methods
  nlohmann::json tlcc_norm;     // Standardizer for tlcc-* methods
  std::string encoder = "hashing-64-512";
};

// Full estimator config for `cfg` (the form accepted by
// estimator_from_config). The "ce" method resolves to ce-<hp.family>.
nlohmann::json build_estimator_config(const TrialConfig& cfg, const TrialDims& dims,
                                      std::uint64_t seed);

// Trainable parameter count of an estimator config. Frozen text-encoder
// weights are excluded; an embedded probe counts only when fine-tuned.
std::size_t count_parameters(const nlohmann::json& estimator_config);
std::size_t count_parameters(const TrialConfig& cfg, const TrialDims& dims);

struct TrialResult {
  std::size_t index = 0;
  std::string method;
  nlohmann::json hp;
  std::string status = "complete";  // complete | pruned | rejected
  std::size_t parameter_count = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  double val_composite = 0;
  double val_auroc = 0;
  double val_ece = 0;
  double threshold = 0.5;
  double sensitivity = 0;
  double specificity = 0;
  bool feasible = false;
  std::vector<double> history;

  nlohmann::json to_json() const;
  bool operator==(const TrialResult&) const = default;
};

struct TrialData {
  std::span<const TraceExample* const> train;
  std::span<const TraceExample* const> val;
  std::size_t hidden_dim = 0;
  std::shared_ptr<const PhsvEstimator> probe;
  Services services = Services::defaults();
  std::string encoder = "hashing-64-512";
};

struct TrialRun {
  TrialResult result;
  std::unique_ptr<Estimator> estimator;
};

// Trains one configuration. Configurations over the parameter budget raise
// BudgetExceeded before any estimator is built. `options` supplies epochs,
// patience, batch size and the pruning hook; learning_rate and weight_decay
// come from cfg.hp when present.
TrialRun run_trial(const TrialConfig& cfg, const TrialData& data, std::uint64_t seed,
                   TrainOptions options = {}, std::size_t budget = kParameterBudget);

struct Selection {
  std::size_t index = 0;  // position in the input list
  bool infeasible = false;
};

// Highest composite among feasible trials, earlier index on ties; when none
// is feasible, the best overall flagged infeasible. Empty input raises
// InvalidInput.
Selection select_best(std::span<const TrialResult> trials);

// Prune when the running best of `history` is strictly below the peer
// median at the latest epoch. Epochs up to `warmup_epochs` and epochs with
// no peer value (NaN) never prune.
bool prune_decision(std::span<const double> history, std::span<const double> peer_medians,
                    int warmup_epochs = kPrunerWarmupEpochs);

// Median pruner over an append-only per-epoch ledger. Only finished
// (completed) trials count as peers.
class MedianPruner {
 public:
  explicit MedianPruner(int warmup_epochs = kPrunerWarmupEpochs) : warmup_(warmup_epochs) {}
  void report(std::size_t trial, int epoch, double value);
  void finish(std::size_t trial);
  // Uses the ledger values of every other finished trial.
  bool should_prune(std::size_t trial, std::span<const double> history) const;
  // Median of finished trials' values at `epoch` (1-based), NaN if none.
  double peer_median(std::size_t trial, int epoch) const;

 private:
  int warmup_;
  mutable std::mutex mutex_;
  std::map<std::size_t, std::vector<double>> values_;
  std::vector<bool> finished_;
};

struct StudyOptions {
  std::size_t n_trials = kMaxTrials;
  std::uint64_t seed = 0;
  std::size_t budget = kParameterBudget;
  int warmup_epochs = kPrunerWarmupEpochs;
  TrainOptions train;
  std::optional<std::filesystem::path> ledger;  // study.jsonl
};

struct StudyResult {
  std::vector<TrialResult> trials;
  Selection best;
  std::unique_ptr<Estimator> estimator;  // trained at the selected trial
};

// Random search over the method's space. Duplicate draws are re-sampled (up
// to a bounded number of attempts) so small spaces are enumerated without
// repeats. Rejected and pruned trials count toward n_trials.
StudyResult run_study(const std::string& method, const TrialData& data, const StudyOptions& options);

// Run manifest: seed, split digests and the two-stage partition check.
struct PartitionRecord {
  std::string probe_digest;
  std::string complement_digest;
  std::size_t probe_size = 0;
  std::size_t complement_size = 0;
  bool disjoint = false;
};
// Digest of a sorted (record_id, model_id) list.
std::string trace_set_digest(std::span<const TraceExample* const> traces);
PartitionRecord record_partition(const HalfPartition& partition);
bool verify_partition(const nlohmann::json& manifest, std::span<const TraceExample* const> probe_half,
                      std::span<const TraceExample* const> complement);

}  // namespace tracecal

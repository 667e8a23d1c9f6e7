#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/data.hpp"
#include "tracecal/estimator.hpp"
#include "tracecal/hpo.hpp"
#include "tracecal/llm.hpp"
#include "tracecal/reporting.hpp"
#include "tracecal/representation.hpp"
#include "tracecal/segmentation.hpp"

namespace tracecal::cli {

namespace fs = std::filesystem;

// Output of `segment`: one row per trace, chunks without labels.
struct SegmentedTrace {
  std::string record_id;
  std::string model_id;
  std::string response;
  std::vector<std::string> chunks;
};

std::vector<SegmentedTrace> segment_traces(const std::vector<RawTrace>& raw, const KeywordSet& keywords,
                                           const SegmentOptions& options, const std::string& terminator);
void write_segmented(const fs::path& path, const std::vector<SegmentedTrace>& rows);
std::vector<SegmentedTrace> read_segmented(const fs::path& path);

struct GradeSummary {
  std::vector<TraceAnnotation> graded;
  std::vector<nlohmann::json> failures;  // {"record_id","model_id","error"}
};

// "exact": final label by string match of the stated answer, chunk labels
// null. "judge": per-chunk and final labels from the judge endpoint.
GradeSummary grade_traces(const std::vector<ReasoningRecord>& records, const std::vector<SegmentedTrace>& traces,
                          const std::string& mode, const std::string& terminator, const GenerationConfig& judge,
                          const ChatTransport* transport);

// Train/val/test membership of assembled examples.
struct SplitView {
  std::vector<TraceExample> examples;
  std::vector<const TraceExample*> train, val, test;
  std::vector<SplitAssignment> assignments;
  std::size_t hidden_dim = 0;
};

struct DataPaths {
  fs::path traces;
  fs::path records;
  fs::path reps;
  std::optional<fs::path> splits;
};

// Loads and joins the inputs. Without a splits file the training pool is
// split by stratified_split(val_fraction, seed, test_datasets).
SplitView load_split_view(const DataPaths& paths, double val_fraction, std::uint64_t seed,
                          const std::vector<std::string>& test_datasets);

struct TrainRequest {
  std::string method;
  DataPaths data;
  fs::path out;
  std::optional<nlohmann::json> hp;        // fixed configuration, no search
  std::optional<nlohmann::json> probe_hp;  // fixed PHSV-half configuration
  std::size_t trials = 20;
  std::size_t probe_trials = 20;
  double val_fraction = 0.2;
  std::vector<std::string> test_datasets;
  std::uint64_t seed = 0;
  TrainOptions train;
  std::string encoder = "hashing-64-512";
};

// Trains (searching unless hp is fixed) and writes into `out`:
//   model/        checkpoint of the selected estimator
//   probe/        PHSV-half checkpoint for probe-based methods
//   trials.jsonl  one TrialResult per trial (plus probe_trials.jsonl)
//   study.jsonl   per-epoch ledger
//   splits.jsonl  the split used
//   manifest.json seed, split digest, partition record, selection
// Returns the manifest.
nlohmann::json run_training(const TrainRequest& request, const Services& services);

// Scores the examples in `split` with a trained run.
std::vector<PredictionRow> predict_run(const fs::path& run_dir, const SplitView& view, const std::string& split,
                                       const Services& services);

// Metric block over all rows (shared threshold when every row carries the
// same one, else the Youden threshold).
MetricBlock evaluate_rows(const std::vector<PredictionRow>& rows, std::size_t bins = 10);

// YVCE confidences for raw traces through a chat endpoint.
std::vector<PredictionRow> yvce_predictions(const std::vector<ReasoningRecord>& records,
                                            const std::vector<RawTrace>& raw,
                                            const std::vector<TraceAnnotation>& labels,
                                            const GenerationConfig& cfg, const ChatTransport& transport,
                                            std::vector<nlohmann::json>* failures);

}  // namespace tracecal::cli

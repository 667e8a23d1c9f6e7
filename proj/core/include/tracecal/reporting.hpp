#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/metrics.hpp"

namespace tracecal {

// One line of predictions.jsonl.
struct PredictionRow {
  std::string record_id;
  std::string model_id;
  std::string method;
  double score = 0;
  int label = 0;
  std::string dataset;              // optional in the file
  std::optional<double> threshold;  // operating threshold chosen on validation

  nlohmann::json to_json() const;
  static PredictionRow from_json(const nlohmann::json& j);
};

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRow> rows);

// Metrics of one (method, model, dataset) group.
struct Cell {
  std::string method;
  std::string model_id;
  std::string dataset;
  std::size_t n = 0;
  MetricBlock metrics;

  nlohmann::json to_json() const;
  static Cell from_json(const nlohmann::json& j);
};

std::vector<Cell> read_cells(const std::filesystem::path& path);
void write_cells(const std::filesystem::path& path, std::span<const Cell> cells);

// Groups predictions by (method, model_id, dataset) and evaluates each
// group. Threshold metrics use the rows' threshold when every row of the
// group carries the same one, otherwise the group's own Youden threshold.
std::vector<Cell> cells_from_predictions(std::span<const PredictionRow> rows, std::size_t bins = 10);

struct MeanStd {
  double mean = 0;
  double std = 0;  // population
  bool operator==(const MeanStd&) const = default;
};

MeanStd mean_std(std::span<const double> values);

// Metric name -> mean and std.
using AggregateBlock = std::map<std::string, MeanStd>;

struct EvaluationReport {
  std::vector<Cell> cells;
  // Stage 1: unweighted mean and std across datasets, per (method, model).
  std::map<std::pair<std::string, std::string>, AggregateBlock> llm_means;
  // Stage 2: unweighted mean and std of the stage-1 means, per method.
  std::map<std::string, AggregateBlock> overall;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// Two-stage unweighted aggregation. A (method, model) with fewer dataset
// cells than its model's most complete method is kept, with a warning
// giving the missing count. Empty input raises InvalidInput; duplicate
// (method, model, dataset) cells raise SchemaError.
EvaluationReport aggregate(std::span<const Cell> cells);

// Metrics emitted in report.csv, in column order.
const std::vector<std::string>& report_metrics();

// One row per method: mean and std for each report metric, then a "best"
// column listing the metrics on which the method is best (ties all marked;
// direction per MetricBlock::lower_is_better).
std::string report_csv(const EvaluationReport& report);

// Non-empty calibration bins, from the same binning as ece().
std::vector<CalibrationBin> reliability_data(const ScoredSet& set, std::size_t bins = 10);

struct Ellipse {
  std::string method;
  double center_x = 0, center_y = 0, std_x = 0, std_y = 0;
};

// Per method: stage-2 mean and std of the per-model means. An "ece" axis is
// emitted as 1 - ECE.
std::vector<Ellipse> ellipse_data(const EvaluationReport& report, const std::string& metric_x,
                                  const std::string& metric_y);

// method,bin,confidence_mean,accuracy,count for every method in `rows`,
// pooling its predictions.
std::string reliability_csv(std::span<const PredictionRow> rows, std::size_t bins = 10);
std::string ellipse_csv(std::span<const Ellipse> ellipses, const std::string& metric_x,
                        const std::string& metric_y);

// Fixed six-decimal formatting used by every emitted table.
std::string format_number(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tracecal

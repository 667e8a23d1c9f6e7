#include "tracecal/reporting.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "tracecal/data.hpp"
#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;

json PredictionRow::to_json() const {
  json j = {{"record_id", record_id}, {"model_id", model_id}, {"method", method}, {"score", score}, {"label", label}};
  if (!dataset.empty()) j["dataset"] = dataset;
  if (threshold) j["threshold"] = *threshold;
  return j;
}

PredictionRow PredictionRow::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("prediction row must be an object");
  PredictionRow r;
  try {
    r.record_id = j.at("record_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.score = j.at("score").get<double>();
    r.label = j.at("label").get<int>();
    r.dataset = j.value("dataset", std::string());
    if (j.contains("threshold") && !j["threshold"].is_null()) r.threshold = j["threshold"].get<double>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("prediction row: ") + e.what());
  }
  if (!(r.score >= 0 && r.score <= 1)) throw SchemaError("prediction score outside [0, 1]");
  if (r.label != 0 && r.label != 1) throw SchemaError("prediction label must be 0 or 1");
  return r;
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRow> rows;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      rows.push_back(PredictionRow::from_json(j));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return rows;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRow> rows) {
  std::vector<json> out;
  for (const auto& r : rows) out.push_back(r.to_json());
  write_jsonl(path, out);
}

json Cell::to_json() const {
  return {{"method", method}, {"model_id", model_id}, {"dataset", dataset}, {"n", n}, {"metrics", metrics.to_json()}};
}

Cell Cell::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("cell must be an object");
  Cell c;
  try {
    c.method = j.at("method").get<std::string>();
    c.model_id = j.at("model_id").get<std::string>();
    c.dataset = j.at("dataset").get<std::string>();
    c.n = j.value("n", std::size_t{0});
  } catch (const json::exception& e) {
    throw SchemaError(std::string("cell: ") + e.what());
  }
  c.metrics = MetricBlock::from_json(j.at("metrics"));
  return c;
}

std::vector<Cell> read_cells(const std::filesystem::path& path) {
  std::vector<Cell> cells;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      cells.push_back(Cell::from_json(j));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return cells;
}

void write_cells(const std::filesystem::path& path, std::span<const Cell> cells) {
  std::vector<json> out;
  for (const auto& c : cells) out.push_back(c.to_json());
  write_jsonl(path, out);
}

std::vector<Cell> cells_from_predictions(std::span<const PredictionRow> rows, std::size_t bins) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const PredictionRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.model_id, r.dataset}].push_back(&r);
  std::vector<Cell> cells;
  for (const auto& [key, members] : groups) {
    ScoredSet set;
    std::optional<double> threshold = members.front()->threshold;
    for (const auto* r : members) {
      set.scores.push_back(r->score);
      set.labels.push_back(r->label);
      if (r->threshold != threshold) threshold.reset();
    }
    Cell c;
    std::tie(c.method, c.model_id, c.dataset) = key;
    c.n = members.size();
    c.metrics = evaluate(set, threshold, bins);
    cells.push_back(std::move(c));
  }
  return cells;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("mean of an empty list");
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

namespace {

json block_json(const AggregateBlock& b) {
  json j = json::object();
  for (const auto& [name, ms] : b) j[name] = {{"mean", ms.mean}, {"std", ms.std}};
  return j;
}

}  // namespace

json EvaluationReport::to_json() const {
  json j;
  j["cells"] = json::array();
  for (const auto& c : cells) j["cells"].push_back(c.to_json());
  j["llm_means"] = json::array();
  for (const auto& [key, b] : llm_means) {
    j["llm_means"].push_back({{"method", key.first}, {"model_id", key.second}, {"metrics", block_json(b)}});
  }
  j["overall"] = json::array();
  for (const auto& [method, b] : overall) j["overall"].push_back({{"method", method}, {"metrics", block_json(b)}});
  j["warnings"] = warnings;
  return j;
}

EvaluationReport aggregate(std::span<const Cell> cells) {
  if (cells.empty()) throw InvalidInput("aggregate needs at least one cell");
  EvaluationReport report;
  report.cells.assign(cells.begin(), cells.end());
  std::map<std::pair<std::string, std::string>, std::vector<const Cell*>> by_llm;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& c : cells) {
    if (!seen.insert({c.method, c.model_id, c.dataset}).second) {
      throw SchemaError("duplicate cell (" + c.method + ", " + c.model_id + ", " + c.dataset + ")");
    }
    by_llm[{c.method, c.model_id}].push_back(&c);
  }
  std::map<std::string, std::size_t> most_datasets;
  for (const auto& [key, group] : by_llm) {
    most_datasets[key.second] = std::max(most_datasets[key.second], group.size());
  }
  for (const auto& [key, group] : by_llm) {
    const std::size_t missing = most_datasets[key.second] - group.size();
    if (missing > 0) {
      report.warnings.push_back(key.first + " / " + key.second + ": " + std::to_string(missing) +
                                " dataset cell(s) missing, excluded from the mean");
    }
    AggregateBlock b;
    for (const auto& name : MetricBlock::names()) {
      std::vector<double> v;
      for (const auto* c : group) v.push_back(c->metrics.get(name));
      b[name] = mean_std(v);
    }
    report.llm_means[key] = std::move(b);
  }
  std::map<std::string, std::vector<const AggregateBlock*>> by_method;
  for (const auto& [key, b] : report.llm_means) by_method[key.first].push_back(&b);
  for (const auto& [method, blocks] : by_method) {
    AggregateBlock b;
    for (const auto& name : MetricBlock::names()) {
      std::vector<double> v;
      for (const auto* llm : blocks) v.push_back(llm->at(name).mean);
      b[name] = mean_std(v);
    }
    report.overall[method] = std::move(b);
  }
  return report;
}

const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> m = {"ece", "brier", "acc", "f1", "specificity", "aucpr", "auroc"};
  return m;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

std::string report_csv(const EvaluationReport& report) {
  std::map<std::string, double> best;
  for (const auto& name : report_metrics()) {
    const bool lower = MetricBlock::lower_is_better(name);
    bool first = true;
    for (const auto& [method, b] : report.overall) {
      const double v = b.at(name).mean;
      if (first || (lower ? v < best[name] : v > best[name])) best[name] = v;
      first = false;
    }
  }
  std::string out = "method";
  for (const auto& name : report_metrics()) out += "," + name + "_mean," + name + "_std";
  out += ",best\n";
  for (const auto& [method, b] : report.overall) {
    out += method;
    std::string marks;
    for (const auto& name : report_metrics()) {
      const MeanStd& ms = b.at(name);
      out += "," + format_number(ms.mean) + "," + format_number(ms.std);
      if (ms.mean == best[name]) marks += (marks.empty() ? "" : ";") + name;
    }
    out += "," + marks + "\n";
  }
  return out;
}

std::vector<CalibrationBin> reliability_data(const ScoredSet& set, std::size_t bins) {
  std::vector<CalibrationBin> out;
  for (const auto& b : calibration_bins(set, bins)) {
    if (b.count > 0) out.push_back(b);
  }
  return out;
}

std::vector<Ellipse> ellipse_data(const EvaluationReport& report, const std::string& metric_x,
                                  const std::string& metric_y) {
  const auto& names = MetricBlock::names();
  for (const auto* m : {&metric_x, &metric_y}) {
    if (std::find(names.begin(), names.end(), *m) == names.end()) throw ConfigError("unknown metric '" + *m + "'");
  }
  auto axis = [](const std::string& name, double v) { return name == "ece" ? 1.0 - v : v; };
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_method;
  for (const auto& [key, b] : report.llm_means) {
    per_method[key.first].first.push_back(axis(metric_x, b.at(metric_x).mean));
    per_method[key.first].second.push_back(axis(metric_y, b.at(metric_y).mean));
  }
  std::vector<Ellipse> out;
  for (const auto& [method, xy] : per_method) {
    const MeanStd x = mean_std(xy.first), y = mean_std(xy.second);
    out.push_back({method, x.mean, y.mean, x.std, y.std});
  }
  return out;
}

std::string reliability_csv(std::span<const PredictionRow> rows, std::size_t bins) {
  std::map<std::string, ScoredSet> by_method;
  for (const auto& r : rows) {
    by_method[r.method].scores.push_back(r.score);
    by_method[r.method].labels.push_back(r.label);
  }
  std::string out = "method,bin,confidence_mean,accuracy,count\n";
  for (const auto& [method, set] : by_method) {
    const auto all = calibration_bins(set, bins);
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (all[j].count == 0) continue;
      out += method + "," + std::to_string(j) + "," + format_number(all[j].confidence_mean) + "," +
             format_number(all[j].accuracy) + "," + std::to_string(all[j].count) + "\n";
    }
  }
  return out;
}

std::string ellipse_csv(std::span<const Ellipse> ellipses, const std::string& metric_x, const std::string& metric_y) {
  auto label = [](const std::string& m) { return m == "ece" ? std::string("one_minus_ece") : m; };
  std::string out = "method,x_metric,y_metric,center_x,center_y,std_x,std_y\n";
  for (const auto& e : ellipses) {
    out += e.method + "," + label(metric_x) + "," + label(metric_y) + "," + format_number(e.center_x) + "," +
           format_number(e.center_y) + "," + format_number(e.std_x) + "," + format_number(e.std_y) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace tracecal

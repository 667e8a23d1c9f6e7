#include "tracecal_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>

#include "tracecal/config.hpp"
#include "tracecal/error.hpp"
#include "tracecal_cli/pipeline.hpp"

namespace tracecal::cli {

using nlohmann::json;

namespace {

json error_json(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing input file: " + path.string());
}

// Inline JSON when the text starts with '{', otherwise a path to a JSON file.
json json_arg(const std::string& text) {
  if (!text.empty() && text.front() == '{') {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("invalid inline JSON: ") + e.what());
    }
  }
  return load_config(text);
}

std::vector<std::string> config_strings(const json& v) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      for (auto& s : config_strings(e)) out.push_back(std::move(s));
    }
  } else if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else {
    out.push_back(v.dump());
  }
  return out;
}

// Fills options not given on the command line from a config table whose
// keys are the long option names with '-' spelled '_'.
void apply_config(CLI::App& app, const json& table) {
  if (!table.is_object()) return;
  for (CLI::Option* opt : app.get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    std::string key = opt->get_lnames().front();
    if (key == "help" || key == "config") continue;
    std::replace(key.begin(), key.end(), '-', '_');
    auto it = table.find(key);
    if (it == table.end()) continue;
    // Objects (hyperparameter tables) are passed through as inline JSON.
    const auto values = it->is_object() ? std::vector<std::string>{it->dump()} : config_strings(*it);
    for (const auto& v : values) opt->add_result(v);
    opt->run_callback();
  }
}

std::string failures_path(const fs::path& out) { return out.string() + ".failures.jsonl"; }

GenerationConfig generation_config(const std::string& model, const std::string& base_url, int max_tokens,
                                   std::size_t concurrency, int retries) {
  GenerationConfig cfg = generation_preset(model);
  if (!base_url.empty()) cfg.base_url = base_url;
  if (max_tokens > 0) cfg.max_tokens = max_tokens;
  if (concurrency > 0) cfg.max_concurrency = concurrency;
  if (retries >= 0) {
    if (retries > 3) throw ConfigError("--retries must be at most 3");
    cfg.max_retries = retries;
  }
  return cfg;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::size_t start = 0;
    while (start <= item.size()) {
      const std::size_t comma = item.find(',', start);
      const std::string part = item.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!part.empty()) out.push_back(part);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence estimation for reasoning traces", "tracecal"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_path;
  app.add_option("--config", config_path, "TOML or JSON config; [<subcommand>] tables supply option defaults");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_path, "Output file or directory");

  // segment
  auto* seg = app.add_subcommand("segment", "Split raw traces into reasoning chunks");
  std::string seg_raw, seg_keywords, terminator = "</think>";
  std::size_t prefix_window = SegmentOptions{}.prefix_window;
  seg->add_option("--raw", seg_raw, "raw_traces.jsonl");
  seg->add_option("--keywords", seg_keywords, "Keyword set JSON (defaults built in)");
  seg->add_option("--terminator", terminator, "End-of-reasoning marker");
  seg->add_option("--prefix-window", prefix_window, "Code points searched for keywords");

  // generate
  auto* gen = app.add_subcommand("generate", "Generate traces, or YVCE confidences with --yvce");
  std::string gen_records, gen_model, base_url, gen_raw, gen_labels;
  int max_tokens = 0, retries = -1;
  std::size_t concurrency = 0;
  bool yvce = false;
  gen->add_option("--records", gen_records, "records.jsonl");
  gen->add_option("--model", gen_model, "Model id served by the endpoint");
  gen->add_option("--base-url", base_url, "OpenAI-compatible endpoint");
  gen->add_option("--max-tokens", max_tokens, "Override the preset token limit");
  gen->add_option("--concurrency", concurrency, "Concurrent requests");
  gen->add_option("--retries", retries, "Retries per request (0-3)");
  gen->add_flag("--yvce", yvce, "Elicit verbalized confidence for existing traces");
  gen->add_option("--raw", gen_raw, "raw_traces.jsonl (with --yvce)");
  gen->add_option("--labels", gen_labels, "Graded traces.jsonl (with --yvce)");

  // grade
  auto* grade = app.add_subcommand("grade", "Label segmented traces");
  std::string grade_records, grade_segmented, grade_mode = "exact", judge_model, judge_url;
  std::size_t judge_concurrency = 0;
  int judge_retries = -1;
  grade->add_option("--records", grade_records, "records.jsonl");
  grade->add_option("--segmented", grade_segmented, "Output of segment");
  grade->add_option("--mode", grade_mode, "exact | judge")->check(CLI::IsMember({"exact", "judge"}));
  grade->add_option("--terminator", terminator, "End-of-reasoning marker");
  grade->add_option("--judge-model", judge_model, "Judge model id");
  grade->add_option("--base-url", judge_url, "Judge endpoint");
  grade->add_option("--concurrency", judge_concurrency, "Concurrent judge requests");
  grade->add_option("--retries", judge_retries, "Retries per request (0-3)");

  // featurize
  auto* feat = app.add_subcommand("featurize", "Build a representation store from extraction rows");
  std::string extraction;
  FeaturizeOptions feat_opts;
  feat->add_option("--extraction", extraction, "extraction.jsonl");
  feat->add_option("--top-k", feat_opts.top_k, "Top-k for logit features");
  feat->add_option("--max-len-norm", feat_opts.max_len_norm, "Chunk length normalizer");

  // train
  auto* train = app.add_subcommand("train", "Train an estimator (with search unless --hp is given)");
  std::string method, traces, records, reps, splits, hp_arg, probe_hp_arg, encoder = "hashing-64-512";
  std::vector<std::string> test_datasets;
  TrainRequest req;
  train->add_option("--method", method, "Estimator method");
  train->add_option("--traces", traces, "Graded traces.jsonl");
  train->add_option("--records", records, "records.jsonl");
  train->add_option("--reps", reps, "Representation store directory");
  train->add_option("--splits", splits, "splits.jsonl (default: stratified split)");
  train->add_option("--hp", hp_arg, "Fixed hyperparameters: inline JSON or a JSON file");
  train->add_option("--probe-hp", probe_hp_arg, "Fixed PHSV-half hyperparameters");
  train->add_option("--trials", req.trials, "Search trials");
  train->add_option("--probe-trials", req.probe_trials, "Probe search trials");
  train->add_option("--val-fraction", req.val_fraction, "Validation share per dataset");
  train->add_option("--test-datasets", test_datasets, "Held-out datasets (comma separated)");
  train->add_option("--epochs", req.train.max_epochs, "Maximum epochs");
  train->add_option("--patience", req.train.patience, "Early-stopping patience");
  train->add_option("--batch-size", req.train.batch_size, "Mini-batch size");
  train->add_option("--encoder", encoder, "Text encoder for ETTIN methods");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Metric block for predictions or a trained run");
  std::string pred, run_dir, eval_split = "test", eval_traces, eval_records, eval_reps, eval_splits, pred_out,
                            cells_out;
  std::size_t bins = 10;
  eval->add_option("--pred", pred, "predictions.jsonl");
  eval->add_option("--run", run_dir, "Output directory of train");
  eval->add_option("--split", eval_split, "Split scored with --run")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--traces", eval_traces, "Graded traces.jsonl (with --run)");
  eval->add_option("--records", eval_records, "records.jsonl (with --run)");
  eval->add_option("--reps", eval_reps, "Representation store (with --run)");
  eval->add_option("--splits", eval_splits, "splits.jsonl (default: the run's)");
  eval->add_option("--predictions", pred_out, "Also write the scored rows here");
  eval->add_option("--cells", cells_out, "Also write per-dataset cells here");
  eval->add_option("--bins", bins, "Calibration bins");

  // report
  auto* report = app.add_subcommand("report", "Two-stage aggregation into report.csv and report.json");
  std::vector<std::string> report_cells;
  report->add_option("--cells", report_cells, "cells.jsonl files");

  // plot-data
  auto* plot = app.add_subcommand("plot-data", "reliability.csv and ellipse.csv");
  std::vector<std::string> plot_pred, plot_cells;
  std::string metric_x = "ece", metric_y = "auroc";
  plot->add_option("--pred", plot_pred, "predictions.jsonl files (reliability)");
  plot->add_option("--cells", plot_cells, "cells.jsonl files (ellipses)");
  plot->add_option("-x,--x-metric", metric_x, "Ellipse x metric");
  plot->add_option("-y,--y-metric", metric_y, "Ellipse y metric");
  plot->add_option("--bins", bins, "Calibration bins");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()).dump() << '\n';
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  auto usage = [&](const std::string& message) {
    err << error_json("usage", name + ": " + message).dump() << '\n';
    return 2;
  };

  try {
    if (!config_path.empty()) {
      require_file(config_path);
      const json cfg = load_config(config_path);
      apply_config(app, cfg);
      if (cfg.contains("global")) apply_config(app, cfg["global"]);
      if (cfg.contains(name)) apply_config(*sub, cfg[name]);
    }
  } catch (const CLI::ParseError& e) {
    return usage(std::string("config: ") + e.what());
  } catch (const Error& e) {
    err << error_json(e.kind(), e.what()).dump() << '\n';
    return 1;
  }

  if (out_path.empty()) return usage("--out is required");
  const fs::path out_p = out_path;

  try {
    const Services services = Services::defaults();

    if (name == "segment") {
      if (seg_raw.empty()) return usage("--raw is required");
      require_file(seg_raw);
      const KeywordSet kw = seg_keywords.empty() ? KeywordSet::defaults() : KeywordSet::load(seg_keywords);
      const auto raw = read_raw_traces(seg_raw);
      const auto rows = segment_traces(raw, kw, SegmentOptions{prefix_window}, terminator);
      write_segmented(out_p, rows);
      out << json{{"segmented", rows.size()}, {"skipped_empty", raw.size() - rows.size()}}.dump() << '\n';
      return 0;
    }

    if (name == "generate") {
      if (gen_model.empty()) return usage("--model is required");
      if (gen_records.empty()) return usage("--records is required");
      require_file(gen_records);
      const GenerationConfig cfg = generation_config(gen_model, base_url, max_tokens, concurrency, retries);
      const HttpChatTransport transport(cfg);
      const auto recs = read_records(gen_records);
      std::vector<json> failures;
      if (yvce) {
        if (gen_raw.empty() || gen_labels.empty()) return usage("--yvce needs --raw and --labels");
        require_file(gen_raw);
        require_file(gen_labels);
        const auto rows =
            yvce_predictions(recs, read_raw_traces(gen_raw), read_traces(gen_labels), cfg, transport, &failures);
        write_predictions(out_p, rows);
        out << json{{"predictions", rows.size()}, {"failures", failures.size()}}.dump() << '\n';
      } else {
        std::vector<RawTrace> raw;
        for (const auto& o : generate_batch(recs, cfg, transport)) {
          if (o.response) raw.push_back({o.record_id, gen_model, *o.response});
          else failures.push_back({{"record_id", o.record_id}, {"model_id", gen_model}, {"error", o.error}});
        }
        write_raw_traces(raw, out_p);
        out << json{{"generated", raw.size()}, {"failures", failures.size()}}.dump() << '\n';
      }
      if (!failures.empty()) {
        write_jsonl(failures_path(out_p), failures);
        err << error_json("generation_failure", std::to_string(failures.size()) + " request(s) failed; see " +
                                                    failures_path(out_p))
                   .dump()
            << '\n';
        return 1;
      }
      return 0;
    }

    if (name == "grade") {
      if (grade_records.empty() || grade_segmented.empty()) return usage("--records and --segmented are required");
      require_file(grade_records);
      require_file(grade_segmented);
      std::optional<GenerationConfig> cfg;
      std::optional<HttpChatTransport> transport;
      if (grade_mode == "judge") {
        if (judge_model.empty()) return usage("--mode judge needs --judge-model");
        cfg = generation_config(judge_model, judge_url, 0, judge_concurrency, judge_retries);
        transport.emplace(*cfg);
      }
      const GradeSummary s = grade_traces(read_records(grade_records), read_segmented(grade_segmented), grade_mode,
                                          terminator, cfg.value_or(GenerationConfig{}),
                                          transport ? &*transport : nullptr);
      write_traces(s.graded, out_p);
      out << json{{"graded", s.graded.size()}, {"failures", s.failures.size()}}.dump() << '\n';
      if (!s.failures.empty()) {
        write_jsonl(failures_path(out_p), s.failures);
        err << error_json("grade_failure", std::to_string(s.failures.size()) + " trace(s) not graded; see " +
                                               failures_path(out_p))
                   .dump()
            << '\n';
        return 1;
      }
      return 0;
    }

    if (name == "featurize") {
      if (extraction.empty()) return usage("--extraction is required");
      require_file(extraction);
      std::vector<TraceRepresentation> reps_out;
      for_each_jsonl(extraction, [&](const json& row, std::size_t line) {
        try {
          reps_out.push_back(featurize_extraction(row, feat_opts));
        } catch (const Error& e) {
          throw SchemaError(extraction + ":" + std::to_string(line) + ": " + e.what());
        }
      });
      const std::size_t n = reps_out.size();
      write_representation_store(out_p, std::move(reps_out));
      out << json{{"traces", n}}.dump() << '\n';
      return 0;
    }

    if (name == "train") {
      if (method.empty() || traces.empty() || records.empty() || reps.empty()) {
        return usage("--method, --traces, --records and --reps are required");
      }
      require_file(traces);
      require_file(records);
      require_file(reps);
      req.method = method;
      req.data = {traces, records, reps, splits.empty() ? std::nullopt : std::optional<fs::path>(splits)};
      if (!splits.empty()) require_file(splits);
      req.out = out_p;
      if (!hp_arg.empty()) req.hp = json_arg(hp_arg);
      if (!probe_hp_arg.empty()) req.probe_hp = json_arg(probe_hp_arg);
      req.test_datasets = split_list(test_datasets);
      req.seed = seed;
      req.train.seed = seed;
      req.encoder = encoder;
      const json manifest = run_training(req, services);
      out << manifest["selected"].dump() << '\n';
      return 0;
    }

    if (name == "evaluate") {
      if (pred.empty() == run_dir.empty()) return usage("exactly one of --pred and --run is required");
      std::vector<PredictionRow> rows;
      if (!pred.empty()) {
        require_file(pred);
        rows = read_predictions(pred);
      } else {
        if (eval_traces.empty() || eval_records.empty() || eval_reps.empty()) {
          return usage("--run needs --traces, --records and --reps");
        }
        require_file(eval_traces);
        require_file(eval_records);
        require_file(eval_reps);
        const fs::path split_file = eval_splits.empty() ? fs::path(run_dir) / "splits.jsonl" : fs::path(eval_splits);
        require_file(split_file);
        require_file(fs::path(run_dir) / "model");
        const SplitView view = load_split_view({eval_traces, eval_records, eval_reps, split_file}, 0, seed, {});
        rows = predict_run(run_dir, view, eval_split, services);
      }
      if (!pred_out.empty()) write_predictions(pred_out, rows);
      if (!cells_out.empty()) write_cells(cells_out, cells_from_predictions(rows, bins));
      const MetricBlock m = evaluate_rows(rows, bins);
      write_json_file(out_p, m.to_json());
      out << m.to_json().dump() << '\n';
      return 0;
    }

    if (name == "report") {
      if (report_cells.empty()) return usage("--cells is required");
      std::vector<Cell> cells;
      for (const auto& path : report_cells) {
        require_file(path);
        for (auto& c : read_cells(path)) cells.push_back(std::move(c));
      }
      const EvaluationReport rep = aggregate(cells);
      fs::create_directories(out_p);
      write_text(out_p / "report.csv", report_csv(rep));
      write_text(out_p / "report.json", rep.to_json().dump(2) + "\n");
      for (const auto& w : rep.warnings) err << error_json("warning", w).dump() << '\n';
      out << json{{"methods", rep.overall.size()}, {"cells", rep.cells.size()}}.dump() << '\n';
      return 0;
    }

    if (name == "plot-data") {
      if (plot_pred.empty() && plot_cells.empty()) return usage("--pred or --cells is required");
      fs::create_directories(out_p);
      json written = json::array();
      if (!plot_pred.empty()) {
        std::vector<PredictionRow> rows;
        for (const auto& path : plot_pred) {
          require_file(path);
          for (auto& r : read_predictions(path)) rows.push_back(std::move(r));
        }
        write_text(out_p / "reliability.csv", reliability_csv(rows, bins));
        written.push_back("reliability.csv");
      }
      if (!plot_cells.empty()) {
        std::vector<Cell> cells;
        for (const auto& path : plot_cells) {
          require_file(path);
          for (auto& c : read_cells(path)) cells.push_back(std::move(c));
        }
        const auto ellipses = ellipse_data(aggregate(cells), metric_x, metric_y);
        write_text(out_p / "ellipse.csv", ellipse_csv(ellipses, metric_x, metric_y));
        written.push_back("ellipse.csv");
      }
      out << json{{"written", written}}.dump() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    err << error_json(e.kind(), e.what()).dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what()).dump() << '\n';
    return 1;
  }
  return usage("unknown subcommand");
}

}  // namespace tracecal::cli

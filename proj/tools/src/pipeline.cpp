#include "tracecal_cli/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "tracecal/error.hpp"
#include "tracecal/probes.hpp"

namespace tracecal::cli {

using nlohmann::json;

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t max_threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(max_threads, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

std::map<std::string, const ReasoningRecord*> index_records(const std::vector<ReasoningRecord>& records) {
  std::map<std::string, const ReasoningRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;
  return by_id;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void write_trials(const fs::path& path, const std::vector<TrialResult>& trials) {
  std::vector<json> rows;
  for (const auto& t : trials) rows.push_back(t.to_json());
  write_jsonl(path, rows);
}

json selection_json(const TrialResult& r, const Selection& s) {
  return {{"index", s.index},         {"infeasible", s.infeasible}, {"method", r.method},
          {"hp", r.hp},               {"val_composite", r.val_composite}, {"val_auroc", r.val_auroc},
          {"val_ece", r.val_ece},     {"feasible", r.feasible},        {"threshold", r.threshold},
          {"best_epoch", r.best_epoch}, {"parameter_count", r.parameter_count}};
}

struct Fitted {
  std::unique_ptr<Estimator> estimator;
  std::vector<TrialResult> trials;
  Selection selection;
};

// One fixed trial or a search, with the per-epoch ledger at `ledger`.
Fitted fit_method(const std::string& method, const std::optional<json>& hp, std::size_t trials,
                  const TrialData& data, std::uint64_t seed, const TrainOptions& train, const fs::path& ledger) {
  Fitted f;
  if (hp) {
    std::ofstream out(ledger, std::ios::trunc);
    if (!out) throw IoError("cannot write " + ledger.string());
    TrainOptions t = train;
    t.on_epoch = [&](int epoch, double value, const std::vector<double>&) {
      out << json{{"trial", 0}, {"method", method}, {"epoch", epoch}, {"composite", value}, {"hp", *hp}}.dump()
          << '\n';
      return false;
    };
    TrialRun run = run_trial({method, *hp}, data, seed, t);
    f.estimator = std::move(run.estimator);
    f.trials.push_back(run.result);
    f.selection = {0, !run.result.feasible};
    return f;
  }
  StudyOptions opts;
  opts.n_trials = trials;
  opts.seed = seed;
  opts.train = train;
  opts.ledger = ledger;
  StudyResult study = run_study(method, data, opts);
  f.estimator = std::move(study.estimator);
  f.trials = std::move(study.trials);
  f.selection = study.best;
  return f;
}

}  // namespace

std::vector<SegmentedTrace> segment_traces(const std::vector<RawTrace>& raw, const KeywordSet& keywords,
                                           const SegmentOptions& options, const std::string& terminator) {
  std::vector<SegmentedTrace> out;
  for (const auto& r : raw) {
    ChunkingResult c = segment(reasoning_portion(r.response, terminator), keywords, options);
    if (c.chunks.empty()) continue;
    out.push_back({r.record_id, r.model_id, r.response, std::move(c.chunks)});
  }
  return out;
}

void write_segmented(const fs::path& path, const std::vector<SegmentedTrace>& rows) {
  std::vector<json> out;
  for (const auto& r : rows) {
    out.push_back({{"record_id", r.record_id}, {"model_id", r.model_id}, {"response", r.response}, {"chunks", r.chunks}});
  }
  write_jsonl(path, out);
}

std::vector<SegmentedTrace> read_segmented(const fs::path& path) {
  std::vector<SegmentedTrace> rows;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      rows.push_back({j.at("record_id").get<std::string>(), j.at("model_id").get<std::string>(),
                      j.at("response").get<std::string>(), j.at("chunks").get<std::vector<std::string>>()});
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return rows;
}

GradeSummary grade_traces(const std::vector<ReasoningRecord>& records, const std::vector<SegmentedTrace>& traces,
                          const std::string& mode, const std::string& terminator, const GenerationConfig& judge,
                          const ChatTransport* transport) {
  if (mode != "exact" && mode != "judge") throw ConfigError("grade mode must be exact or judge (got '" + mode + "')");
  if (mode == "judge" && !transport) throw ConfigError("judge grading needs an endpoint");
  const auto by_id = index_records(records);
  std::vector<std::optional<TraceAnnotation>> graded(traces.size());
  std::vector<std::string> errors(traces.size());
  parallel_for(traces.size(), mode == "judge" ? judge.max_concurrency : 1, [&](std::size_t i) {
    const SegmentedTrace& t = traces[i];
    auto rec = by_id.find(t.record_id);
    if (rec == by_id.end()) {
      errors[i] = "unknown record_id";
      return;
    }
    TraceAnnotation a{t.record_id, t.model_id, t.response, t.chunks, {}, 0};
    try {
      if (mode == "exact") {
        const std::string answer = extract_final_answer(answer_portion(t.response, terminator));
        if (answer.empty()) throw ParseError("no final answer");
        a.final_label = grade_exact(answer, rec->second->answer);
        a.chunk_labels.assign(t.chunks.size(), std::nullopt);
      } else {
        const JudgeVerdict v = judge_trace(*rec->second, t.chunks, judge, *transport);
        a.chunk_labels = v.chunk_labels;
        a.final_label = v.final_label;
      }
      graded[i] = std::move(a);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  GradeSummary s;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (graded[i]) s.graded.push_back(std::move(*graded[i]));
    else s.failures.push_back({{"record_id", traces[i].record_id}, {"model_id", traces[i].model_id}, {"error", errors[i]}});
  }
  return s;
}

SplitView load_split_view(const DataPaths& paths, double val_fraction, std::uint64_t seed,
                          const std::vector<std::string>& test_datasets) {
  SplitView view;
  const auto traces = read_traces(paths.traces);
  const auto records = read_records(paths.records);
  const auto reps = read_representation_store(paths.reps);
  view.examples = assemble_examples(traces, reps, records);
  if (view.examples.empty()) throw InvalidInput("no trace has both an annotation and a representation");
  if (paths.splits) {
    view.assignments = read_splits(*paths.splits);
  } else {
    view.assignments = stratified_split(records, val_fraction, seed, test_datasets).assignments;
  }
  std::map<std::string, Split> split_of;
  for (const auto& a : view.assignments) split_of[a.record_id] = a.split;
  for (const auto& ex : view.examples) {
    auto it = split_of.find(ex.record_id);
    if (it == split_of.end()) continue;
    (it->second == Split::kTrain ? view.train : it->second == Split::kVal ? view.val : view.test).push_back(&ex);
  }
  view.hidden_dim = static_cast<std::size_t>(view.examples.front().chunk_hidden.cols());
  return view;
}

json run_training(const TrainRequest& req, const Services& services) {
  if (!is_known_method(req.method)) throw ConfigError("unknown method '" + req.method + "'");
  SplitView view = load_split_view(req.data, req.val_fraction, req.seed, req.test_datasets);
  if (view.train.empty() || view.val.empty()) throw InvalidInput("training needs non-empty train and val splits");
  fs::create_directories(req.out);
  write_splits(view.assignments, req.out / "splits.jsonl");

  json manifest = {{"seed", req.seed},
                   {"method", req.method},
                   {"split_digest", split_digest(view.assignments)},
                   {"counts", {{"train", view.train.size()}, {"val", view.val.size()}, {"test", view.test.size()}}},
                   {"train_digest", trace_set_digest(view.train)},
                   {"val_digest", trace_set_digest(view.val)},
                   {"test_digest", trace_set_digest(view.test)}};

  TrialData data;
  data.train = view.train;
  data.val = view.val;
  data.hidden_dim = view.hidden_dim;
  data.services = services;
  data.encoder = req.encoder;

  HalfPartition part;
  if (uses_probe(req.method) || req.method == "phsv-half") {
    part = phsv_half_partition(view.train);
    const PartitionRecord rec = record_partition(part);
    manifest["phsv_half"] = {{"probe_digest", rec.probe_digest},
                             {"complement_digest", rec.complement_digest},
                             {"probe_size", rec.probe_size},
                             {"complement_size", rec.complement_size},
                             {"disjoint", rec.disjoint}};
    if (!rec.disjoint) throw TrainingError("PHSV-half partition is not disjoint");
  }
  if (req.method == "phsv-half") data.train = part.probe_half;

  if (uses_probe(req.method)) {
    TrialData probe_data = data;
    probe_data.train = part.probe_half;
    Fitted probe = fit_method("phsv-half", req.probe_hp, req.probe_trials, probe_data, req.seed ^ 0x70726f6265ULL,
                              req.train, req.out / "probe_study.jsonl");
    save_checkpoint(*probe.estimator, req.out / "probe");
    write_trials(req.out / "probe_trials.jsonl", probe.trials);
    manifest["probe"] = selection_json(probe.trials[probe.selection.index], probe.selection);
    auto* phsv = dynamic_cast<PhsvEstimator*>(probe.estimator.get());
    if (!phsv) throw TrainingError("probe stage did not produce a PHSV estimator");
    probe.estimator.release();
    data.probe = std::shared_ptr<const PhsvEstimator>(phsv);
    data.train = part.complement;
  }

  Fitted main = fit_method(req.method, req.hp, req.trials, data, req.seed, req.train, req.out / "study.jsonl");
  save_checkpoint(*main.estimator, req.out / "model");
  write_trials(req.out / "trials.jsonl", main.trials);
  manifest["selected"] = selection_json(main.trials[main.selection.index], main.selection);
  write_json_file(req.out / "manifest.json", manifest);
  return manifest;
}

std::vector<PredictionRow> predict_run(const fs::path& run_dir, const SplitView& view, const std::string& split,
                                       const Services& services) {
  const auto est = load_checkpoint(run_dir / "model", services);
  const Split s = split_from_string(split);
  const auto& members = s == Split::kTrain ? view.train : s == Split::kVal ? view.val : view.test;
  if (members.empty()) throw InvalidInput("split '" + split + "' has no examples");
  const std::vector<double> scores = est->score_all(members);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < members.size(); ++i) {
    PredictionRow r;
    r.record_id = members[i]->record_id;
    r.model_id = members[i]->model_id;
    r.method = est->method();
    r.score = scores[i];
    r.label = members[i]->label;
    r.dataset = members[i]->dataset;
    r.threshold = est->threshold();
    rows.push_back(std::move(r));
  }
  return rows;
}

MetricBlock evaluate_rows(const std::vector<PredictionRow>& rows, std::size_t bins) {
  if (rows.empty()) throw InvalidInput("no predictions to evaluate");
  ScoredSet set;
  std::optional<double> threshold = rows.front().threshold;
  for (const auto& r : rows) {
    set.scores.push_back(r.score);
    set.labels.push_back(r.label);
    if (r.threshold != threshold) threshold.reset();
  }
  return evaluate(set, threshold, bins);
}

std::vector<PredictionRow> yvce_predictions(const std::vector<ReasoningRecord>& records,
                                            const std::vector<RawTrace>& raw,
                                            const std::vector<TraceAnnotation>& labels, const GenerationConfig& cfg,
                                            const ChatTransport& transport, std::vector<json>* failures) {
  const auto by_id = index_records(records);
  std::map<std::pair<std::string, std::string>, int> label_of;
  for (const auto& t : labels) label_of[{t.record_id, t.model_id}] = t.final_label;
  std::vector<std::optional<PredictionRow>> out(raw.size());
  std::vector<std::string> errors(raw.size());
  parallel_for(raw.size(), cfg.max_concurrency, [&](std::size_t i) {
    const RawTrace& t = raw[i];
    auto rec = by_id.find(t.record_id);
    auto lab = label_of.find({t.record_id, t.model_id});
    if (rec == by_id.end() || lab == label_of.end()) {
      errors[i] = rec == by_id.end() ? "unknown record_id" : "no label for trace";
      return;
    }
    try {
      const auto msgs = yvce_messages(rec->second->prompt, t.response);
      const std::string continuation = complete_chat(transport, cfg, msgs, yvce_request_extra());
      PredictionRow r;
      r.record_id = t.record_id;
      r.model_id = t.model_id;
      r.method = "yvce";
      r.score = yvce_score(t.response, continuation);
      r.label = lab->second;
      r.dataset = rec->second->dataset;
      out[i] = std::move(r);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (out[i]) rows.push_back(std::move(*out[i]));
    else if (failures) failures->push_back({{"record_id", raw[i].record_id}, {"model_id", raw[i].model_id}, {"error", errors[i]}});
  }
  return rows;
}

}  // namespace tracecal::cli

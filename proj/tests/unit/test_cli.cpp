#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tracecal/error.hpp"
#include "tracecal/estimator.hpp"
#include "tracecal/hpo.hpp"
#include "tracecal/reporting.hpp"
#include "tracecal/training.hpp"
#include "tracecal_cli/cli.hpp"
#include "tracecal_cli/pipeline.hpp"

using namespace tracecal;
using nlohmann::json;
using tracecal::test::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<PredictionRow> toy_predictions() {
  std::vector<PredictionRow> rows;
  Rng rng(2);
  for (int i = 0; i < 60; ++i) {
    PredictionRow r;
    r.record_id = "r" + std::to_string(i);
    r.model_id = i % 2 ? "A" : "B";
    r.method = "phsv";
    r.dataset = i % 3 ? "d1" : "d2";
    r.label = static_cast<int>(rng.uniform_index(2));
    r.score = 0.3 * r.label + 0.7 * rng.uniform();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("evaluate --pred writes a metric block") {
  TempDir dir;
  const auto rows = toy_predictions();
  write_predictions(dir / "p.jsonl", rows);
  const auto r = run({"evaluate", "--pred", (dir / "p.jsonl").string(), "--out", (dir / "m.json").string(),
                      "--cells", (dir / "cells.jsonl").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const json m = json::parse(slurp(dir / "m.json"));
  for (const auto& name : MetricBlock::names()) CHECK(m.contains(name));
  CHECK(MetricBlock::from_json(m) == cli::evaluate_rows(rows));
  CHECK(read_cells(dir / "cells.jsonl").size() == 4);
}

TEST_CASE("report --cells writes a deterministic table") {
  TempDir dir;
  write_cells(dir / "cells.jsonl", cells_from_predictions(toy_predictions()));
  const auto a = run({"report", "--cells", (dir / "cells.jsonl").string(), "--out", (dir / "a").string()});
  const auto b = run({"report", "--cells", (dir / "cells.jsonl").string(), "--out", (dir / "b").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const std::string csv = slurp(dir / "a" / "report.csv");
  CHECK(csv == slurp(dir / "b" / "report.csv"));
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  CHECK(csv.rfind("method,", 0) == 0);
  CHECK(csv.find("\nphsv,") != std::string::npos);
  const auto plot = run({"plot-data", "--cells", (dir / "cells.jsonl").string(), "--out", (dir / "plot").string()});
  CHECK(plot.code == 0);
}

TEST_CASE("exit codes and machine-readable errors") {
  TempDir dir;
  const std::string missing = (dir / "nope.jsonl").string();
  const auto m = run({"evaluate", "--pred", missing, "--out", (dir / "m.json").string()});
  CHECK(m.code == 1);
  const json e = json::parse(m.err.substr(0, m.err.find('\n')));
  CHECK(e.contains("error"));
  CHECK(e["message"].get<std::string>().find(missing) != std::string::npos);

  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"evaluate", "--out", (dir / "m.json").string()}).code == 2);
  CHECK(run({"evaluate", "--pred", missing}).code == 2);
  CHECK(run({"grade", "--mode", "oracle", "--out", "x"}).code == 2);
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  for (const char* sub : {"segment", "generate", "grade", "featurize", "train", "evaluate", "report", "plot-data"}) {
    CHECK(help.out.find(sub) != std::string::npos);
  }
  const auto bad_cfg = run({"--config", missing, "report", "--cells", "x", "--out", "y"});
  CHECK(bad_cfg.code == 1);
}

TEST_CASE("config file supplies option defaults") {
  TempDir dir;
  write_cells(dir / "cells.jsonl", cells_from_predictions(toy_predictions()));
  {
    std::ofstream(dir / "run.toml") << "out = \"" << (dir / "rep").string() << "\"\n[report]\ncells = [\""
                                    << (dir / "cells.jsonl").string() << "\"]\n";
  }
  const auto r = run({"--config", (dir / "run.toml").string(), "report"});
  INFO(r.err);
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(dir / "rep" / "report.csv"));
}

TEST_CASE("checkpoints round trip every method") {
  auto set = test::synthetic_examples(test::small_corpus(60, 1.5, 21));
  TrialDims probe_dims;
  probe_dims.hidden_dim = 8;
  TrialDims dims = probe_dims;
  dims.probe_config = build_estimator_config({"phsv-half", {{"classifier_layers", {4}}}}, probe_dims, 3);
  const Services services = Services::defaults();
  for (const auto& method : searchable_methods()) {
    INFO(method);
    Rng rng(5);
    json hp = sample_hyperparameters(search_space(method), rng);
    if (hp.contains("hidden_dim")) hp["hidden_dim"] = 8;
    if (hp.contains("classifier_layers")) hp["classifier_layers"] = {4};
    auto est = estimator_from_config(build_estimator_config({method, hp}, dims, 9), services);
    if (auto* fit = dynamic_cast<FittableEstimator*>(est.get())) fit->fit(set->pool, rng);
    if (auto* neural = dynamic_cast<NeuralEstimator*>(est.get())) {
      TrainOptions opt;
      opt.max_epochs = 1;
      train_neural(*neural, set->pool, set->pool, opt);
    }
    est->set_threshold(0.375);
    TempDir dir;
    save_checkpoint(*est, dir / "ckpt");
    const auto back = load_checkpoint(dir / "ckpt", services);
    CHECK(back->method() == est->method());
    CHECK(back->config() == est->config());
    CHECK(back->threshold() == 0.375);
    if (est->parameters()) CHECK(back->parameters()->checksum() == est->parameters()->checksum());
    for (std::size_t i = 0; i < 5; ++i) CHECK(back->score(*set->test[i]) == est->score(*set->test[i]));
  }
  TempDir empty;
  CHECK_THROWS(load_checkpoint(empty / "none", services));
}

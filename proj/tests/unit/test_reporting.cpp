#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tracecal/error.hpp"
#include "tracecal/random.hpp"
#include "tracecal/reporting.hpp"

using namespace tracecal;
using nlohmann::json;
using tracecal::test::TempDir;

namespace {

Cell cell(const std::string& method, const std::string& model, const std::string& dataset, double auroc,
          double ece = 0.1) {
  Cell c;
  c.method = method;
  c.model_id = model;
  c.dataset = dataset;
  c.n = 10;
  c.metrics.auroc = auroc;
  c.metrics.ece = ece;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("two-stage aggregation is unweighted across models") {
  const std::vector<Cell> cells = {cell("m", "A", "d1", 0.6), cell("m", "A", "d2", 0.8), cell("m", "B", "d1", 0.5)};
  const auto rep = aggregate(cells);
  const auto& a = rep.llm_means.at({"m", "A"}).at("auroc");
  CHECK(a.mean == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(a.std == doctest::Approx(0.1).epsilon(1e-12));
  const auto& overall = rep.overall.at("m").at("auroc");
  CHECK(overall.mean == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(std::abs(overall.mean - (0.6 + 0.8 + 0.5) / 3) > 0.03);
  CHECK(overall.std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rep.warnings.empty());
  // Missing cells are counted against the model's most complete method.
  auto more = cells;
  more.push_back(cell("n", "B", "d1", 0.5));
  more.push_back(cell("n", "B", "d2", 0.5));
  const auto warned = aggregate(more);
  REQUIRE(warned.warnings.size() == 1);
  CHECK(warned.warnings[0].find("m / B: 1") != std::string::npos);
  CHECK(warned.overall.at("m").at("auroc").mean == doctest::Approx(0.6).epsilon(1e-12));

  const std::vector<Cell> single = {cell("s", "A", "d", 0.77)};
  const auto one = aggregate(single);
  CHECK(one.overall.at("s").at("auroc") == MeanStd{0.77, 0.0});
  CHECK(one.warnings.empty());

  CHECK_THROWS_AS(aggregate(std::vector<Cell>{}), InvalidInput);
  const std::vector<Cell> dup = {cell("m", "A", "d", 0.5), cell("m", "A", "d", 0.6)};
  CHECK_THROWS_AS(aggregate(dup), SchemaError);
}

TEST_CASE("overall means depend only on the per-model means") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<Cell> cells;
    const std::size_t models = 1 + rng.uniform_index(4);
    std::vector<double> model_means;
    for (std::size_t m = 0; m < models; ++m) {
      const std::size_t ds = 1 + rng.uniform_index(5);
      double sum = 0;
      for (std::size_t d = 0; d < ds; ++d) {
        const double v = rng.uniform();
        sum += v;
        cells.push_back(cell("x", "M" + std::to_string(m), "d" + std::to_string(d), v));
      }
      model_means.push_back(sum / static_cast<double>(ds));
    }
    const auto expect = mean_std(model_means);
    const auto got = aggregate(cells).overall.at("x").at("auroc");
    CHECK(got.mean == doctest::Approx(expect.mean).epsilon(1e-12));
    CHECK(got.std == doctest::Approx(expect.std).epsilon(1e-12));
  }
}

TEST_CASE("report csv marks the best method per metric and is deterministic") {
  std::vector<Cell> cells = {cell("alpha", "A", "d", 0.8, 0.2), cell("beta", "A", "d", 0.7, 0.05),
                             cell("gamma", "A", "d", 0.8, 0.3)};
  const std::string csv = report_csv(aggregate(cells));
  std::istringstream in(csv);
  std::string header, alpha, beta, gamma;
  std::getline(in, header);
  std::getline(in, alpha);
  std::getline(in, beta);
  std::getline(in, gamma);
  CHECK(header.rfind("method,ece_mean,ece_std,brier_mean", 0) == 0);
  CHECK(header.substr(header.size() - 5) == ",best");
  CHECK(alpha.rfind("alpha,0.200000,0.000000", 0) == 0);
  CHECK(alpha.find("auroc") != std::string::npos);
  CHECK(gamma.find("auroc") != std::string::npos);  // ties are all marked
  CHECK(beta.find(",ece") != std::string::npos);
  CHECK(beta.find("auroc") == std::string::npos);

  std::vector<Cell> shuffled(cells.rbegin(), cells.rend());
  CHECK(report_csv(aggregate(shuffled)) == csv);
  TempDir dir;
  write_text(dir / "a.csv", csv);
  write_text(dir / "b.csv", report_csv(aggregate(cells)));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(aggregate(cells).to_json().dump() == aggregate(cells).to_json().dump());
  CHECK(format_number(-1e-9) == "0.000000");
  CHECK(format_number(0.1234567) == "0.123457");
}

TEST_CASE("reliability data shares the ece binning") {
  Rng rng(5);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 100000; ++i) {
    s.push_back(rng.uniform());
    y.push_back(rng.bernoulli(s.back()) ? 1 : 0);
  }
  const ScoredSet set{s, y};
  const auto rel = reliability_data(set);
  REQUIRE(rel.size() == 10);
  for (const auto& b : rel) CHECK(std::abs(b.confidence_mean - b.accuracy) <= 0.02);
  CHECK(ece_from_bins(rel, s.size()) == ece(set));

  const ScoredSet sure{std::vector<double>(7, 0.95), std::vector<int>(7, 1)};
  const auto one = reliability_data(sure);
  REQUIRE(one.size() == 1);
  CHECK(one[0].confidence_mean == doctest::Approx(0.95));
  CHECK(one[0].accuracy == 1.0);
  CHECK(one[0].count == 7);
}

TEST_CASE("ellipse data") {
  std::vector<Cell> cells = {cell("m", "A", "d", 0.6, 0.1), cell("m", "B", "d", 0.8, 0.3),
                             cell("solo", "A", "d", 0.7, 0.2)};
  const auto rep = aggregate(cells);
  const auto e = ellipse_data(rep, "ece", "auroc");
  REQUIRE(e.size() == 2);
  CHECK(e[0].method == "m");
  CHECK(e[0].center_x == doctest::Approx(0.8));
  CHECK(e[0].center_y == doctest::Approx(0.7));
  CHECK(e[0].std_x == doctest::Approx(0.1));
  CHECK(e[0].std_y == doctest::Approx(0.1));
  CHECK(e[1].std_x == 0.0);
  CHECK(e[1].std_y == 0.0);
  CHECK(e[1].center_x == doctest::Approx(0.8));
  CHECK_THROWS_AS(ellipse_data(rep, "nope", "auroc"), ConfigError);
  const std::string csv = ellipse_csv(e, "ece", "auroc");
  CHECK(csv.find("m,") != std::string::npos);
}

TEST_CASE("cells from predictions and file round trips") {
  std::vector<PredictionRow> rows;
  Rng rng(6);
  for (int i = 0; i < 40; ++i) {
    PredictionRow r;
    r.record_id = "r" + std::to_string(i);
    r.model_id = "M";
    r.method = "phsv";
    r.dataset = i < 20 ? "d1" : "d2";
    r.label = i % 2;
    r.score = 0.5 * r.label + 0.5 * rng.uniform();
    r.threshold = 0.5;
    rows.push_back(r);
  }
  const auto cells = cells_from_predictions(rows);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].dataset == "d1");
  CHECK(cells[0].n == 20);
  CHECK(cells[0].metrics.youden_threshold == 0.5);
  TempDir dir;
  write_predictions(dir / "p.jsonl", rows);
  const auto back = read_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == rows.size());
  CHECK(back[3].score == rows[3].score);
  CHECK(back[3].threshold == rows[3].threshold);
  write_cells(dir / "c.jsonl", cells);
  const auto cb = read_cells(dir / "c.jsonl");
  REQUIRE(cb.size() == 2);
  CHECK(cb[1].metrics == cells[1].metrics);
  CHECK_THROWS_AS(read_cells(dir / "missing.jsonl"), IoError);

  const std::string rel = reliability_csv(rows);
  CHECK(rel.rfind("method,bin,confidence_mean,accuracy,count\n", 0) == 0);
}

#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "support.hpp"
#include "tracecal/array_store.hpp"
#include "tracecal/error.hpp"
#include "tracecal/hash.hpp"

using namespace tracecal;
using tracecal::test::TempDir;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string random_text(Rng& rng, std::size_t max_len) {
  static const char* kPieces[] = {"a", "Z", " ", "\n", "\"", "\\", "\t", "é", "中", "{", "}", "0"};
  std::string s;
  const std::size_t n = 1 + rng.uniform_index(max_len);
  for (std::size_t i = 0; i < n; ++i) s += kPieces[rng.uniform_index(12)];
  return s;
}

ReasoningRecord record(const std::string& dataset, const std::string& prompt) {
  ReasoningRecord r;
  r.prompt = prompt;
  r.answer = "A";
  r.dataset = dataset;
  return with_record_id(r);
}

}  // namespace

TEST_CASE("sha256 matches the published test vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("record ids are length-prefixed sha256 digests") {
  // Python hashlib over u64-le length prefixes, frozen.
  CHECK(compute_record_id("gsm8k", {"Question: 2+2 = ?"}) ==
        "055a4ec73748aaf04716c12a73f93e69d3547f1ddd2dac969ab03100086139fa");
  CHECK(compute_record_id("gsm8k", {"x"}) == compute_record_id("gsm8k", {"x"}));
  CHECK(compute_record_id("gsm8k", {"Question: 2+2 = ?"}) != compute_record_id("gsm8k", {"Question: 2+3 = ?"}));
  // Length prefixing separates field boundaries.
  CHECK(compute_record_id("d", {"ab", "c"}) != compute_record_id("d", {"a", "bc"}));
  CHECK(compute_record_id("ab", {"c"}) != compute_record_id("a", {"bc"}));
  CHECK_THROWS_AS(compute_record_id("", {"x"}), InvalidInput);
  CHECK_THROWS_AS(compute_record_id("d", {}), InvalidInput);
  // Fields are hashed verbatim.
  CHECK(compute_record_id("d", {"x "}) != compute_record_id("d", {"x"}));
}

TEST_CASE("read_records: empty file, order, and line-numbered errors") {
  TempDir dir;
  write_file(dir / "empty.jsonl", "");
  CHECK(read_records(dir / "empty.jsonl").empty());

  std::string three;
  for (int i = 0; i < 3; ++i) {
    three += "{\"prompt\":\"p" + std::to_string(i) + "\",\"answer\":\"a\",\"dataset\":\"d\"}\n";
  }
  write_file(dir / "three.jsonl", three);
  const auto recs = read_records(dir / "three.jsonl");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].prompt == "p0");
  CHECK(recs[2].prompt == "p2");
  CHECK(recs[1].category == "N/A");
  CHECK(recs[1].record_id == compute_record_id("d", {"p1"}));

  write_file(dir / "bad.jsonl",
             "{\"prompt\":\"p\",\"answer\":\"a\",\"dataset\":\"d\"}\n{\"prompt\":\"p\",\"dataset\":\"d\"}\n");
  try {
    read_records(dir / "bad.jsonl");
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("answer") != std::string::npos);
  }
  write_file(dir / "broken.jsonl", "{\"prompt\":\n");
  CHECK_THROWS_AS(read_records(dir / "broken.jsonl"), ParseError);
  CHECK_THROWS_AS(read_records(dir / "missing.jsonl"), IoError);
}

TEST_CASE("JSONL round trip is the identity on random records and traces") {
  TempDir dir;
  Rng rng(42);
  std::vector<ReasoningRecord> recs;
  std::vector<TraceAnnotation> traces;
  for (int i = 0; i < 200; ++i) {
    ReasoningRecord r;
    r.prompt = random_text(rng, 40);
    r.explanation = rng.bernoulli(0.5) ? random_text(rng, 10) : "";
    r.answer = random_text(rng, 5);
    r.category = rng.bernoulli(0.5) ? "N/A" : random_text(rng, 6);
    r.dataset = "ds" + std::to_string(rng.uniform_index(4));
    recs.push_back(with_record_id(r));

    TraceAnnotation t;
    t.record_id = recs.back().record_id;
    t.model_id = "model-" + std::to_string(rng.uniform_index(3));
    t.response = random_text(rng, 60);
    const std::size_t n = rng.uniform_index(5);
    for (std::size_t c = 0; c < n; ++c) {
      t.chunks.push_back(random_text(rng, 12));
      const auto pick = rng.uniform_index(3);
      t.chunk_labels.push_back(pick == 2 ? ChunkLabel{} : ChunkLabel{static_cast<int>(pick)});
    }
    t.final_label = static_cast<int>(rng.uniform_index(2));
    traces.push_back(t);
  }
  write_records(recs, dir / "r.jsonl");
  write_traces(traces, dir / "t.jsonl");
  CHECK(read_records(dir / "r.jsonl") == recs);
  CHECK(read_traces(dir / "t.jsonl") == traces);
}

TEST_CASE("null chunk labels serialize as JSON null") {
  TraceAnnotation t;
  t.record_id = "r";
  t.model_id = "m";
  t.response = "x";
  t.chunks = {"a", "b"};
  t.chunk_labels = {ChunkLabel{}, ChunkLabel{1}};
  const auto j = to_json(t);
  CHECK(j["chunk_labels"][0].is_null());
  CHECK(j["chunk_labels"][1] == 1);
  auto bad = j;
  bad["chunk_labels"] = {1};
  CHECK_THROWS_AS(trace_from_json(bad), SchemaError);
  bad = j;
  bad["final_label"] = 2;
  CHECK_THROWS_AS(trace_from_json(bad), SchemaError);
}

TEST_CASE("stratified_split counts, determinism and partition") {
  std::vector<ReasoningRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(record("alpha", "a" + std::to_string(i)));
  for (int i = 0; i < 50; ++i) recs.push_back(record("beta", "b" + std::to_string(i)));
  const auto s = stratified_split(recs, 0.2, 3);
  std::map<std::string, int> val_per;
  std::map<std::string, std::string> ds_of;
  for (const auto& r : recs) ds_of[r.record_id] = r.dataset;
  std::set<std::string> seen;
  for (const auto& a : s.assignments) {
    CHECK(seen.insert(a.record_id).second);
    if (a.split == Split::kVal) ++val_per[ds_of[a.record_id]];
    CHECK(a.split != Split::kTest);
  }
  CHECK(seen.size() == recs.size());
  CHECK(val_per["alpha"] == 10);
  CHECK(val_per["beta"] == 10);
  CHECK(stratified_split(recs, 0.2, 3).assignments == s.assignments);
  CHECK(split_digest(stratified_split(recs, 0.2, 3).assignments) == split_digest(s.assignments));
  CHECK(split_digest(stratified_split(recs, 0.2, 4).assignments) != split_digest(s.assignments));
  CHECK_THROWS_AS(stratified_split(recs, 0.0, 3), InvalidInput);
  CHECK_THROWS_AS(stratified_split(recs, 1.0, 3), InvalidInput);

  const auto held = stratified_split(recs, 0.2, 3, {"beta"});
  for (const auto& a : held.assignments) {
    if (ds_of[a.record_id] == "beta") CHECK(a.split == Split::kTest);
    else CHECK(a.split != Split::kTest);
  }

  std::vector<ReasoningRecord> tiny = {record("solo", "only")};
  const auto t = stratified_split(tiny, 0.2, 1);
  CHECK(t.assignments.front().split == Split::kTrain);
  CHECK(t.warnings.size() == 1);
}

TEST_CASE("split files round trip") {
  TempDir dir;
  std::vector<SplitAssignment> s = {{"a", Split::kTrain}, {"b", Split::kVal}, {"c", Split::kTest}};
  write_splits(s, dir / "s.jsonl");
  CHECK(read_splits(dir / "s.jsonl") == s);
  CHECK(split_from_string("val") == Split::kVal);
  CHECK_THROWS_AS(split_from_string("dev"), SchemaError);
}

TEST_CASE("array store round trips typed arrays and meta") {
  TempDir dir;
  {
    ArrayStoreWriter w(dir.path() / "store");
    const std::vector<float> f = {1.5f, -2.0f, 3.25f, 0.0f};
    const std::vector<double> d = {0.1, 0.2};
    const std::vector<std::int32_t> i = {7, -8, 9};
    w.add("f", {2, 2}, f);
    w.add("d", {2}, d);
    w.add("i", {3}, i);
    w.set_meta({{"kind", "x"}});
    w.finish();
  }
  ArrayStoreReader r(dir.path() / "store");
  CHECK(r.read_f32("f") == std::vector<float>{1.5f, -2.0f, 3.25f, 0.0f});
  CHECK(r.read_f64("d") == std::vector<double>{0.1, 0.2});
  CHECK(r.read_i32("i") == std::vector<std::int32_t>{7, -8, 9});
  CHECK(r.info("f").shape == std::vector<std::size_t>{2, 2});
  CHECK(r.meta()["kind"] == "x");
  CHECK_THROWS(r.read_f64("f"));
  CHECK_THROWS(r.read_f32("nope"));
}

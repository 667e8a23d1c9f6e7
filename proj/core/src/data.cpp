#include "tracecal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "tracecal/error.hpp"
#include "tracecal/hash.hpp"
#include "tracecal/random.hpp"

namespace tracecal {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

std::string compute_record_id(std::string_view dataset,
                              const std::vector<std::string>& canonical_fields) {
  if (dataset.empty()) throw InvalidInput("compute_record_id: empty dataset name");
  if (canonical_fields.empty()) throw InvalidInput("compute_record_id: no fields to hash");
  std::string buf;
  append_length_prefixed(buf, dataset);
  for (const auto& f : canonical_fields) append_length_prefixed(buf, f);
  return sha256_hex(buf);
}

std::vector<std::string> record_id_fields(const ReasoningRecord& record) {
  // Per-dataset hash field lists. No dataset needs more than its prompt
  // today; a dataset whose prompts collide would add fields here.
  static const std::map<std::string, std::vector<std::string>, std::less<>> kFields = {};
  auto it = kFields.find(record.dataset);
  if (it == kFields.end()) return {record.prompt};
  std::vector<std::string> out;
  for (const auto& name : it->second) {
    if (name == "prompt") out.push_back(record.prompt);
    else if (name == "answer") out.push_back(record.answer);
    else if (name == "explanation") out.push_back(record.explanation);
    else if (name == "category") out.push_back(record.category);
  }
  return out;
}

ReasoningRecord with_record_id(ReasoningRecord record) {
  record.record_id = compute_record_id(record.dataset, record_id_fields(record));
  return record;
}

namespace {

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing required field '") + key + "'");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::string optional_string(const json& j, const char* key, const char* fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

int require_binary(const json& v, const std::string& what) {
  if (!v.is_number_integer()) throw SchemaError(what + " must be 0 or 1");
  const auto x = v.get<long long>();
  if (x != 0 && x != 1) throw SchemaError(what + " must be 0 or 1");
  return static_cast<int>(x);
}

}  // namespace

json to_json(const ReasoningRecord& r) {
  return json{{"prompt", r.prompt},     {"explanation", r.explanation},
              {"answer", r.answer},     {"category", r.category},
              {"dataset", r.dataset},   {"record_id", r.record_id}};
}

json to_json(const TraceAnnotation& t) {
  json labels = json::array();
  for (const auto& l : t.chunk_labels) labels.push_back(l ? json(*l) : json(nullptr));
  return json{{"record_id", t.record_id}, {"model_id", t.model_id},
              {"response", t.response},   {"chunks", t.chunks},
              {"chunk_labels", labels},   {"final_label", t.final_label}};
}

json to_json(const RawTrace& t) {
  return json{{"record_id", t.record_id}, {"model_id", t.model_id}, {"response", t.response}};
}

json to_json(const SplitAssignment& s) {
  return json{{"record_id", s.record_id}, {"split", std::string(to_string(s.split))}};
}

ReasoningRecord record_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("record must be a JSON object");
  ReasoningRecord r;
  r.prompt = require_string(j, "prompt");
  r.explanation = optional_string(j, "explanation", "");
  r.answer = require_string(j, "answer");
  r.category = optional_string(j, "category", "N/A");
  r.dataset = require_string(j, "dataset");
  if (r.prompt.empty()) throw SchemaError("field 'prompt' must be non-empty");
  if (r.answer.empty()) throw SchemaError("field 'answer' must be non-empty");
  if (r.dataset.empty()) throw SchemaError("field 'dataset' must be non-empty");
  auto it = j.find("record_id");
  if (it == j.end() || it->is_null()) {
    r = with_record_id(std::move(r));
  } else {
    if (!it->is_string()) throw SchemaError("field 'record_id' must be a string");
    r.record_id = it->get<std::string>();
  }
  return r;
}

TraceAnnotation trace_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("trace must be a JSON object");
  TraceAnnotation t;
  t.record_id = require_string(j, "record_id");
  t.model_id = require_string(j, "model_id");
  t.response = require_string(j, "response");
  const json& chunks = require(j, "chunks");
  if (!chunks.is_array()) throw SchemaError("field 'chunks' must be an array");
  for (const auto& c : chunks) {
    if (!c.is_string()) throw SchemaError("chunks must be strings");
    t.chunks.push_back(c.get<std::string>());
  }
  const json& labels = require(j, "chunk_labels");
  if (!labels.is_array()) throw SchemaError("field 'chunk_labels' must be an array");
  for (const auto& l : labels) {
    if (l.is_null()) t.chunk_labels.emplace_back(std::nullopt);
    else t.chunk_labels.emplace_back(require_binary(l, "chunk label"));
  }
  if (t.chunk_labels.size() != t.chunks.size()) {
    throw SchemaError("chunk_labels length " + std::to_string(t.chunk_labels.size()) +
                      " != chunks length " + std::to_string(t.chunks.size()));
  }
  t.final_label = require_binary(require(j, "final_label"), "final_label");
  return t;
}

RawTrace raw_trace_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("raw trace must be a JSON object");
  return RawTrace{require_string(j, "record_id"), require_string(j, "model_id"),
                  require_string(j, "response")};
}

SplitAssignment split_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("split row must be a JSON object");
  return SplitAssignment{require_string(j, "record_id"),
                         split_from_string(require_string(j, "split"))};
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) +
                       ": malformed JSON: " + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) {
    try {
      out << r.dump() << '\n';
    } catch (const json::type_error& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_all(const std::filesystem::path& path, Parse parse) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(parse(j)); });
  return out;
}

template <typename T>
void write_all(const std::vector<T>& items, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const auto& x : items) rows.push_back(to_json(x));
  write_jsonl(path, rows);
}

}  // namespace

std::vector<ReasoningRecord> read_records(const std::filesystem::path& path) {
  return read_all<ReasoningRecord>(path, record_from_json);
}
void write_records(const std::vector<ReasoningRecord>& records,
                   const std::filesystem::path& path) {
  write_all(records, path);
}
std::vector<TraceAnnotation> read_traces(const std::filesystem::path& path) {
  return read_all<TraceAnnotation>(path, trace_from_json);
}
void write_traces(const std::vector<TraceAnnotation>& traces,
                  const std::filesystem::path& path) {
  write_all(traces, path);
}
std::vector<RawTrace> read_raw_traces(const std::filesystem::path& path) {
  return read_all<RawTrace>(path, raw_trace_from_json);
}
void write_raw_traces(const std::vector<RawTrace>& traces, const std::filesystem::path& path) {
  write_all(traces, path);
}
std::vector<SplitAssignment> read_splits(const std::filesystem::path& path) {
  return read_all<SplitAssignment>(path, split_from_json);
}
void write_splits(const std::vector<SplitAssignment>& splits,
                  const std::filesystem::path& path) {
  write_all(splits, path);
}

SplitResult stratified_split(const std::vector<ReasoningRecord>& records,
                             double val_fraction, std::uint64_t seed,
                             const std::vector<std::string>& test_datasets) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidInput("stratified_split: val_fraction must lie in (0, 1)");
  }
  const std::set<std::string> test_set(test_datasets.begin(), test_datasets.end());
  SplitResult result;
  result.assignments.resize(records.size());

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.dataset.empty()) throw InvalidInput("stratified_split: record without dataset");
    result.assignments[i].record_id = r.record_id;
    if (test_set.contains(r.dataset)) {
      result.assignments[i].split = Split::kTest;
    } else {
      result.assignments[i].split = Split::kTrain;
      strata[r.dataset].push_back(i);
    }
  }

  for (auto& [dataset, members] : strata) {
    Rng rng = Rng(seed).split(stable_hash64(dataset));
    // Stable ordering before shuffling so the result does not depend on
    // input order within a stratum.
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return records[a].record_id != records[b].record_id
                 ? records[a].record_id < records[b].record_id
                 : a < b;
    });
    if (members.size() < 2) {
      result.warnings.push_back("dataset '" + dataset + "' has " +
                                std::to_string(members.size()) +
                                " record(s); whole stratum assigned to train");
      continue;
    }
    rng.shuffle(members);
    const auto n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * val_fraction));
    for (std::size_t k = 0; k < n_val && k < members.size(); ++k) {
      result.assignments[members[k]].split = Split::kVal;
    }
  }
  return result;
}

std::string split_digest(const std::vector<SplitAssignment>& splits) {
  std::vector<std::pair<std::string, std::string>> rows;
  rows.reserve(splits.size());
  for (const auto& s : splits) rows.emplace_back(s.record_id, std::string(to_string(s.split)));
  std::sort(rows.begin(), rows.end());
  std::string buf;
  for (const auto& [id, split] : rows) {
    append_length_prefixed(buf, id);
    append_length_prefixed(buf, split);
  }
  return sha256_hex(buf);
}

}  // namespace tracecal

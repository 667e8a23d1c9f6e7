#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace tracecal {

// One benchmark problem.
struct ReasoningRecord {
  std::string prompt;
  std::string explanation;
  std::string answer;
  std::string category = "N/A";
  std::string dataset;
  std::string record_id;

  bool operator==(const ReasoningRecord&) const = default;
};

// Per-chunk correctness: 0, 1, or null (no intermediate result).
using ChunkLabel = std::optional<int>;

// One model's graded, segmented response to a record.
struct TraceAnnotation {
  std::string record_id;
  std::string model_id;
  std::string response;
  std::vector<std::string> chunks;
  std::vector<ChunkLabel> chunk_labels;
  int final_label = 0;

  bool operator==(const TraceAnnotation&) const = default;
};

// Ungraded generation output, as written by `generate`.
struct RawTrace {
  std::string record_id;
  std::string model_id;
  std::string response;

  bool operator==(const RawTrace&) const = default;
};

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct SplitAssignment {
  std::string record_id;
  Split split = Split::kTrain;

  bool operator==(const SplitAssignment&) const = default;
};

// SHA-256 over a length-prefixed encoding of (dataset, fields...). Each
// component is written as an 8-byte little-endian byte length followed by
// the raw UTF-8 bytes. Fields are used verbatim.
std::string compute_record_id(std::string_view dataset,
                              const std::vector<std::string>& canonical_fields);

// Fields hashed for a record of the given dataset, in order. Every dataset
// currently hashes the prompt alone; the table lives in data.cpp.
std::vector<std::string> record_id_fields(const ReasoningRecord& record);

// Fills in record_id from dataset and prompt.
ReasoningRecord with_record_id(ReasoningRecord record);

nlohmann::json to_json(const ReasoningRecord& r);
nlohmann::json to_json(const TraceAnnotation& t);
nlohmann::json to_json(const RawTrace& t);
nlohmann::json to_json(const SplitAssignment& s);

ReasoningRecord record_from_json(const nlohmann::json& j);
TraceAnnotation trace_from_json(const nlohmann::json& j);
RawTrace raw_trace_from_json(const nlohmann::json& j);
SplitAssignment split_from_json(const nlohmann::json& j);

// Calls `fn(object, line_number)` for every non-blank line. Line numbers
// are 1-based. Malformed JSON raises ParseError naming the line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<nlohmann::json>& rows);

std::vector<ReasoningRecord> read_records(const std::filesystem::path& path);
void write_records(const std::vector<ReasoningRecord>& records,
                   const std::filesystem::path& path);

std::vector<TraceAnnotation> read_traces(const std::filesystem::path& path);
void write_traces(const std::vector<TraceAnnotation>& traces,
                  const std::filesystem::path& path);

std::vector<RawTrace> read_raw_traces(const std::filesystem::path& path);
void write_raw_traces(const std::vector<RawTrace>& traces,
                      const std::filesystem::path& path);

std::vector<SplitAssignment> read_splits(const std::filesystem::path& path);
void write_splits(const std::vector<SplitAssignment>& splits,
                  const std::filesystem::path& path);

struct SplitResult {
  std::vector<SplitAssignment> assignments;
  std::vector<std::string> warnings;
};

// Dataset-stratified train/val split of the training pool. Records whose
// dataset is listed in `test_datasets` are assigned to the test split
// untouched. Each remaining stratum of n records contributes
// round(n * val_fraction) validation records, chosen by a seeded shuffle.
// Strata with fewer than two records go entirely to train (with a warning).
SplitResult stratified_split(const std::vector<ReasoningRecord>& records,
                             double val_fraction, std::uint64_t seed,
                             const std::vector<std::string>& test_datasets = {});

// Stable digest of a split assignment, recorded in run manifests.
std::string split_digest(const std::vector<SplitAssignment>& splits);

}  // namespace tracecal

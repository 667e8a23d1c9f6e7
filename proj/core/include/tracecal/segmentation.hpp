#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace tracecal {

// Lowercase trigger phrases grouped by the reasoning behavior they signal.
struct KeywordSet {
  std::vector<std::string> verification;
  std::vector<std::string> alternative;
  std::vector<std::string> reconsideration;

  static KeywordSet defaults();

  // Reads {"verification": [...], "alternative": [...], "reconsideration": [...]}.
  // Missing categories keep their default contents. Phrases are lowercased.
  static KeywordSet from_json(const nlohmann::json& j);
  static KeywordSet load(const std::filesystem::path& path);

  std::vector<std::string> all() const;
  bool operator==(const KeywordSet&) const = default;
};

struct ChunkingResult {
  std::vector<std::string> chunks;
  // Paragraph index at which each chunk starts.
  std::vector<std::size_t> boundaries;
  // Original whitespace between consecutive chunks; size == chunks.size() - 1
  // (empty when there are no chunks).
  std::vector<std::string> separators;
};

struct SegmentOptions {
  // Keywords are only searched for within this many leading code points of a
  // paragraph.
  std::size_t prefix_window = 120;
};

// A paragraph separator is a maximal whitespace run containing at least two
// newlines. Whitespace-only paragraphs are dropped.
std::vector<std::string> split_paragraphs(std::string_view response);

ChunkingResult segment(std::string_view response, const KeywordSet& keywords,
                       const SegmentOptions& options = {});

// Text before `terminator` (e.g. "</think>"), or the whole response when the
// terminator is absent or empty.
std::string_view reasoning_portion(std::string_view response, std::string_view terminator);

// Text after the terminator; empty when the terminator is absent.
std::string_view answer_portion(std::string_view response, std::string_view terminator);

std::string ascii_lower(std::string_view s);

}  // namespace tracecal

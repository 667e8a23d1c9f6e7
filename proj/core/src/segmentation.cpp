#include "tracecal/segmentation.hpp"

#include <algorithm>
#include <fstream>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;

KeywordSet KeywordSet::defaults() {
  return KeywordSet{
      {"wait", "double-check", "make sure", "verify", "to confirm", "let me verify",
       "let me double-check", "let me confirm"},
      {"alternatively", "another way", "another approach", "different approach"},
      {"but let me", "let me try", "on second thought", "let me reconsider", "let me check",
       "hold on", "wait a minute", "let me think again", "but what if"},
  };
}

namespace {

std::vector<std::string> phrases(const json& j, const char* key,
                                 const std::vector<std::string>& fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_array()) throw SchemaError(std::string("keywords: '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& p : *it) {
    if (!p.is_string()) throw SchemaError("keywords: phrases must be strings");
    auto s = ascii_lower(p.get<std::string>());
    if (s.empty()) throw SchemaError("keywords: empty phrase");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw SchemaError(std::string("keywords: '") + key + "' is empty");
  return out;
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

struct Span {
  std::size_t begin, end;
};

// Paragraph spans of `text` in order.
std::vector<Span> paragraph_spans(std::string_view text) {
  std::vector<Span> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      if (!is_ws(text[k])) {
        out.push_back({b, e});
        return;
      }
    }
  };
  while (i < n) {
    if (!is_ws(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    int newlines = 0;
    while (j < n && is_ws(text[j])) {
      if (text[j] == '\n') ++newlines;
      ++j;
    }
    if (newlines >= 2) {
      emit(start, i);
      start = j;
    }
    i = j;
  }
  emit(start, n);
  return out;
}

std::size_t utf8_prefix_bytes(std::string_view s, std::size_t code_points) {
  std::size_t i = 0, cps = 0;
  while (i < s.size() && cps < code_points) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xf0) len = 4;
    else if (c >= 0xe0) len = 3;
    else if (c >= 0xc0) len = 2;
    i = std::min(s.size(), i + len);
    ++cps;
  }
  return i;
}

}  // namespace

KeywordSet KeywordSet::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("keywords file must contain a JSON object");
  const KeywordSet d = defaults();
  return KeywordSet{phrases(j, "verification", d.verification),
                    phrases(j, "alternative", d.alternative),
                    phrases(j, "reconsideration", d.reconsideration)};
}

KeywordSet KeywordSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<std::string> KeywordSet::all() const {
  std::vector<std::string> out;
  out.insert(out.end(), verification.begin(), verification.end());
  out.insert(out.end(), alternative.begin(), alternative.end());
  out.insert(out.end(), reconsideration.begin(), reconsideration.end());
  return out;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> split_paragraphs(std::string_view response) {
  std::vector<std::string> out;
  for (const auto& s : paragraph_spans(response)) {
    out.emplace_back(response.substr(s.begin, s.end - s.begin));
  }
  return out;
}

ChunkingResult segment(std::string_view response, const KeywordSet& keywords,
                       const SegmentOptions& options) {
  ChunkingResult result;
  const auto spans = paragraph_spans(response);
  if (spans.empty()) return result;
  const auto triggers = keywords.all();

  std::vector<std::size_t> starts;
  for (std::size_t p = 0; p < spans.size(); ++p) {
    if (p == 0) {
      starts.push_back(0);
      continue;
    }
    const std::string_view para = response.substr(spans[p].begin, spans[p].end - spans[p].begin);
    const std::string window = ascii_lower(para.substr(0, utf8_prefix_bytes(para, options.prefix_window)));
    const bool hit = std::any_of(triggers.begin(), triggers.end(), [&](const std::string& k) {
      return window.find(k) != std::string::npos;
    });
    if (hit) starts.push_back(p);
  }

  for (std::size_t c = 0; c < starts.size(); ++c) {
    const std::size_t first = starts[c];
    const std::size_t last = (c + 1 < starts.size() ? starts[c + 1] : spans.size()) - 1;
    result.boundaries.push_back(first);
    result.chunks.emplace_back(
        response.substr(spans[first].begin, spans[last].end - spans[first].begin));
    if (c + 1 < starts.size()) {
      const std::size_t next = starts[c + 1];
      result.separators.emplace_back(
          response.substr(spans[last].end, spans[next].begin - spans[last].end));
    }
  }
  return result;
}

std::string_view reasoning_portion(std::string_view response, std::string_view terminator) {
  if (terminator.empty()) return response;
  const auto pos = response.find(terminator);
  if (pos == std::string_view::npos) return response;
  return response.substr(0, pos);
}

std::string_view answer_portion(std::string_view response, std::string_view terminator) {
  if (terminator.empty()) return {};
  const auto pos = response.find(terminator);
  if (pos == std::string_view::npos) return {};
  return response.substr(pos + terminator.size());
}

}  // namespace tracecal

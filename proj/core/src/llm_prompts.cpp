#include <algorithm>
#include <cstdio>
#include <cctype>
#include <map>
#include <regex>

#include "tracecal/error.hpp"
#include "tracecal/llm.hpp"

namespace tracecal {

using nlohmann::json;

const std::vector<ConfidenceClass>& confidence_classes() {
  static const std::vector<ConfidenceClass> classes = {
      {"Almost no chance", 0.0, 0.1}, {"Highly unlikely", 0.1, 0.2},   {"Chances are slight", 0.2, 0.3},
      {"Unlikely", 0.3, 0.4},         {"Less than even", 0.4, 0.5},    {"Better than even", 0.5, 0.6},
      {"Likely", 0.6, 0.7},           {"Very good chance", 0.7, 0.8}, {"Highly likely", 0.8, 0.9},
      {"Almost certain", 0.9, 1.0}};
  return classes;
}

const std::string& yvce_system_prompt() {
  static const std::string text = [] {
    std::string s =
        "First, reason through the question step by step to arrive at an answer.\n"
        "Then, thoroughly assess your confidence in that answer by evaluating your thinking process so far.\n"
        "Finally, classify your confidence into one of the following classes based on how likely your answer is "
        "to be correct:\n";
    char buf[96];
    for (const auto& c : confidence_classes()) {
      std::snprintf(buf, sizeof buf, "- \"%s\" (%.1f\xE2\x80\x93%.1f)\n", c.name.c_str(), c.low, c.high);
      s += buf;
    }
    s +=
        "Each category reflects the probability that your answer is correct.\n"
        "At the very end of your output, format your answer and confidence as\n"
        "**Answer**: $ANSWER\n"
        "**Confidence**: $CLASS\n"
        "where CLASS is one of the names (only the names without the probability ranges) of the classes above.";
    return s;
  }();
  return text;
}

const std::string& yvce_nudge() {
  static const std::string text =
      "Now, finally, if I were to briefly mention my confidence among the given classes in the system prompt, I "
      "would choose";
  return text;
}

std::vector<ChatMessage> yvce_messages(std::string_view prompt, std::string_view original_response) {
  std::string assistant(original_response);
  if (!assistant.empty() && assistant.back() != '\n') assistant += "\n\n";
  assistant += yvce_nudge();
  return {{"system", yvce_system_prompt()}, {"user", std::string(prompt)}, {"assistant", assistant}};
}

json yvce_request_extra() { return {{"continue_final_message", true}, {"add_generation_prompt", false}}; }

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool iequal_at(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) != std::tolower(static_cast<unsigned char>(word[i])))
      return false;
  }
  return true;
}

// Longest class name starting at `pos` with word boundaries on both sides.
std::optional<std::size_t> class_at(std::string_view text, std::size_t pos) {
  if (pos > 0 && word_char(text[pos - 1])) return std::nullopt;
  std::optional<std::size_t> best;
  const auto& classes = confidence_classes();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const std::string& n = classes[k].name;
    if (!iequal_at(text, pos, n)) continue;
    const std::size_t end = pos + n.size();
    if (end < text.size() && word_char(text[end])) continue;
    if (!best || n.size() > classes[*best].name.size()) best = k;
  }
  return best;
}

}  // namespace

std::optional<std::size_t> confidence_line_class(std::string_view text) {
  static const std::string marker = "**confidence**:";
  std::optional<std::size_t> last_marker;
  for (std::size_t p = 0; p + marker.size() <= text.size(); ++p) {
    if (iequal_at(text, p, marker)) last_marker = p;
  }
  if (!last_marker) return std::nullopt;
  std::size_t p = *last_marker + marker.size();
  while (p < text.size() && (text[p] == ' ' || text[p] == '\t' || text[p] == '"' || text[p] == '\'' ||
                             text[p] == '*' || text[p] == '$')) {
    ++p;
  }
  return class_at(text, p);
}

std::optional<std::size_t> last_class_mention(std::string_view text) {
  std::optional<std::size_t> last;
  std::size_t p = 0;
  while (p < text.size()) {
    if (auto k = class_at(text, p)) {
      last = k;
      p += confidence_classes()[*k].name.size();
    } else {
      ++p;
    }
  }
  return last;
}

YvceParse parse_yvce(std::string_view response, std::optional<std::string_view> continuation) {
  auto make = [](std::size_t k, bool line) {
    return YvceParse{k, confidence_classes()[k].midpoint(), line};
  };
  if (continuation) {
    if (auto k = confidence_line_class(*continuation)) return make(*k, true);
    if (auto k = last_class_mention(*continuation)) return make(*k, false);
  }
  if (auto k = confidence_line_class(response)) return make(*k, true);
  throw ParseError("no recognizable confidence class");
}

double yvce_score(std::string_view response, std::optional<std::string_view> continuation) {
  return parse_yvce(response, continuation).score;
}

std::string extract_final_answer(std::string_view text) {
  static const std::string marker = "**answer**:";
  std::optional<std::size_t> last;
  for (std::size_t p = 0; p + marker.size() <= text.size(); ++p) {
    if (iequal_at(text, p, marker)) last = p;
  }
  std::string_view s = text;
  if (last) {
    s = text.substr(*last + marker.size());
    s = s.substr(0, s.find('\n'));
  }
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string normalize_answer(std::string_view answer) {
  static const std::string strip = " \t\r\n()[]{}.,:;\"'";
  std::size_t b = 0, e = answer.size();
  while (b < e && strip.find(answer[b]) != std::string::npos) ++b;
  while (e > b && strip.find(answer[e - 1]) != std::string::npos) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(answer[i]))));
  return out;
}

int grade_exact(std::string_view model_answer, std::string_view gold) {
  if (model_answer.empty() || gold.empty()) throw InvalidInput("grade_exact needs two non-empty answers");
  return normalize_answer(model_answer) == normalize_answer(gold) ? 1 : 0;
}

const std::string& judge_system_prompt() {
  static const std::string text =
      "You are a meticulous grading assistant. A teacher has asked a student a question, and the student provided "
      "a step-by-step answer as a series of 'chunks'. Your task is to assist the teacher by evaluating each chunk "
      "of the student's reasoning and provide an overall assessment. You must follow the instructions precisely "
      "and provide your output only in the specified XML format.";
  return text;
}

const std::string& judge_user_template() {
  static const std::string text =
      "### Instruction\n"
      "\n"
      "For each reasoning chunk from the student, evaluate whether its intermediate result exactly matches the "
      "Final Ground-Truth Answer. Mark each chunk with:\n"
      "\n"
      "- 1 if the chunk's intermediate result matches the ground-truth answer.\n"
      "\n"
      "- 0 if the chunk's intermediate result does not match the ground-truth answer.\n"
      "\n"
      "- null if the chunk does not contain any intermediate result (e.g., pure reflection/setup).\n"
      "\n"
      "After grading each chunk, provide a final grade that evaluates whether the model's final answer/conclusion "
      "matches the ground truth:\n"
      "\n"
      "- 1 if the final answer/conclusion matches the ground truth.\n"
      "\n"
      "- 0 if the final answer/conclusion does not match the ground truth.\n"
      "\n"
      "Your output must be a series of chunk evaluations in XML format, followed by a final grade:\n"
      "\n"
      "<chunk id=\"1\">0/1/null</chunk>\n"
      "\n"
      "<chunk id=\"2\">0/1/null</chunk>\n"
      "\n"
      "...\n"
      "\n"
      "<final_grade>0/1</final_grade>\n"
      "\n"
      "---\n"
      "\n"
      "### Context\n"
      "\n"
      "* Question: \"{prompt}\"\n"
      "\n"
      "* Final Ground-Truth Answer: \"{answer}\"\n"
      "\n"
      "---\n"
      "\n"
      "### Task: Grade Each Chunk\n"
      "\n"
      "{reasoning_chunks}";
  return text;
}

std::string enumerate_chunks(std::span<const std::string> chunks) {
  std::string out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (i) out += "\n\n";
    out += "Chunk " + std::to_string(i + 1) + ":\n" + chunks[i];
  }
  return out;
}

JudgePrompt build_judge_prompt(const ReasoningRecord& record, std::span<const std::string> chunks) {
  if (chunks.empty()) throw InvalidInput("judge prompt needs at least one chunk");
  if (record.answer.empty()) throw InvalidInput("judge prompt needs a ground-truth answer");
  if (record.prompt.empty()) throw InvalidInput("judge prompt needs a question");
  // Placeholders are substituted in one left-to-right pass so that braces in
  // the inserted text are never re-expanded.
  const std::string& t = judge_user_template();
  const std::map<std::string, std::string> values = {
      {"{prompt}", record.prompt}, {"{answer}", record.answer}, {"{reasoning_chunks}", enumerate_chunks(chunks)}};
  std::string user;
  std::size_t p = 0;
  while (p < t.size()) {
    bool replaced = false;
    if (t[p] == '{') {
      for (const auto& [key, value] : values) {
        if (t.compare(p, key.size(), key) == 0) {
          user += value;
          p += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) user.push_back(t[p++]);
  }
  return {judge_system_prompt(), user};
}

JudgeVerdict parse_judge_xml(std::string_view reply, std::size_t n_chunks) {
  if (n_chunks == 0) throw InvalidInput("parse_judge_xml needs n_chunks >= 1");
  static const std::regex chunk_re(R"(<chunk\s+id\s*=\s*["']?\s*(\d+)\s*["']?\s*>([^<]*)</chunk\s*>)",
                                   std::regex::icase);
  static const std::regex final_re(R"(<final_grade\s*>([^<]*)</final_grade\s*>)", std::regex::icase);
  auto trim_lower = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  const std::string text(reply);
  JudgeVerdict v;
  v.chunk_labels.assign(n_chunks, std::nullopt);
  std::vector<bool> seen(n_chunks, false);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), chunk_re); it != std::sregex_iterator(); ++it) {
    const std::string id_text = (*it)[1].str();
    if (id_text.size() > 9) throw ParseError("chunk id " + id_text + " out of range");
    const std::size_t id = std::stoul(id_text);
    if (id < 1 || id > n_chunks) {
      throw ParseError("chunk id " + std::to_string(id) + " outside 1.." + std::to_string(n_chunks));
    }
    if (seen[id - 1]) throw ParseError("duplicate chunk id " + std::to_string(id));
    seen[id - 1] = true;
    const std::string value = trim_lower((*it)[2].str());
    if (value == "0") v.chunk_labels[id - 1] = 0;
    else if (value == "1") v.chunk_labels[id - 1] = 1;
    else if (value != "null") throw ParseError("chunk " + std::to_string(id) + " has value '" + value + "'");
  }
  std::vector<std::string> finals;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), final_re); it != std::sregex_iterator(); ++it) {
    finals.push_back(trim_lower((*it)[1].str()));
  }
  if (finals.empty()) throw ParseError("missing <final_grade>");
  if (finals.size() > 1) throw ParseError("more than one <final_grade>");
  if (finals[0] == "0") v.final_label = 0;
  else if (finals[0] == "1") v.final_label = 1;
  else throw ParseError("final_grade has value '" + finals[0] + "'");
  return v;
}

std::string render_judge_xml(const JudgeVerdict& verdict) {
  std::string out;
  for (std::size_t i = 0; i < verdict.chunk_labels.size(); ++i) {
    const auto& l = verdict.chunk_labels[i];
    out += "<chunk id=\"" + std::to_string(i + 1) + "\">" + (l ? std::to_string(*l) : std::string("null")) +
           "</chunk>\n";
  }
  out += "<final_grade>" + std::to_string(verdict.final_label) + "</final_grade>";
  return out;
}

}  // namespace tracecal

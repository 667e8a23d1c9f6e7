#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracecal/data.hpp"

namespace tracecal {

// ---- generation -----------------------------------------------------------

struct GenerationConfig {
  std::string model_id;
  std::string base_url = "http://127.0.0.1:8000/v1";
  double temperature = 0.0;
  int max_tokens = 4096;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::milliseconds timeout{std::chrono::minutes(10)};
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};
  std::size_t max_concurrency = 8;

  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
};

// Benchmark generation settings for a model: greedy decoding, 4096 tokens,
// and the per-model repetition penalties.
GenerationConfig generation_preset(const std::string& model_id);

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

// Chat-completion request body carrying exactly the config's sampling
// parameters.
nlohmann::json chat_request(const GenerationConfig& cfg, std::span<const ChatMessage> messages);

// Transport for one JSON request; returns (HTTP status, body). Throws
// IoError when no response was received.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  struct Response {
    int status = 0;
    std::string body;
  };
  virtual Response post(const nlohmann::json& body, std::chrono::milliseconds timeout) const = 0;
};

// JSON over HTTP to `<base_url>/chat/completions`, with a bearer token read
// from the environment variable named in the config (omitted when unset).
// Only plain http:// endpoints are supported.
class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(const GenerationConfig& cfg);
  Response post(const nlohmann::json& body, std::chrono::milliseconds timeout) const override;

 private:
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::string api_key_;
};

bool is_retryable_status(int status);

// Sends the request, retrying transport failures and retryable statuses up
// to cfg.max_retries times with exponential backoff. Returns the first
// choice's message content verbatim. Non-retryable statuses, exhausted
// retries, malformed bodies and empty content raise GenerationFailure.
std::string complete_chat(const ChatTransport& transport, const GenerationConfig& cfg,
                          std::span<const ChatMessage> messages, const nlohmann::json& extra = {});

// The record's prompt as a single user message.
std::string generate_trace(const ReasoningRecord& record, const GenerationConfig& cfg,
                           const ChatTransport& transport);

struct GenerationOutcome {
  std::string record_id;
  std::optional<std::string> response;
  std::string error;  // set when response is empty
};

// Runs `job(i)` for i in [0, n) on at most max_concurrency threads; results
// are keyed by index.
std::vector<GenerationOutcome> run_bounded(std::size_t n, std::size_t max_concurrency,
                                           const std::function<GenerationOutcome(std::size_t)>& job);

std::vector<GenerationOutcome> generate_batch(std::span<const ReasoningRecord> records,
                                              const GenerationConfig& cfg, const ChatTransport& transport);

// ---- verbalized confidence ----------------------------------------------

struct ConfidenceClass {
  std::string name;
  double low = 0;
  double high = 0;
  double midpoint() const { return 0.5 * (low + high); }
};

// The ten classes in increasing order, partitioning [0, 1] into tenths.
const std::vector<ConfidenceClass>& confidence_classes();

const std::string& yvce_system_prompt();
const std::string& yvce_nudge();

// Follow-up conversation: system prompt, the question, then the original
// output with the nudge appended as an assistant turn to be continued.
std::vector<ChatMessage> yvce_messages(std::string_view prompt, std::string_view original_response);
// Request flags asking the server to continue the final assistant turn.
nlohmann::json yvce_request_extra();

struct YvceParse {
  std::size_t class_index = 0;
  double score = 0;
  bool from_confidence_line = true;
};

// Class on the last "**Confidence**:" line of `text`, if any.
std::optional<std::size_t> confidence_line_class(std::string_view text);
// Last class name mentioned anywhere in `text` (longest match at each
// position, word-bounded, case-insensitive).
std::optional<std::size_t> last_class_mention(std::string_view text);

// Confidence from a response and optionally the nudge continuation. The
// continuation is read first (its confidence line, then its last class
// mention); otherwise the response's last confidence line. No recognizable
// class raises ParseError.
YvceParse parse_yvce(std::string_view response, std::optional<std::string_view> continuation = std::nullopt);
double yvce_score(std::string_view response, std::optional<std::string_view> continuation = std::nullopt);

// ---- grading --------------------------------------------------------------

// The answer stated after the last "**Answer**:" marker (to the end of that
// line), or the whole trimmed text when there is no marker.
std::string extract_final_answer(std::string_view answer_text);

// Trimmed, case-folded answer with surrounding option punctuation removed.
std::string normalize_answer(std::string_view answer);
// 1 iff the normalized answers are equal. Empty inputs raise InvalidInput.
int grade_exact(std::string_view model_answer, std::string_view gold);

struct JudgePrompt {
  std::string system;
  std::string user;
};

const std::string& judge_system_prompt();
const std::string& judge_user_template();
// "Chunk 1:\n<text>\n\nChunk 2:\n<text>..."
std::string enumerate_chunks(std::span<const std::string> chunks);
JudgePrompt build_judge_prompt(const ReasoningRecord& record, std::span<const std::string> chunks);

struct JudgeVerdict {
  std::vector<ChunkLabel> chunk_labels;
  int final_label = 0;
  bool operator==(const JudgeVerdict&) const = default;
};

JudgeVerdict parse_judge_xml(std::string_view reply, std::size_t n_chunks);
std::string render_judge_xml(const JudgeVerdict& verdict);

JudgeVerdict judge_trace(const ReasoningRecord& record, std::span<const std::string> chunks,
                         const GenerationConfig& judge, const ChatTransport& transport);

}  // namespace tracecal

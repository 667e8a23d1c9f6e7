#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "tracecal/error.hpp"
#include "tracecal/llm.hpp"

namespace tracecal {

using nlohmann::json;

json GenerationConfig::to_json() const {
  return {{"model_id", model_id},
          {"base_url", base_url},
          {"temperature", temperature},
          {"max_tokens", max_tokens},
          {"frequency_penalty", frequency_penalty},
          {"presence_penalty", presence_penalty},
          {"api_key_env", api_key_env},
          {"timeout_ms", timeout.count()},
          {"max_retries", max_retries},
          {"backoff_ms", backoff.count()},
          {"max_concurrency", max_concurrency}};
}

GenerationConfig GenerationConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generation config must be an object");
  GenerationConfig c = generation_preset(j.value("model_id", std::string()));
  try {
    c.base_url = j.value("base_url", c.base_url);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.frequency_penalty = j.value("frequency_penalty", c.frequency_penalty);
    c.presence_penalty = j.value("presence_penalty", c.presence_penalty);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long long>(c.timeout.count())));
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long long>(c.backoff.count())));
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generation config: ") + e.what());
  }
  if (c.max_retries < 0 || c.max_retries > 3) throw ConfigError("max_retries must be in [0, 3]");
  if (c.max_concurrency == 0) throw ConfigError("max_concurrency must be positive");
  return c;
}

GenerationConfig generation_preset(const std::string& model_id) {
  GenerationConfig c;
  c.model_id = model_id;
  if (model_id.find("Magistral-Small-2506") != std::string::npos) {
    c.frequency_penalty = 1.5;
  } else if (model_id.find("Phi-4-mini-flash-reasoning") != std::string::npos) {
    c.frequency_penalty = 0.8;
    c.presence_penalty = 1.5;
  }
  return c;
}

json chat_request(const GenerationConfig& cfg, std::span<const ChatMessage> messages) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model_id},
          {"messages", msgs},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens},
          {"frequency_penalty", cfg.frequency_penalty},
          {"presence_penalty", cfg.presence_penalty}};
}

HttpChatTransport::HttpChatTransport(const GenerationConfig& cfg) {
  const std::string& url = cfg.base_url;
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("base_url must start with http:// (got '" + url + "')");
  const std::string rest = url.substr(scheme.size());
  const auto slash = rest.find('/');
  const std::string authority = rest.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : rest.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
  const auto colon = authority.rfind(':');
  host_ = authority.substr(0, colon);
  if (colon != std::string::npos) {
    try {
      port_ = std::stoi(authority.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("bad port in base_url '" + url + "'");
    }
  }
  if (host_.empty()) throw ConfigError("base_url has no host: '" + url + "'");
  if (const char* key = std::getenv(cfg.api_key_env.c_str())) api_key_ = key;
}

ChatTransport::Response HttpChatTransport::post(const json& body, std::chrono::milliseconds timeout) const {
  httplib::Client client(host_, port_);
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw IoError("request to " + host_ + ":" + std::to_string(port_) + path_ + " failed: " +
                          httplib::to_string(res.error()));
  return {res->status, res->body};
}

bool is_retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::string complete_chat(const ChatTransport& transport, const GenerationConfig& cfg,
                          std::span<const ChatMessage> messages, const json& extra) {
  json body = chat_request(cfg, messages);
  if (extra.is_object()) body.update(extra);
  std::string last_error;
  auto delay = cfg.backoff;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    ChatTransport::Response res;
    try {
      res = transport.post(body, cfg.timeout);
    } catch (const IoError& e) {
      last_error = e.what();
      continue;
    }
    if (res.status != 200) {
      last_error = "HTTP " + std::to_string(res.status);
      if (is_retryable_status(res.status)) continue;
      throw GenerationFailure(last_error + ": " + res.body.substr(0, 200), false);
    }
    json reply;
    try {
      reply = json::parse(res.body);
    } catch (const json::parse_error&) {
      throw GenerationFailure("response body is not JSON", false);
    }
    const json* content = nullptr;
    if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
      const json& choice = reply["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content")) content = &choice["message"]["content"];
    }
    if (!content || !content->is_string()) throw GenerationFailure("response has no message content", false);
    if (content->get_ref<const std::string&>().empty()) throw GenerationFailure("empty output", false);
    return content->get<std::string>();
  }
  throw GenerationFailure("gave up after " + std::to_string(cfg.max_retries) + " retries: " + last_error, true);
}

std::string generate_trace(const ReasoningRecord& record, const GenerationConfig& cfg,
                           const ChatTransport& transport) {
  const ChatMessage msg{"user", record.prompt};
  return complete_chat(transport, cfg, std::span<const ChatMessage>(&msg, 1));
}

std::vector<GenerationOutcome> run_bounded(std::size_t n, std::size_t max_concurrency,
                                           const std::function<GenerationOutcome(std::size_t)>& job) {
  std::vector<GenerationOutcome> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) out[i] = job(i);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(max_concurrency, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

std::vector<GenerationOutcome> generate_batch(std::span<const ReasoningRecord> records,
                                              const GenerationConfig& cfg, const ChatTransport& transport) {
  return run_bounded(records.size(), cfg.max_concurrency, [&](std::size_t i) {
    GenerationOutcome o;
    o.record_id = records[i].record_id;
    try {
      o.response = generate_trace(records[i], cfg, transport);
    } catch (const GenerationFailure& e) {
      o.error = e.what();
    }
    return o;
  });
}

JudgeVerdict judge_trace(const ReasoningRecord& record, std::span<const std::string> chunks,
                         const GenerationConfig& judge, const ChatTransport& transport) {
  const JudgePrompt p = build_judge_prompt(record, chunks);
  const std::vector<ChatMessage> msgs = {{"system", p.system}, {"user", p.user}};
  return parse_judge_xml(complete_chat(transport, judge, msgs), chunks.size());
}

}  // namespace tracecal

#include "tracecal/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <regex>

#include "tracecal/error.hpp"
#include "tracecal/llm.hpp"
#include "tracecal/random.hpp"
#include "tracecal/segmentation.hpp"

namespace tracecal {

using nlohmann::json;

namespace {

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> w = {"value", "term",  "sum",   "step", "factor", "ratio",
                                             "angle", "side",  "count", "rule", "case",   "unit",
                                             "table", "graph", "node",  "edge", "bound",  "layer"};
  return w;
}

const std::vector<std::string>& openers() {
  static const std::vector<std::string> o = {"Wait,", "Alternatively,", "Let me check", "Hold on,", "But let me",
                                             "On second thought,"};
  return o;
}

const std::string kLetters = "ABCD";

std::string pick(const std::vector<std::string>& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.uniform_index(v.size()))];
}

char other_letter(char gold, Rng& rng) {
  std::string others;
  for (char c : kLetters)
    if (c != gold) others.push_back(c);
  return others[static_cast<std::size_t>(rng.uniform_index(others.size()))];
}

std::vector<double> unit_direction(std::size_t d, Rng& rng) {
  std::vector<double> u(d);
  double norm = 0;
  for (auto& x : u) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : u) x /= norm;
  return u;
}

std::size_t between(std::size_t lo, std::size_t hi, Rng& rng) {
  return lo + static_cast<std::size_t>(rng.uniform_index(hi - lo + 1));
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& o) {
  if (o.models.empty() || o.datasets.size() < 2) throw ConfigError("synthetic corpus needs models and >= 2 datasets");
  if (o.min_chunks < 1 || o.max_chunks < o.min_chunks || o.min_tokens < 1 || o.max_tokens < o.min_tokens ||
      o.hidden_dim < 1 || o.vocab < 2) {
    throw ConfigError("synthetic corpus: bad size options");
  }
  Rng root(o.seed);
  Rng geometry = root.split(1);
  const std::vector<double> u = unit_direction(o.hidden_dim, geometry);
  const std::vector<double> u_prompt = unit_direction(o.hidden_dim, geometry);

  SyntheticCorpus c;
  for (std::size_t i = o.datasets.size() / 2; i < o.datasets.size(); ++i) c.test_datasets.push_back(o.datasets[i]);

  Rng rec_rng = root.split(2);
  std::vector<char> gold(o.n_records);
  for (std::size_t i = 0; i < o.n_records; ++i) {
    gold[i] = kLetters[static_cast<std::size_t>(rec_rng.uniform_index(4))];
    ReasoningRecord r;
    r.dataset = o.datasets[i % o.datasets.size()];
    r.prompt = "Problem " + std::to_string(i) + ": which option satisfies rule " +
               std::to_string(rec_rng.uniform_index(1000)) + "? (A) first (B) second (C) third (D) fourth";
    r.answer = std::string(1, gold[i]);
    r.category = "synthetic";
    c.records.push_back(with_record_id(std::move(r)));
  }

  const KeywordSet keywords = KeywordSet::defaults();
  for (std::size_t m = 0; m < o.models.size(); ++m) {
    Rng rng = root.split(100 + m);
    for (std::size_t i = 0; i < o.n_records; ++i) {
      const ReasoningRecord& rec = c.records[i];
      const int y = rng.bernoulli(o.positive_rate) ? 1 : 0;
      const std::size_t n = between(o.min_chunks, o.max_chunks, rng);
      std::vector<ChunkLabel> labels(n);
      for (std::size_t k = 0; k + 1 < n; ++k) {
        if (rng.bernoulli(0.4)) continue;
        labels[k] = rng.bernoulli(0.75) ? y : 1 - y;
      }
      labels[n - 1] = y;

      std::vector<std::string> chunks;
      char final_letter = gold[i];
      for (std::size_t k = 0; k < n; ++k) {
        std::string text = k == 0 ? "Start by reading problem " + std::to_string(i) + "." : pick(openers(), rng);
        const std::size_t words = between(6, 12, rng);
        for (std::size_t w = 0; w < words; ++w) text += " " + pick(filler_words(), rng);
        text += ".";
        if (labels[k]) {
          const char letter = *labels[k] == 1 ? gold[i] : other_letter(gold[i], rng);
          text += std::string(" So the intermediate result is ") + letter + ".";
          if (k + 1 == n) final_letter = letter;
        } else {
          text += " This only restates the setup.";
        }
        if (k + 1 == n) {
          const double p = o.signal > 0 ? (y ? 0.7 : 0.3) : 0.5;
          text += rng.bernoulli(p) ? " This looks consistent." : " This feels shaky.";
        }
        chunks.push_back(std::move(text));
      }
      std::string reasoning;
      for (std::size_t k = 0; k < n; ++k) reasoning += (k ? "\n\n" : "") + chunks[k];
      const std::string response = reasoning + "\n" + o.terminator + "\n\n**Answer**: " + final_letter;

      const ChunkingResult seg = segment(reasoning_portion(response, o.terminator), keywords);
      if (seg.chunks.size() != n) throw SchemaError("synthetic trace segmented into an unexpected chunk count");

      c.raw_traces.push_back({rec.record_id, o.models[m], response});
      TraceAnnotation t;
      t.record_id = rec.record_id;
      t.model_id = o.models[m];
      t.response = response;
      t.chunks = seg.chunks;
      t.chunk_labels = labels;
      t.final_label = y;
      c.traces.push_back(t);

      const double noise = 1.0 + 0.2 * static_cast<double>(m);
      json row = {{"record_id", rec.record_id}, {"model_id", o.models[m]}};
      std::vector<double> ph(o.hidden_dim);
      for (std::size_t d = 0; d < o.hidden_dim; ++d) {
        ph[d] = noise * rng.normal() + 0.5 * o.signal * (2.0 * y - 1.0) * u_prompt[d];
      }
      row["prompt_hidden"] = ph;
      json jchunks = json::array();
      for (std::size_t k = 0; k < n; ++k) {
        const double sign = labels[k] ? 2.0 * *labels[k] - 1.0 : 0.0;
        std::vector<double> h(o.hidden_dim);
        for (std::size_t d = 0; d < o.hidden_dim; ++d) h[d] = noise * rng.normal() + o.signal * sign * u[d];
        json logits = json::array();
        const std::size_t tokens = between(o.min_tokens, o.max_tokens, rng);
        for (std::size_t t = 0; t < tokens; ++t) {
          std::vector<double> row_logits(o.vocab);
          for (auto& z : row_logits) z = rng.normal();
          row_logits[static_cast<std::size_t>(rng.uniform_index(o.vocab))] += 2.5 + 0.8 * o.signal * sign;
          logits.push_back(row_logits);
        }
        jchunks.push_back({{"hidden", h}, {"token_logits", logits}});
      }
      row["chunks"] = jchunks;
      c.extraction.push_back(std::move(row));
    }
  }
  return c;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& c, const SyntheticOptions& o) {
  std::filesystem::create_directories(dir);
  write_records(c.records, dir / "records.jsonl");
  write_raw_traces(c.raw_traces, dir / "raw_traces.jsonl");
  write_traces(c.traces, dir / "labels.jsonl");
  write_jsonl(dir / "extraction.jsonl", c.extraction);
  json meta = {{"n_records", o.n_records},
               {"models", o.models},
               {"datasets", o.datasets},
               {"test_datasets", c.test_datasets},
               {"hidden_dim", o.hidden_dim},
               {"signal", o.signal},
               {"seed", o.seed},
               {"terminator", o.terminator}};
  std::ofstream f(dir / "corpus.json");
  if (!f) throw IoError("cannot write " + (dir / "corpus.json").string());
  f << meta.dump(2) << '\n';
}

std::string synthetic_judge_reply(const std::string& user) {
  static const std::regex gold_re("\\* Final Ground-Truth Answer: \"([^\"]*)\"");
  static const std::regex result_re("intermediate result is ([A-Za-z0-9]+)");
  std::smatch m;
  if (!std::regex_search(user, m, gold_re)) throw ParseError("judge prompt has no ground-truth answer");
  const std::string gold = m[1].str();
  const std::string task_marker = "### Task: Grade Each Chunk\n\n";
  const auto task = user.find(task_marker);
  if (task == std::string::npos) throw ParseError("judge prompt has no task section");
  const std::string body = user.substr(task + task_marker.size());

  static const std::regex chunk_re("(^|\n\n)Chunk ([0-9]+):\n");
  std::vector<std::pair<std::size_t, std::size_t>> starts;  // (text start, header start)
  for (auto it = std::sregex_iterator(body.begin(), body.end(), chunk_re); it != std::sregex_iterator(); ++it) {
    starts.emplace_back(static_cast<std::size_t>(it->position() + it->length()), static_cast<std::size_t>(it->position()));
  }
  JudgeVerdict v;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t end = k + 1 < starts.size() ? starts[k + 1].second : body.size();
    const std::string text = body.substr(starts[k].first, end - starts[k].first);
    ChunkLabel label;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), result_re); it != std::sregex_iterator(); ++it) {
      label = grade_exact((*it)[1].str(), gold);
    }
    if (label) v.final_label = *label;
    v.chunk_labels.push_back(label);
  }
  return "Here is my assessment.\n" + render_judge_xml(v) + "\n";
}

}  // namespace tracecal

#include "tracecal/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : s_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++p_;
        if (peek() == '[') fail("arrays of tables are not supported");
        std::vector<std::string> path = key_path();
        skip_inline_ws();
        expect(']');
        end_of_line();
        table = &root;
        for (const auto& k : path) {
          json& next = (*table)[k];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail("'" + k + "' is not a table");
          table = &next;
        }
        continue;
      }
      std::vector<std::string> path = key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      json value = parse_value();
      end_of_line();
      json* target = table;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        json& next = (*target)[path[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) fail("'" + path[i] + "' is not a table");
        target = &next;
      }
      if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
      (*target)[path.back()] = std::move(value);
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < p_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw ConfigError("TOML line " + std::to_string(line) + ": " + what);
  }

  bool eof() const { return p_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[p_]; }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++p_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++p_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++p_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') ++p_;
      else if (c == '#') skip_comment();
      else break;
    }
  }

  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (peek() == '\r') ++p_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string bare_or_quoted_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      k.push_back(s_[p_++]);
    }
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> key_path() {
    skip_inline_ws();
    std::vector<std::string> path{bare_or_quoted_key()};
    while (true) {
      skip_inline_ws();
      if (peek() != '.') break;
      ++p_;
      skip_inline_ws();
      path.push_back(bare_or_quoted_key());
    }
    return path;
  }

  std::string basic_string() {
    expect('"');
    if (s_.substr(p_, 2) == "\"\"") fail("multi-line strings are not supported");
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[p_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (eof()) fail("unterminated escape");
      const char e = s_[p_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case 'b': out.push_back('\b'); break;
        case 'f': out.push_back('\f'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'u':
        case 'U': {
          const std::size_t len = e == 'u' ? 4 : 8;
          if (p_ + len > s_.size()) fail("bad unicode escape");
          const unsigned long cp = std::stoul(std::string(s_.substr(p_, len)), nullptr, 16);
          p_ += len;
          append_utf8(out, cp);
          break;
        }
        default: fail(std::string("unknown escape \\") + e);
      }
    }
    return out;
  }

  static void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }

  std::string literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[p_++];
      if (c == '\'') break;
      out.push_back(c);
    }
    return out;
  }

  json parse_value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    std::string tok;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' &&
           peek() != '#') {
      tok.push_back(s_[p_++]);
    }
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok == "inf" || tok == "+inf" || tok == "-inf" || tok == "nan") fail("non-finite numbers are not supported");
    std::string digits;
    for (char ch : tok)
      if (ch != '_') digits.push_back(ch);
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      } else {
        const long long v = std::stoll(digits, &used, 10);
        if (used == digits.size()) return v;
      }
    } catch (const std::logic_error&) {
    }
    fail("invalid value '" + tok + "'");
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++p_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++p_;
        continue;
      }
      if (peek() == ']') {
        ++p_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  std::string_view s_;
  std::size_t p_ = 0;
};

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

json load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const std::string ext = path.extension().string();
  if (ext == ".toml") return parse_toml(text);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace tracecal

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tracecal/config.hpp"
#include "tracecal/error.hpp"

using namespace tracecal;
using nlohmann::json;
using tracecal::test::TempDir;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(TRACECAL_FIXTURE_DIR) + "/" + name, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string error_of(const std::string& text) {
  try {
    parse_toml(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("toml fixture matches a reference reader") {
  const json got = parse_toml(fixture("run_config.toml"));
  const json expect = json::parse(fixture("run_config.expected.json"));
  CHECK(got == expect);
  CHECK(load_config(std::string(TRACECAL_FIXTURE_DIR) + "/run_config.toml") == expect);
}

TEST_CASE("toml subset edge cases") {
  CHECK(parse_toml("") == json::object());
  CHECK(parse_toml("a = 1\n[b]\nc = 2\n[b.d]\ne = 3\n") == json{{"a", 1}, {"b", {{"c", 2}, {"d", {{"e", 3}}}}}});
  CHECK(parse_toml("x = 1.0").at("x").is_number_float());
  CHECK(parse_toml("x = 1").at("x").is_number_integer());
  CHECK(parse_toml("x = false  # trailing").at("x") == false);
  CHECK(parse_toml("s = \"a # not a comment\"").at("s") == "a # not a comment");
}

TEST_CASE("unsupported or malformed toml names the line") {
  CHECK(error_of("a = 1\nb = { c = 2 }").find("line 2") != std::string::npos);
  CHECK(error_of("d = 1979-05-27").find("line 1") != std::string::npos);
  CHECK(error_of("x = \"\"\"multi\nline\"\"\"").find("line 1") != std::string::npos);
  CHECK(error_of("a = 1\na = 2").find("line 2") != std::string::npos);
  CHECK(error_of("[t]\nk =").find("line 2") != std::string::npos);
  CHECK(error_of("x = [1, 2").find("line") != std::string::npos);
  CHECK_FALSE(error_of("x = \"unterminated").empty());
}

TEST_CASE("load_config dispatches on extension") {
  TempDir dir;
  {
    std::ofstream(dir / "c.json") << R"({"train": {"trials": 3}})";
    std::ofstream(dir / "bad.json") << "{";
  }
  CHECK(load_config(dir / "c.json") == json{{"train", {{"trials", 3}}}});
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.toml"), IoError);
}

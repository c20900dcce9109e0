#include "fvv/config.hpp"

#include <doctest.h>

#include <string>

using namespace fvv;

namespace {

std::string error_of(const ConfigSources &s, std::span<const std::string> required = {}) {
  try {
    parse_config(s, required);
  } catch (const ConfigError &e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST_CASE("empty sources and an empty file both give the defaults") {
  CHECK(parse_config({}) == Config{});
  ConfigSources s;
  s.file_text = "{}";
  CHECK(parse_config(s) == Config{});
}

TEST_CASE("precedence is defaults < file < env < flags") {
  ConfigSources s;
  s.file_text = R"({"period_us": 40000, "tolerance_us": 10000, "scene": "walk", "lambda": 2})";
  auto c = parse_config(s);
  CHECK(c.period_us == 40000);
  CHECK(c.scene == "walk");
  CHECK(c.lambda == 2.0);

  s.env["FVV_PERIOD_US"] = "50000";
  s.env["FVV_SCENE"] = "empty";
  c = parse_config(s);
  CHECK(c.period_us == 50000);
  CHECK(c.scene == "empty");

  s.flags["period_us"] = "60000";
  c = parse_config(s);
  CHECK(c.period_us == 60000);
  CHECK(c.scene == "empty");
  CHECK(c.tolerance_us == 10000);
  CHECK(c.lambda == 2.0);
  CHECK(c.height == 360);
}

TEST_CASE("unknown keys are rejected by name") {
  ConfigSources s;
  s.file_text = R"({"perid": 1})";
  const auto msg = error_of(s);
  CHECK(msg.find("\"perid\"") != std::string::npos);
  CHECK(msg.find("unknown key") != std::string::npos);

  ConfigSources f;
  f.flags["widht"] = "10";
  CHECK(error_of(f).find("\"widht\"") != std::string::npos);

  ConfigSources e;
  e.env["FVV_NOPE"] = "1";
  CHECK(error_of(e).find("FVV_NOPE") != std::string::npos);
}

TEST_CASE("type mismatches name the key and the expected type") {
  ConfigSources s;
  s.file_text = R"({"width": "wide"})";
  auto msg = error_of(s);
  CHECK(msg.find("width") != std::string::npos);
  CHECK(msg.find("integer") != std::string::npos);

  s.file_text = R"({"splat": 1})";
  CHECK(error_of(s).find("splat") != std::string::npos);

  ConfigSources f;
  f.flags["lambda"] = "1.5x";
  msg = error_of(f);
  CHECK(msg.find("lambda") != std::string::npos);
  CHECK(msg.find("1.5x") != std::string::npos);

  f.flags = {{"compress", "maybe"}};
  CHECK(error_of(f).find("compress") != std::string::npos);
  f.flags = {{"compress", "on"}};
  CHECK(parse_config(f).compress);
}

TEST_CASE("invalid values are rejected by key") {
  auto bad = [](const char *key, const char *value) {
    ConfigSources s;
    s.flags[key] = value;
    const auto msg = error_of(s);
    CAPTURE(key);
    CHECK(msg.rfind(key, 0) == 0);
  };
  bad("width", "641");
  bad("height", "0");
  bad("tolerance_us", "20000");
  bad("period_us", "0");
  bad("media_port", "70000");
  bad("output_encoding", "jpeg");
  bad("log_level", "loud");
  bad("cameras", "3..1");
  bad("hysteresis", "-0.1");
}

TEST_CASE("missing required keys are named") {
  const std::string required[] = {"dataset"};
  CHECK(error_of({}, required) == "missing required key \"dataset\"");
  ConfigSources s;
  s.flags["dataset"] = "/tmp/x";
  CHECK(parse_config(s, required).dataset == "/tmp/x");
}

TEST_CASE("malformed file text is a config error") {
  ConfigSources s;
  s.file_text = "{\"width\": ";
  CHECK(error_of(s).rfind("config file", 0) == 0);
  s.file_text = "[1, 2]";
  CHECK(error_of(s).find("object") != std::string::npos);
}

TEST_CASE("environment scan keeps only known keys") {
  std::string a = "FVV_WIDTH=320", b = "PATH=/bin", c = "FVV_CONFIG=/nonexistent.json", d = "FVV_HEIGHT=180";
  char *envp[] = {a.data(), b.data(), c.data(), d.data(), nullptr};
  const auto env = config_env(envp);
  CHECK(env.size() == 2);
  CHECK(env.at("FVV_WIDTH") == "320");

  // FVV_CONFIG names the file when no flag does.
  CHECK_THROWS_AS(gather_config_sources(std::nullopt, {}, envp), ConfigError);
  const auto s = gather_config_sources(std::nullopt, {}, envp + 1 + 2);
  CHECK_FALSE(s.file_text);
  CHECK(s.env.size() == 1);
}

TEST_CASE("camera lists") {
  CHECK(parse_camera_list("0..8").size() == 9);
  CHECK(parse_camera_list("5,1,3,1") == std::vector<CameraId>{1, 3, 5});
  CHECK(parse_camera_list("0..2,7") == std::vector<CameraId>{0, 1, 2, 7});
  CHECK_THROWS_AS(parse_camera_list(""), ConfigError);
  CHECK_THROWS_AS(parse_camera_list("a"), ConfigError);
  CHECK_THROWS_AS(parse_camera_list("1,,2"), ConfigError);
}

TEST_CASE("the JSON dump parses back to the same config") {
  ConfigSources s;
  s.flags = {{"width", "320"}, {"height", "180"}, {"compress", "true"}, {"lambda", "0.5"}};
  const auto c = parse_config(s);
  ConfigSources back;
  back.file_text = config_to_json(c);
  CHECK(parse_config(back) == c);
  CHECK(config_keys().size() == 25);
}

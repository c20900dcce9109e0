#include "fvv/config.hpp"

#include "fvv/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <functional>

namespace fvv {

using nlohmann::json;

namespace {

enum class Kind { string, integer, number, boolean };

struct Field {
  const char *key;
  Kind kind;
  std::function<void(Config &, const json &)> set;
  std::function<json(const Config &)> get;
};

template <typename T> Field field(const char *key, Kind kind, T Config::*member) {
  return {key, kind, [member](Config &c, const json &v) { c.*member = v.get<T>(); },
          [member](const Config &c) { return json(c.*member); }};
}

const std::vector<Field> &fields() {
  static const std::vector<Field> f = {
      field("calibration", Kind::string, &Config::calibration),
      field("background", Kind::string, &Config::background),
      field("scene", Kind::string, &Config::scene),
      field("dataset", Kind::string, &Config::dataset),
      field("width", Kind::integer, &Config::width),
      field("height", Kind::integer, &Config::height),
      field("period_us", Kind::integer, &Config::period_us),
      field("tolerance_us", Kind::integer, &Config::tolerance_us),
      field("grace_us", Kind::integer, &Config::grace_us),
      field("max_staleness", Kind::integer, &Config::max_staleness),
      field("lambda", Kind::number, &Config::lambda),
      field("hysteresis", Kind::number, &Config::hysteresis),
      field("epsilon", Kind::number, &Config::epsilon),
      field("epsilon_relative", Kind::number, &Config::epsilon_relative),
      field("splat", Kind::boolean, &Config::splat),
      field("bind", Kind::string, &Config::bind),
      field("server", Kind::string, &Config::server),
      field("media_port", Kind::integer, &Config::media_port),
      field("control_port", Kind::integer, &Config::control_port),
      field("ws_port", Kind::integer, &Config::ws_port),
      field("output_encoding", Kind::string, &Config::output_encoding),
      field("compress", Kind::boolean, &Config::compress),
      field("cameras", Kind::string, &Config::cameras),
      field("ticks", Kind::integer, &Config::ticks),
      field("log_level", Kind::string, &Config::log_level),
  };
  return f;
}

const Field *find_field(const std::string &key) {
  for (const auto &f : fields()) {
    if (key == f.key) {
      return &f;
    }
  }
  return nullptr;
}

const char *kind_name(Kind k) {
  switch (k) {
  case Kind::string:
    return "a string";
  case Kind::integer:
    return "an integer";
  case Kind::number:
    return "a number";
  case Kind::boolean:
    return "a boolean";
  }
  return "?";
}

bool matches(Kind k, const json &v) {
  switch (k) {
  case Kind::string:
    return v.is_string();
  case Kind::integer:
    return v.is_number_integer();
  case Kind::number:
    return v.is_number();
  case Kind::boolean:
    return v.is_boolean();
  }
  return false;
}

// Text from env or a flag -> typed JSON value.
json from_text(const Field &f, const std::string &text, const std::string &origin) {
  auto bad = [&] {
    return ConfigError(origin + " " + f.key + ": expected " + kind_name(f.kind) + ", got \"" + text + "\"");
  };
  switch (f.kind) {
  case Kind::string:
    return text;
  case Kind::integer: {
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw bad();
    }
    return v;
  }
  case Kind::number: {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) {
        throw bad();
      }
      return v;
    } catch (const std::logic_error &) {
      throw bad();
    }
  }
  case Kind::boolean:
    if (text == "true" || text == "1" || text == "on" || text == "yes") {
      return true;
    }
    if (text == "false" || text == "0" || text == "off" || text == "no") {
      return false;
    }
    throw bad();
  }
  throw bad();
}

void apply(Config &c, const Field &f, const json &v, const std::string &origin) {
  if (!matches(f.kind, v)) {
    throw ConfigError(origin + " " + f.key + ": expected " + kind_name(f.kind));
  }
  try {
    f.set(c, v);
  } catch (const json::exception &) {
    throw ConfigError(origin + " " + f.key + ": value out of range");
  }
}

std::string env_name(const std::string &key) {
  std::string out = "FVV_";
  for (char ch : key) {
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return out;
}

void validate(const Config &c) {
  auto fail = [](const std::string &key, const std::string &why) { throw ConfigError(key + ": " + why); };
  if (c.width < 2 || c.width % 2 != 0) {
    fail("width", "must be even and at least 2");
  }
  if (c.height < 2 || c.height % 2 != 0) {
    fail("height", "must be even and at least 2");
  }
  if (c.period_us <= 0) {
    fail("period_us", "must be positive");
  }
  if (c.tolerance_us <= 0 || c.tolerance_us > c.period_us / 2) {
    fail("tolerance_us", "must be in (0, period_us / 2]");
  }
  if (c.grace_us < 0) {
    fail("grace_us", "must not be negative");
  }
  if (c.max_staleness < 0) {
    fail("max_staleness", "must not be negative");
  }
  if (c.lambda < 0) {
    fail("lambda", "must not be negative");
  }
  if (c.hysteresis < 0) {
    fail("hysteresis", "must not be negative");
  }
  if (c.epsilon < 0 || c.epsilon_relative < 0) {
    fail(c.epsilon < 0 ? "epsilon" : "epsilon_relative", "must not be negative");
  }
  for (auto [key, port] : {std::pair{"media_port", c.media_port}, std::pair{"control_port", c.control_port},
                           std::pair{"ws_port", c.ws_port}}) {
    if (port < 0 || port > 65535) {
      fail(key, "must be in [0, 65535]");
    }
  }
  if (c.output_encoding != "png" && c.output_encoding != "raw") {
    fail("output_encoding", "must be \"png\" or \"raw\"");
  }
  if (c.ticks < 0) {
    fail("ticks", "must not be negative");
  }
  static const std::vector<std::string> levels = {"trace", "debug", "info", "warn", "error", "off"};
  if (std::find(levels.begin(), levels.end(), c.log_level) == levels.end()) {
    fail("log_level", "must be one of trace, debug, info, warn, error, off");
  }
  try {
    parse_camera_list(c.cameras);
  } catch (const ConfigError &e) {
    fail("cameras", e.what());
  }
}

} // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto &f : fields()) {
    out.emplace_back(f.key);
  }
  return out;
}

Config parse_config(const ConfigSources &sources, std::span<const std::string> required) {
  Config c;
  std::vector<std::string> seen;

  if (sources.file_text) {
    json doc;
    try {
      doc = json::parse(*sources.file_text);
    } catch (const json::parse_error &e) {
      throw ConfigError(std::string("config file: ") + e.what());
    }
    if (!doc.is_object()) {
      throw ConfigError("config file: top level must be an object");
    }
    for (const auto &[key, value] : doc.items()) {
      const Field *f = find_field(key);
      if (f == nullptr) {
        throw ConfigError("config file: unknown key \"" + key + "\"");
      }
      apply(c, *f, value, "config file");
      seen.push_back(key);
    }
  }
  for (const auto &[name, text] : sources.env) {
    const Field *f = nullptr;
    for (const auto &cand : fields()) {
      if (env_name(cand.key) == name) {
        f = &cand;
      }
    }
    if (f == nullptr) {
      throw ConfigError("environment: unknown key \"" + name + "\"");
    }
    apply(c, *f, from_text(*f, text, "environment"), "environment");
    seen.emplace_back(f->key);
  }
  for (const auto &[key, text] : sources.flags) {
    const Field *f = find_field(key);
    if (f == nullptr) {
      throw ConfigError("flag: unknown key \"" + key + "\"");
    }
    apply(c, *f, from_text(*f, text, "flag"), "flag");
    seen.push_back(key);
  }
  for (const auto &key : required) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      throw ConfigError("missing required key \"" + key + "\"");
    }
  }
  validate(c);
  return c;
}

std::map<std::string, std::string> config_env(char **envp) {
  std::map<std::string, std::string> out;
  if (envp == nullptr) {
    return out;
  }
  for (char **e = envp; *e != nullptr; ++e) {
    const char *eq = std::strchr(*e, '=');
    if (eq == nullptr) {
      continue;
    }
    const std::string name(*e, static_cast<std::size_t>(eq - *e));
    for (const auto &f : fields()) {
      if (env_name(f.key) == name) {
        out[name] = eq + 1;
      }
    }
  }
  return out;
}

ConfigSources gather_config_sources(const std::optional<std::string> &flag_path,
                                    std::map<std::string, std::string> flags, char **envp) {
  ConfigSources s;
  s.env = config_env(envp);
  s.flags = std::move(flags);
  std::optional<std::string> path = flag_path;
  if (!path && envp != nullptr) {
    for (char **e = envp; *e != nullptr; ++e) {
      if (std::strncmp(*e, "FVV_CONFIG=", 11) == 0) {
        path = std::string(*e + 11);
      }
    }
  }
  if (path) {
    try {
      const auto bytes = read_file(*path);
      s.file_text = std::string(bytes.begin(), bytes.end());
    } catch (const std::exception &) {
      throw ConfigError("config file " + *path + ": cannot be read");
    }
  }
  return s;
}

std::string config_to_json(const Config &c) {
  json out = json::object();
  for (const auto &f : fields()) {
    out[f.key] = f.get(c);
  }
  return out.dump(2);
}

std::vector<CameraId> parse_camera_list(const std::string &spec) {
  auto number = [&](std::string_view s) {
    int v = -1;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v < 0 || v >= 0xFFFF) {
      throw ConfigError("bad camera id \"" + std::string(s) + "\" in \"" + spec + "\"");
    }
    return static_cast<CameraId>(v);
  };
  std::vector<CameraId> out;
  std::string_view rest = spec;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    const auto dots = item.find("..");
    if (dots != std::string_view::npos) {
      const auto lo = number(item.substr(0, dots));
      const auto hi = number(item.substr(dots + 2));
      if (hi < lo) {
        throw ConfigError("empty camera range \"" + std::string(item) + "\"");
      }
      for (int i = lo; i <= hi; ++i) {
        out.push_back(static_cast<CameraId>(i));
      }
    } else {
      out.push_back(number(item));
    }
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  if (out.empty()) {
    throw ConfigError("empty camera list");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

AssemblerConfig assembler_config(const Config &c) {
  AssemblerConfig a;
  a.period_us = static_cast<Timestamp>(c.period_us);
  a.tolerance_us = static_cast<Timestamp>(c.tolerance_us);
  a.grace_us = static_cast<Timestamp>(c.grace_us);
  a.max_staleness = c.max_staleness;
  return a;
}

} // namespace fvv

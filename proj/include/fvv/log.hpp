#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace fvv::log {

// Line-delimited JSON records on stderr:
//   {"ts":"...","level":"info","event":"tick",...fields}
void init(const std::string &level);
void set_level(const std::string &level);

void event(const char *level, const std::string &name, const nlohmann::json &fields = nlohmann::json::object());

inline void debug(const std::string &name, const nlohmann::json &f = nlohmann::json::object()) { event("debug", name, f); }
inline void info(const std::string &name, const nlohmann::json &f = nlohmann::json::object()) { event("info", name, f); }
inline void warn(const std::string &name, const nlohmann::json &f = nlohmann::json::object()) { event("warn", name, f); }
inline void error(const std::string &name, const nlohmann::json &f = nlohmann::json::object()) { event("error", name, f); }

bool enabled(const char *level);

} // namespace fvv::log

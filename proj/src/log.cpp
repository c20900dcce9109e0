#include "fvv/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <mutex>

namespace fvv::log {

namespace {

std::shared_ptr<spdlog::logger> &logger() {
  static std::shared_ptr<spdlog::logger> l = [] {
    auto lg = spdlog::stderr_logger_mt("fvv");
    lg->set_pattern(R"({"ts":"%Y-%m-%dT%H:%M:%S.%f%z","level":"%l",%v})");
    lg->set_level(spdlog::level::info);
    lg->flush_on(spdlog::level::info);
    return lg;
  }();
  return l;
}

} // namespace

void set_level(const std::string &level) { logger()->set_level(spdlog::level::from_str(level)); }

void init(const std::string &level) { set_level(level); }

bool enabled(const char *level) { return logger()->should_log(spdlog::level::from_str(level)); }

void event(const char *level, const std::string &name, const nlohmann::json &fields) {
  const auto lvl = spdlog::level::from_str(level);
  auto &lg = logger();
  if (!lg->should_log(lvl)) {
    return;
  }
  nlohmann::json rec = {{"event", name}};
  if (fields.is_object()) {
    rec.update(fields);
  }
  // The pattern supplies the opening brace and the ts/level members.
  const std::string body = rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  lg->log(lvl, "{}", std::string_view(body).substr(1, body.size() - 2));
}

} // namespace fvv::log

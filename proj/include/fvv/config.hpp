#pragma once

#include "fvv/sync.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvv {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// One flat schema shared by every command. Keys are the member names.
struct Config {
  std::string calibration;         // calibration.json; empty = default simulated rig
  std::string background;          // background model dir; empty = render the empty scene
  std::string scene = "default";
  std::string dataset;
  int width = 640;
  int height = 360;
  std::int64_t period_us = 33333;
  std::int64_t tolerance_us = 16666;
  std::int64_t grace_us = 33333;
  int max_staleness = 5;
  double lambda = 1.0;
  double hysteresis = 0.1;
  double epsilon = 0.05;
  double epsilon_relative = 0.05;
  bool splat = true;
  std::string bind = "127.0.0.1";
  std::string server = "127.0.0.1";
  int media_port = 9500;
  int control_port = 9501;
  int ws_port = 9502;
  std::string output_encoding = "png"; // png | raw
  bool compress = false;               // DEFLATE capture payloads
  std::string cameras = "0..8";
  int ticks = 300;
  std::string log_level = "info";

  bool operator==(const Config &) const = default;
};

struct ConfigSources {
  std::optional<std::string> file_text;       // JSON object
  std::map<std::string, std::string> env;     // FVV_<KEY> variables, already filtered
  std::map<std::string, std::string> flags;   // --key value
};

// Merges defaults < file < env < flags. Unknown keys, type mismatches, invalid
// values and missing `required` keys throw ConfigError naming the key.
Config parse_config(const ConfigSources &sources, std::span<const std::string> required = {});

// Collects FVV_<KEY> variables for known keys from an environ-style array.
std::map<std::string, std::string> config_env(char **envp);

// File from `flag_path`, else $FVV_CONFIG, else none.
ConfigSources gather_config_sources(const std::optional<std::string> &flag_path,
                                    std::map<std::string, std::string> flags, char **envp);

std::vector<std::string> config_keys();
std::string config_to_json(const Config &c);

// "0..8", "1,3,5", "2" -> ids.
std::vector<CameraId> parse_camera_list(const std::string &spec);

AssemblerConfig assembler_config(const Config &c);

} // namespace fvv

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "nona/training.hpp"

namespace nona {

// Version stamped into every config echo, result file and checkpoint.
inline constexpr int kFormatVersion = 1;

// Strict JSON config reader. `dataset.target` is required; every other key
// falls back to its default. Unknown keys, wrong types and malformed JSON
// raise ConfigError naming the key or the line and column.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Full config with every default filled in; parse_config(dump) reproduces it.
nlohmann::json config_to_json(const ExperimentConfig& config);
// Single-line form embedded in result files.
std::string config_echo(const ExperimentConfig& config);

}  // namespace nona

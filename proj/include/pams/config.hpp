#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pams/model.hpp"
#include "pams/training.hpp"

namespace pams {

struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
};

/// Parses `key = value` lines; `#` starts a comment. Every ModelConfig and
/// TrainConfig field has a key; unspecified keys keep their defaults and
/// unknown keys are rejected.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one `key`/`value` assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Fully resolved config in the same `key = value` syntax.
std::string render_config(const RunConfig& config);

}  // namespace pams

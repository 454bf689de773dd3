/// @file config.hpp Sectioned key-value configuration files for experiments.
///
/// Format: `[section]` headers followed by `key = value` lines; `#` starts a comment.
/// Sections: model, experiment, filters, bounds, output. See README.md for all keys.
#pragma once

#include "pcrlb/experiment.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace pcrlb
{

class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Parses configuration text. `source` names the input in error messages.
ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<config>");

ExperimentConfig parse_config(const std::filesystem::path& path);

} // namespace pcrlb

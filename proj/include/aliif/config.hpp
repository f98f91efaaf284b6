// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include "aliif/train.hpp"

namespace aliif {

// Raised for unknown keys, unparsable values and failed validation; the CLI
// maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parses a flat "key = value" file ('#' starts a comment) into a
// TrainConfig and validates it.
TrainConfig parse_train_config(const std::string& path);

// Parses config text directly (used by parse_train_config and tests).
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);

}  // namespace aliif

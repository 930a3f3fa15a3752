#pragma once

#include <map>
#include <string>

#include "magn/degradation.hpp"
#include "magn/model.hpp"
#include "magn/trainer.hpp"

namespace magn {

/// key=value lines; '#' starts a comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues load_config_file(const std::string& path);

ModelConfig model_config_from(const KeyValues& kv);
TrainConfig train_config_from(const KeyValues& kv);

/// Canonical key=value rendering; parsing it back reproduces the configs.
KeyValues render_config(const ModelConfig& m);
KeyValues render_config(const ModelConfig& m, const TrainConfig& t);

/// Rejects keys that belong to neither config (catches typos early).
void check_known_keys(const KeyValues& kv);

} // namespace magn

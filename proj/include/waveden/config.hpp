#pragma once

// Flat `key = value` configuration with '#' comments. Command-line overrides
// (--set key=value) take precedence; unknown keys are fatal in both places.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "waveden/loss.hpp"
#include "waveden/model.hpp"

namespace waveden {

struct Settings {
  ModelConfig model;

  int64_t steps = 2000;
  int64_t batch = 16;
  double lr_init = 2e-4;
  double lr_floor = 1e-6;
  LossKind loss = LossKind::charbonnier;
  float charbonnier_eps = 1e-3f;
  float clip_norm = 1.0f;
  uint64_t seed = 0;

  std::string data_root;
  std::string val_root;
  std::string out_dir = ".";
  int64_t checkpoint_interval = 0;  // 0: only at the end of training
  int64_t val_interval = 0;         // 0: no validation during training
  int64_t tile_overlap = 16;
};

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_file(const std::string& path);

// Parses "key=value" items into the map (later entries win).
void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& overrides);

// Validates keys and value syntax; model-level validation is left to
// ModelConfig::validate.
Settings settings_from(const ConfigMap& cfg);

// Ordered model-config key/value list (the part a checkpoint carries).
std::vector<std::pair<std::string, double>> model_config_entries(const ModelConfig& m);
ModelConfig model_config_from_entries(const std::map<std::string, double>& kv);

}  // namespace waveden

#include "waveden/config.hpp"

#include <fstream>

namespace waveden {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size()) detail::fail("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size()) detail::fail("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  detail::fail("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::fail("config: cannot open " + path);
  ConfigMap cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const size_t eq = body.find('=');
    if (eq == std::string::npos)
      detail::fail("config: " + path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) detail::fail("config: " + path + ":" + std::to_string(lineno) + ": empty key");
    cfg[key] = value;
  }
  return cfg;
}

void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) detail::fail("config: override '" + kv + "' is not key=value");
    cfg[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
}

Settings settings_from(const ConfigMap& cfg) {
  Settings s;
  for (const auto& [key, v] : cfg) {
    if (key == "base_channels") s.model.base_channels = parse_int(key, v);
    else if (key == "stages") s.model.stages = parse_int(key, v);
    else if (key == "window_size") s.model.window = parse_int(key, v);
    else if (key == "lf_depth") s.model.lf_depth = parse_int(key, v);
    else if (key == "hf_depth") s.model.hf_depth = parse_int(key, v);
    else if (key == "mlp_ratio") s.model.mlp_ratio = parse_int(key, v);
    else if (key == "leaky_slope") s.model.leaky_slope = float(parse_real(key, v));
    else if (key == "train_patch") s.model.train_patch = parse_int(key, v);
    else if (key == "sliding") s.model.sliding = parse_bool(key, v);
    else if (key == "steps") s.steps = parse_int(key, v);
    else if (key == "batch_size") s.batch = parse_int(key, v);
    else if (key == "lr_init") s.lr_init = parse_real(key, v);
    else if (key == "lr_floor") s.lr_floor = parse_real(key, v);
    else if (key == "loss") {
      if (v == "charbonnier") s.loss = LossKind::charbonnier;
      else if (v == "charbonnier_global") s.loss = LossKind::charbonnier_global;
      else if (v == "l1") s.loss = LossKind::l1;
      else detail::fail("config: loss must be charbonnier, charbonnier_global, or l1");
    }
    else if (key == "charbonnier_eps") s.charbonnier_eps = float(parse_real(key, v));
    else if (key == "clip_norm") s.clip_norm = float(parse_real(key, v));
    else if (key == "seed") s.seed = uint64_t(parse_int(key, v));
    else if (key == "data_root") s.data_root = v;
    else if (key == "val_root") s.val_root = v;
    else if (key == "out_dir") s.out_dir = v;
    else if (key == "checkpoint_interval") s.checkpoint_interval = parse_int(key, v);
    else if (key == "val_interval") s.val_interval = parse_int(key, v);
    else if (key == "tile_overlap") s.tile_overlap = parse_int(key, v);
    else detail::fail("config: unknown key '" + key + "'");
  }
  return s;
}

std::vector<std::pair<std::string, double>> model_config_entries(const ModelConfig& m) {
  return {
      {"base_channels", double(m.base_channels)},
      {"stages", double(m.stages)},
      {"window_size", double(m.window)},
      {"lf_depth", double(m.lf_depth)},
      {"hf_depth", double(m.hf_depth)},
      {"mlp_ratio", double(m.mlp_ratio)},
      {"leaky_slope", double(m.leaky_slope)},
      {"train_patch", double(m.train_patch)},
      {"sliding", m.sliding ? 1.0 : 0.0},
  };
}

ModelConfig model_config_from_entries(const std::map<std::string, double>& kv) {
  ModelConfig m;
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) detail::fail("checkpoint: missing config entry '" + key + "'");
    return it->second;
  };
  m.base_channels = int64_t(get("base_channels"));
  m.stages = int64_t(get("stages"));
  m.window = int64_t(get("window_size"));
  m.lf_depth = int64_t(get("lf_depth"));
  m.hf_depth = int64_t(get("hf_depth"));
  m.mlp_ratio = int64_t(get("mlp_ratio"));
  m.leaky_slope = float(get("leaky_slope"));
  m.train_patch = int64_t(get("train_patch"));
  m.sliding = get("sliding") != 0.0;
  return m;
}

}  // namespace waveden

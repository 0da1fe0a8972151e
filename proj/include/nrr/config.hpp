#pragma once

// Flat key=value run configuration with dotted namespaces:
//
//   # comment
//   arch.n_init = 16
//   loss.saliency_head.p_min = 25
//
// Unknown keys and malformed values are rejected. to_text() writes every
// key with its resolved value, so a snapshot reproduces the run.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nrr/dataset.hpp"
#include "nrr/errors.hpp"
#include "nrr/evalkit.hpp"
#include "nrr/losses.hpp"
#include "nrr/percept.hpp"
#include "nrr/trainkit.hpp"
#include "nrr/unet.hpp"

namespace nrr {

/// Malformed configuration text or an unknown key.
struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

struct RunConfig {
  ArchConfig arch;
  LossConfig loss;
  TrainConfig train;
  DatasetConfig data;
  PerceptConfig percept;
  EvalOptions eval;

  RunConfig() {
    // desk-scale defaults for the bundled 64x64 data
    train.crop_min_h = train.crop_min_w = 32;
    train.crop_max_h = train.crop_max_w = 48;
    loss.head_crop_size = 64;
    train.optim.learning_rate = 3e-4;
    train.optim.warmup_steps = 100;
    arch.n_init = 16;
  }

  void validate() const {
    arch.validate();
    loss.validate();
    train.validate();
    data.validate();
    percept.validate();
    detail::require(eval.boundary_radius >= 1, "eval.boundary_radius must be >= 1");
  }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return i;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  if (!v.empty() && v[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  const unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NRR_FIELD_D(key, expr)                                                                      \
  m[key] = {[](RunConfig& c, const std::string& v) { c.expr = to_double(key, v); },                 \
            [](const RunConfig& c) { return fmt(c.expr); }}
#define NRR_FIELD_I(key, expr)                                                                      \
  m[key] = {[](RunConfig& c, const std::string& v) { c.expr = static_cast<decltype(c.expr)>(to_int(key, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.expr); }}
#define NRR_FIELD_U(key, expr)                                                                      \
  m[key] = {[](RunConfig& c, const std::string& v) { c.expr = to_u64(key, v); },                    \
            [](const RunConfig& c) { return std::to_string(c.expr); }}
#define NRR_FIELD_B(key, expr)                                                                      \
  m[key] = {[](RunConfig& c, const std::string& v) { c.expr = to_bool(key, v); },                   \
            [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }}
#define NRR_FIELD_S(key, expr)                                                                      \
  m[key] = {[](RunConfig& c, const std::string& v) { c.expr = v; },                                 \
            [](const RunConfig& c) { return c.expr; }}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> m;
    NRR_FIELD_I("arch.n_init", arch.n_init);
    NRR_FIELD_I("arch.growth", arch.growth);
    NRR_FIELD_I("arch.extra_upsample_blocks", arch.extra_upsample_blocks);
    NRR_FIELD_U("arch.seed", arch.seed);

    NRR_FIELD_D("loss.w_rec", loss.w_rec);
    NRR_FIELD_D("loss.w_mask", loss.w_mask);
    NRR_FIELD_D("loss.w_head", loss.w_head);
    NRR_FIELD_D("loss.w_temporal", loss.w_temporal);
    NRR_FIELD_D("loss.w_stereo", loss.w_stereo);
    NRR_FIELD_D("loss.rec_l1_fraction", loss.rec_l1_fraction);
    NRR_FIELD_I("loss.head_crop_size", loss.head_crop_size);
    NRR_FIELD_D("loss.saliency_rec.p_min", loss.saliency_rec.p_min);
    NRR_FIELD_D("loss.saliency_rec.p_max", loss.saliency_rec.p_max);
    NRR_FIELD_D("loss.saliency_mask.p_min", loss.saliency_mask.p_min);
    NRR_FIELD_D("loss.saliency_mask.p_max", loss.saliency_mask.p_max);
    NRR_FIELD_D("loss.saliency_head.p_min", loss.saliency_head.p_min);
    NRR_FIELD_D("loss.saliency_head.p_max", loss.saliency_head.p_max);
    NRR_FIELD_B("loss.saliency_enabled", loss.saliency_enabled);
    NRR_FIELD_B("loss.mean_normalize", loss.mean_normalize);

    NRR_FIELD_I("train.crop_min_h", train.crop_min_h);
    NRR_FIELD_I("train.crop_min_w", train.crop_min_w);
    NRR_FIELD_I("train.crop_max_h", train.crop_max_h);
    NRR_FIELD_I("train.crop_max_w", train.crop_max_w);
    NRR_FIELD_D("train.head_crop_probability", train.head_crop_probability);
    NRR_FIELD_D("train.learning_rate", train.optim.learning_rate);
    NRR_FIELD_D("train.beta1", train.optim.beta1);
    NRR_FIELD_D("train.beta2", train.optim.beta2);
    NRR_FIELD_D("train.epsilon", train.optim.epsilon);
    NRR_FIELD_I("train.warmup_steps", train.optim.warmup_steps);
    NRR_FIELD_D("train.weight_decay", train.optim.weight_decay);
    NRR_FIELD_I("train.max_steps", train.max_steps);
    NRR_FIELD_U("train.seed", train.seed);
    NRR_FIELD_I("train.batch_size", train.batch_size);
    NRR_FIELD_I("train.checkpoint_interval", train.checkpoint_interval);
    NRR_FIELD_I("train.calibrate_batches", train.calibrate_batches);

    NRR_FIELD_D("degrade.hole_fraction", data.degradation.hole_fraction);
    NRR_FIELD_D("degrade.hole_blob_scale", data.degradation.hole_blob_scale);
    NRR_FIELD_D("degrade.noise_sigma", data.degradation.noise_sigma);
    NRR_FIELD_I("degrade.downsample_factor", data.degradation.downsample_factor);
    NRR_FIELD_D("degrade.color_gain_min", data.degradation.color_gain_min);
    NRR_FIELD_D("degrade.color_gain_max", data.degradation.color_gain_max);
    NRR_FIELD_D("degrade.color_bias_min", data.degradation.color_bias_min);
    NRR_FIELD_D("degrade.color_bias_max", data.degradation.color_bias_max);
    NRR_FIELD_D("degrade.flicker_amplitude", data.degradation.flicker_amplitude);
    NRR_FIELD_U("degrade.sequence_seed", data.degradation.sequence_seed);

    NRR_FIELD_I("data.holdout_subjects", data.holdout_subjects);
    NRR_FIELD_I("data.holdout_sequences", data.holdout_sequences);
    NRR_FIELD_D("data.focal", data.focal);
    NRR_FIELD_D("data.baseline", data.baseline);
    NRR_FIELD_B("data.stereo", data.stereo);

    NRR_FIELD_S("percept.profile", percept.profile);
    NRR_FIELD_S("percept.weights", percept.weights_path);
    NRR_FIELD_U("percept.seed", percept.seed);

    NRR_FIELD_I("eval.boundary_radius", eval.boundary_radius);
    return m;
  }();
  return table;
}

#undef NRR_FIELD_D
#undef NRR_FIELD_I
#undef NRR_FIELD_U
#undef NRR_FIELD_B
#undef NRR_FIELD_S

}  // namespace detail_config

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : detail_config::fields()) k.push_back(name);
  return k;
}

/// Sets one key; throws ConfigError for unknown keys or bad values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& f = detail_config::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(c, value);
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  const auto& f = detail_config::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(c);
}

/// Applies "key=value" text. Blank lines and lines starting with '#' are skipped.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = detail_config::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + t + "'");
    set_config_value(c, detail_config::trim(t.substr(0, eq)), detail_config::trim(t.substr(eq + 1)));
  }
}

/// Single "key=value" override (command line).
inline void apply_override(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + kv + "'");
  set_config_value(c, detail_config::trim(kv.substr(0, eq)), detail_config::trim(kv.substr(eq + 1)));
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  apply_config_text(c, ss.str(), path.string());
  return c;
}

/// Every key with its resolved value, sorted by key.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& [key, f] : detail_config::fields()) out += key + " = " + f.get(c) + "\n";
  return out;
}

/// Relative extractor weights resolve against $NRR_WEIGHTS_DIR when set.
inline std::string resolve_weights_path(const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  if (path.is_absolute() || std::filesystem::exists(path)) return p;
  if (const char* dir = std::getenv("NRR_WEIGHTS_DIR")) return (std::filesystem::path(dir) / path).string();
  return p;
}

}  // namespace nrr

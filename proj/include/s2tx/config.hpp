#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "s2tx/data/frame.hpp"
#include "s2tx/model/s2tx_model.hpp"

namespace s2tx {

/// Every knob of one experiment. Keys in config files and flags use the
/// member names below.
struct ExperimentConfig {
  std::string dataset = "etth1";
  std::string data_dir;
  Index horizon = 96;
  Index lookback = 336;
  Index local_window = 168;
  Index global_patch_len = 48;
  Index global_stride = 16;
  Index local_patch_len = 16;
  Index local_stride = 8;
  std::string patch_anchor = "end";
  Index d_model = 64;
  Index state_dim = 16;
  Index expand = 2;
  Index conv_kernel = 4;
  Index global_layers = 2;
  Index local_layers = 2;
  Index heads = 4;
  Index ffn_width = 128;
  bool instance_norm = true;
  std::string variant = "full";
  double lr = 1e-4;
  Index batch_size = 32;
  Index epochs = 30;
  Index patience = 5;
  std::uint64_t seed = 2024;
  Index train_stride = 1;
  Index eval_stride = 1;
  Index max_train_windows = 0;
  std::string output_dir = "runs";
  Index synth_variates = 7;
  Index synth_steps = 8000;
  double synth_cross = -0.9;
  double synth_gain = 1.0;
  Index synth_lead = 0;
  Index burst_len = 4;

  ModelSpec model_spec() const {
    ModelSpec s;
    const PatchAnchor anchor = patch_anchor == "start" ? PatchAnchor::start : PatchAnchor::end;
    s.geometry.window = {lookback, local_window, horizon};
    s.geometry.global = {global_patch_len, global_stride, Scale::global, anchor};
    s.geometry.local = {local_patch_len, local_stride, Scale::local, anchor};
    s.mamba = {d_model, state_dim, expand, conv_kernel};
    s.global_layers = global_layers;
    s.attention = {d_model, heads, ffn_width};
    s.local_layers = local_layers;
    s.instance_norm = instance_norm;
    s.variant = parse_variant(variant);
    return s;
  }

  WindowSpec window_spec() const { return {lookback, local_window, horizon}; }

  void validate() const;
  std::string to_text() const;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = lowercase(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for key '" + key + "'");
}

struct ConfigField {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
ConfigField field(M ExperimentConfig::*member, const char* key) {
  ConfigField f;
  f.get = [member](const ExperimentConfig& c) {
    const auto& v = c.*member;
    if constexpr (std::is_same_v<M, std::string>) return v;
    else if constexpr (std::is_same_v<M, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_same_v<M, double>) return format_double(v);
    else return std::to_string(v);
  };
  f.set = [member, key](ExperimentConfig& c, const std::string& text) {
    auto& v = c.*member;
    if constexpr (std::is_same_v<M, std::string>) v = text;
    else if constexpr (std::is_same_v<M, bool>) v = parse_bool(key, text);
    else v = parse_number<M>(key, text);
  };
  return f;
}

}  // namespace detail

/// Ordered key table; the order is the order of the resolved config file.
inline const std::vector<std::pair<std::string, detail::ConfigField>>& config_fields() {
  using detail::field;
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, detail::ConfigField>> fields{
      {"dataset", field(&C::dataset, "dataset")},
      {"data_dir", field(&C::data_dir, "data_dir")},
      {"horizon", field(&C::horizon, "horizon")},
      {"lookback", field(&C::lookback, "lookback")},
      {"local_window", field(&C::local_window, "local_window")},
      {"global_patch_len", field(&C::global_patch_len, "global_patch_len")},
      {"global_stride", field(&C::global_stride, "global_stride")},
      {"local_patch_len", field(&C::local_patch_len, "local_patch_len")},
      {"local_stride", field(&C::local_stride, "local_stride")},
      {"patch_anchor", field(&C::patch_anchor, "patch_anchor")},
      {"d_model", field(&C::d_model, "d_model")},
      {"state_dim", field(&C::state_dim, "state_dim")},
      {"expand", field(&C::expand, "expand")},
      {"conv_kernel", field(&C::conv_kernel, "conv_kernel")},
      {"global_layers", field(&C::global_layers, "global_layers")},
      {"local_layers", field(&C::local_layers, "local_layers")},
      {"heads", field(&C::heads, "heads")},
      {"ffn_width", field(&C::ffn_width, "ffn_width")},
      {"instance_norm", field(&C::instance_norm, "instance_norm")},
      {"variant", field(&C::variant, "variant")},
      {"lr", field(&C::lr, "lr")},
      {"batch_size", field(&C::batch_size, "batch_size")},
      {"epochs", field(&C::epochs, "epochs")},
      {"patience", field(&C::patience, "patience")},
      {"seed", field(&C::seed, "seed")},
      {"train_stride", field(&C::train_stride, "train_stride")},
      {"eval_stride", field(&C::eval_stride, "eval_stride")},
      {"max_train_windows", field(&C::max_train_windows, "max_train_windows")},
      {"output_dir", field(&C::output_dir, "output_dir")},
      {"synth_variates", field(&C::synth_variates, "synth_variates")},
      {"synth_steps", field(&C::synth_steps, "synth_steps")},
      {"synth_cross", field(&C::synth_cross, "synth_cross")},
      {"synth_gain", field(&C::synth_gain, "synth_gain")},
      {"synth_lead", field(&C::synth_lead, "synth_lead")},
      {"burst_len", field(&C::burst_len, "burst_len")},
  };
  return fields;
}

inline const detail::ConfigField& config_field(const std::string& key) {
  for (const auto& [k, f] : config_fields())
    if (k == key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline void apply_overrides(ExperimentConfig& c, const KeyValues& kv) {
  for (const auto& [k, v] : kv) config_field(k).set(c, v);
}

/// Parses "key = value" lines; '#' starts a comment.
inline KeyValues parse_config_text(const std::string& text, const std::string& source = "<config>") {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string value(detail::trim(body.substr(eq + 1)));
    try {
      config_field(key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

inline KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Per-dataset hyperparameter blocks applied before file and flag values.
inline KeyValues dataset_block(const std::string& dataset) {
  if (canonical_dataset(dataset) == "exchange")
    return {{"lookback", "192"},       {"local_window", "96"}, {"global_patch_len", "16"},
            {"global_stride", "8"},    {"local_patch_len", "4"}, {"local_stride", "2"}};
  return {};
}

/// built-in default < dataset block < config file < flags.
inline ExperimentConfig resolve_config(const KeyValues& file, const KeyValues& flags) {
  ExperimentConfig c;
  for (const auto* layer : {&file, &flags})
    if (auto it = layer->find("dataset"); it != layer->end()) c.dataset = it->second;
  apply_overrides(c, dataset_block(c.dataset));
  apply_overrides(c, file);
  apply_overrides(c, flags);
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  if (lookback != 2 * local_window)
    throw ConfigError("lookback (" + std::to_string(lookback) + ") must equal 2 * local_window (" +
                      std::to_string(local_window) + ")");
  if (patch_anchor != "start" && patch_anchor != "end") throw ConfigError("patch_anchor must be 'start' or 'end'");
  try {
    model_spec().validate();
  } catch (const InvalidSpecError& e) {
    throw ConfigError(e.what());
  }
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (batch_size <= 0 || epochs <= 0 || patience <= 0) throw ConfigError("batch_size, epochs and patience must be positive");
  if (train_stride <= 0 || eval_stride <= 0) throw ConfigError("window strides must be positive");
  if (max_train_windows < 0) throw ConfigError("max_train_windows must be non-negative");
  if (burst_len <= 0) throw ConfigError("burst_len must be positive");
  if (synth_variates <= 0 || synth_steps <= 0 || synth_lead < 0) throw ConfigError("synthetic shape must be positive");
}

inline std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : config_fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

}  // namespace s2tx

#pragma once

// Run configuration: model, training and data settings as key=value lines
// under [model], [train] and [data] headers. An optional leading
// `preset=<name>` line selects the defaults the remaining keys override.
//
//   preset=desk
//   [train]
//   epochs=400
//   alpha=equal

#include <charconv>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/datakit.hpp"
#include "multimae/trainer.hpp"

namespace multimae {

struct DataConfig {
  std::string path;  // dataset root holding manifest.txt
  std::size_t shapes = 3;
  double invalid_fraction = 0.05;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const {
    model.validate();
    train.validate();
    if (train.num_visible > model.total_tokens()) {
      throw ConfigError("num_visible " + std::to_string(train.num_visible) + " exceeds the " +
                        std::to_string(model.total_tokens()) + " tokens of all input modalities");
    }
    synthetic().validate();
  }

  SyntheticParams synthetic() const {
    SyntheticParams p;
    p.resolution = model.resolution;
    p.num_classes = model.num_classes;
    p.shapes = data.shapes;
    p.invalid_fraction = data.invalid_fraction;
    return p;
  }

  bool operator==(const RunConfig&) const = default;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"desk", "vitb-paper", "vitb-paper-400"};
  return names;
}

/// "desk": 64 px inputs, D_enc = 64, a run of 2000 short epochs.
/// "vitb-paper": ViT-B/16 at 224 px with the published pre-training recipe.
/// "vitb-paper-400": the same recipe with the 400-epoch ablation budget.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.model = ModelConfig::desk();
    c.train.base_lr = 0.032;  // effective 1e-3 at batch 8
    c.train.batch_size = 8;
    c.train.epochs = 2000;
    c.train.warmup_epochs = 50;
    c.train.num_visible = 16;
  } else if (name == "vitb-paper" || name == "vitb-paper-400") {
    c.model = ModelConfig::vit_base_paper();
    c.train.base_lr = 1e-4;
    c.train.batch_size = 2048;
    c.train.epochs = name == "vitb-paper" ? 1600 : 400;
    c.train.warmup_epochs = 40;
    c.train.num_visible = 98;
  } else {
    throw ConfigError("unknown preset '" + name + "' (desk, vitb-paper, vitb-paper-400)");
  }
  c.train.weight_decay = 0.05;
  c.train.beta1 = 0.9;
  c.train.beta2 = 0.95;
  c.train.warmup_lr = 1e-6;
  c.train.alpha = 1.0;
  return c;
}

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename E, typename F>
std::string join_names(const std::vector<E>& items, F name) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + std::string(name(items[i]));
  return out;
}

struct ConfigField {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MULTIMAE_SIZE_FIELD(sec, name, member)                                                   \
  ConfigField{sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_size(sec "." name, v); }, \
              [](const RunConfig& c) { return std::to_string(c.member); }}
#define MULTIMAE_DOUBLE_FIELD(sec, name, member)                                                   \
  ConfigField{sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_double(sec "." name, v); }, \
              [](const RunConfig& c) { return format_double(c.member); }}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields{
      MULTIMAE_SIZE_FIELD("model", "resolution", model.resolution),
      MULTIMAE_SIZE_FIELD("model", "patch_size", model.patch_size),
      MULTIMAE_SIZE_FIELD("model", "semseg_downsample", model.semseg_downsample),
      MULTIMAE_SIZE_FIELD("model", "semseg_patch_size", model.semseg_patch_size),
      MULTIMAE_SIZE_FIELD("model", "num_classes", model.num_classes),
      MULTIMAE_SIZE_FIELD("model", "class_embed_dim", model.class_embed_dim),
      MULTIMAE_SIZE_FIELD("model", "encoder_dim", model.encoder.dim),
      MULTIMAE_SIZE_FIELD("model", "encoder_depth", model.encoder.depth),
      MULTIMAE_SIZE_FIELD("model", "encoder_heads", model.encoder.heads),
      MULTIMAE_SIZE_FIELD("model", "encoder_mlp_ratio", model.encoder.mlp_ratio),
      MULTIMAE_SIZE_FIELD("model", "decoder_dim", model.decoder.dim),
      MULTIMAE_SIZE_FIELD("model", "decoder_depth", model.decoder.depth),
      MULTIMAE_SIZE_FIELD("model", "decoder_heads", model.decoder.heads),
      MULTIMAE_SIZE_FIELD("model", "decoder_mlp_ratio", model.decoder.mlp_ratio),
      ConfigField{"model", "inputs",
                  [](RunConfig& c, const std::string& v) {
                    c.model.inputs.clear();
                    for (const auto& n : split_list(v)) c.model.inputs.push_back(parse_modality(n));
                  },
                  [](const RunConfig& c) { return join_names(c.model.inputs, modality_name); }},
      ConfigField{"model", "tasks",
                  [](RunConfig& c, const std::string& v) {
                    c.model.tasks.clear();
                    for (const auto& n : split_list(v)) c.model.tasks.push_back(parse_task(n));
                  },
                  [](const RunConfig& c) { return join_names(c.model.tasks, task_name); }},
      MULTIMAE_DOUBLE_FIELD("train", "base_lr", train.base_lr),
      MULTIMAE_DOUBLE_FIELD("train", "weight_decay", train.weight_decay),
      MULTIMAE_DOUBLE_FIELD("train", "beta1", train.beta1),
      MULTIMAE_DOUBLE_FIELD("train", "beta2", train.beta2),
      MULTIMAE_DOUBLE_FIELD("train", "adam_eps", train.adam_eps),
      MULTIMAE_SIZE_FIELD("train", "batch_size", train.batch_size),
      MULTIMAE_SIZE_FIELD("train", "epochs", train.epochs),
      MULTIMAE_SIZE_FIELD("train", "warmup_epochs", train.warmup_epochs),
      MULTIMAE_DOUBLE_FIELD("train", "warmup_lr", train.warmup_lr),
      ConfigField{"train", "alpha", [](RunConfig& c, const std::string& v) { c.train.alpha = parse_alpha(v); },
                  [](const RunConfig& c) { return alpha_to_string(c.train.alpha); }},
      MULTIMAE_SIZE_FIELD("train", "num_visible", train.num_visible),
      ConfigField{"train", "seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("train.seed", v); },
                  [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      MULTIMAE_SIZE_FIELD("train", "accumulation", train.accumulation),
      ConfigField{"train", "augment", [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); },
                  [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); }},
      MULTIMAE_SIZE_FIELD("train", "checkpoint_every", train.checkpoint_every),
      ConfigField{"data", "path", [](RunConfig& c, const std::string& v) { c.data.path = v; },
                  [](const RunConfig& c) { return c.data.path; }},
      MULTIMAE_SIZE_FIELD("data", "shapes", data.shapes),
      MULTIMAE_DOUBLE_FIELD("data", "invalid_fraction", data.invalid_fraction),
  };
  return fields;
}

#undef MULTIMAE_SIZE_FIELD
#undef MULTIMAE_DOUBLE_FIELD

inline const ConfigField& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Applies one "section.key=value" override.
inline void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const auto& field = detail::find_field(detail::trim(assignment.substr(0, dot)), detail::trim(assignment.substr(dot + 1, eq - dot - 1)));
  field.set(config, detail::trim(assignment.substr(eq + 1)));
}

/// Parses config text. Every key must be known; `preset=` may only appear
/// before the first section. The result is not validated.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string raw;
  std::vector<std::pair<std::size_t, std::string>> lines;
  for (std::size_t n = 1; std::getline(in, raw); ++n) {
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (!line.empty()) lines.emplace_back(n, line);
  }
  auto where = [&](std::size_t n) { return origin + ":" + std::to_string(n) + ": "; };

  RunConfig config = preset_config("desk");
  std::size_t first = 0;
  if (!lines.empty() && lines[0].second.rfind("preset", 0) == 0 && lines[0].second.find('=') != std::string::npos) {
    const auto& l = lines[0].second;
    if (detail::trim(l.substr(0, l.find('='))) == "preset") {
      try {
        config = preset_config(detail::trim(l.substr(l.find('=') + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(where(lines[0].first) + e.what());
      }
      first = 1;
    }
  }
  std::string section;
  for (std::size_t i = first; i < lines.size(); ++i) {
    const auto& [n, line] = lines[i];
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where(n) + "malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data") {
        throw ConfigError(where(n) + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where(n) + "expected key=value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (section.empty()) {
      throw ConfigError(where(n) + (key == "preset" ? "preset= must be the first line" : "key '" + key + "' outside a section"));
    }
    try {
      detail::find_field(section, key).set(config, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where(n) + e.what());
    }
  }
  return config;
}

/// Complete, explicit text form; parse_run_config(run_config_to_text(c)) == c.
inline std::string run_config_to_text(const RunConfig& config) {
  std::ostringstream os;
  os << "preset=" << config.preset << '\n';
  std::string section;
  for (const auto& f : detail::config_fields()) {
    if (f.section != section) {
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << '=' << f.get(config) << '\n';
  }
  return os.str();
}

inline RunConfig load_run_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()), path);
}

}  // namespace multimae

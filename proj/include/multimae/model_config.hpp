#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/modality.hpp"

namespace multimae {

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  static EncoderConfig vit_base() { return {768, 12, 12, 4}; }
  bool operator==(const EncoderConfig&) const = default;
};

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t depth = 2;  // self-attention blocks after the cross-attention step
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;

  static DecoderConfig paper() { return {256, 2, 8, 4}; }
  bool operator==(const DecoderConfig&) const = default;
};

struct ModelConfig {
  std::size_t resolution = 64;
  std::size_t patch_size = 16;
  std::size_t semseg_downsample = 4;
  std::size_t semseg_patch_size = 4;
  std::size_t num_classes = 133;
  std::size_t class_embed_dim = 64;
  std::vector<Modality> inputs{Modality::rgb, Modality::depth, Modality::semseg};
  std::vector<Task> tasks{Task::rgb, Task::rgb_standardized, Task::depth, Task::semseg};
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::array<float, 3> rgb_mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> rgb_std{0.5f, 0.5f, 0.5f};
  double norm_eps = 1e-6;

  static ModelConfig desk() { return {}; }

  static ModelConfig vit_base_paper() {
    ModelConfig c;
    c.resolution = 224;
    c.encoder = EncoderConfig::vit_base();
    c.decoder = DecoderConfig::paper();
    return c;
  }

  ModalityConfig modality(Modality m) const {
    ModalityConfig mc;
    mc.id = m;
    mc.resolution = resolution;
    switch (m) {
      case Modality::rgb:
        mc.channels = 3;
        mc.patch_size = patch_size;
        break;
      case Modality::depth:
        mc.channels = 1;
        mc.patch_size = patch_size;
        break;
      case Modality::semseg:
        mc.channels = 1;
        mc.patch_size = semseg_patch_size;
        mc.downsample = semseg_downsample;
        mc.num_classes = num_classes;
        mc.class_embed_dim = class_embed_dim;
        break;
    }
    return mc;
  }

  std::size_t grid() const { return modality(Modality::rgb).grid(); }
  std::size_t tokens_per_modality() const { return grid() * grid(); }
  std::size_t total_tokens() const { return inputs.size() * tokens_per_modality(); }

  /// Values per output patch of a task decoder.
  std::size_t task_patch_dim(Task t) const {
    switch (t) {
      case Task::rgb:
      case Task::rgb_standardized: return patch_size * patch_size * 3;
      case Task::depth: return patch_size * patch_size;
      case Task::semseg: return semseg_patch_size * semseg_patch_size * num_classes;
    }
    return 0;
  }

  bool has_input(Modality m) const { return std::find(inputs.begin(), inputs.end(), m) != inputs.end(); }
  bool has_task(Task t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }

  std::vector<std::size_t> caps() const { return std::vector<std::size_t>(inputs.size(), tokens_per_modality()); }

  void validate() const {
    if (inputs.empty()) throw ConfigError("at least one input modality is required");
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      if (static_cast<int>(inputs[i]) <= static_cast<int>(inputs[i - 1])) {
        throw ConfigError("input modalities must be distinct and in the order rgb, depth, semseg");
      }
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (tasks[i] == tasks[j]) throw ConfigError("task '" + std::string(task_name(tasks[i])) + "' listed twice");
      }
    }
    const std::size_t g = grid();
    for (Modality m : kAllModalities) {
      const auto mc = modality(m);
      mc.validate();
      if (mc.grid() != g) {
        throw ConfigError("modality " + std::string(modality_name(m)) + " has a " + std::to_string(mc.grid()) +
                          "-token grid but rgb has " + std::to_string(g));
      }
    }
    if (encoder.dim == 0 || encoder.heads == 0 || encoder.dim % encoder.heads != 0) {
      throw ConfigError("encoder dim " + std::to_string(encoder.dim) + " must be divisible by heads " + std::to_string(encoder.heads));
    }
    if (decoder.dim == 0 || decoder.heads == 0 || decoder.dim % decoder.heads != 0) {
      throw ConfigError("decoder dim " + std::to_string(decoder.dim) + " must be divisible by heads " + std::to_string(decoder.heads));
    }
    if (encoder.dim % 4 != 0 || decoder.dim % 4 != 0) throw ConfigError("encoder/decoder dims must be divisible by 4");
    if (encoder.mlp_ratio == 0 || decoder.mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace multimae

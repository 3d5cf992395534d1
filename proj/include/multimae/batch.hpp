#pragma once

// Converts raw samples into the patch buffers consumed by the tokenizer and
// the losses. Everything here is parameter-free and deterministic.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/model_config.hpp"
#include "multimae/modality.hpp"
#include "multimae/objective.hpp"

namespace multimae {

struct PreparedBatch {
  std::size_t batch = 0;
  std::size_t grid = 0;
  std::vector<float> rgb;                    // [B, G*G, p*p*3], channel-normalised
  std::vector<float> rgb_standardized;       // [B, G*G, p*p*3], per-patch standardised
  std::vector<float> depth;                  // [B, G*G, p*p], robust-standardised, invalid = 0
  std::vector<float> depth_weight;           // [B, G*G, p*p], 1 valid / 0 invalid
  std::vector<std::uint8_t> semseg_small;    // [B, h, w] class map after downsampling
  std::vector<std::uint8_t> semseg_patches;  // [B, G*G, q*q] downsampled classes in patch order
  std::size_t semseg_side = 0;               // h == w
};

inline bool batch_needs(const ModelConfig& config, Modality m) {
  if (config.has_input(m)) return true;
  for (Task t : config.tasks) {
    if (task_source(t) == m) return true;
  }
  return false;
}

inline PreparedBatch prepare_batch(std::span<const Sample> samples, const ModelConfig& config) {
  config.validate();
  if (samples.empty()) throw ContractError("prepare_batch needs at least one sample");
  PreparedBatch out;
  out.batch = samples.size();
  out.grid = config.grid();
  const std::size_t R = config.resolution;
  const std::size_t p = config.patch_size;
  const bool need_rgb = batch_needs(config, Modality::rgb);
  const bool need_depth = batch_needs(config, Modality::depth);
  const bool need_semseg = batch_needs(config, Modality::semseg);
  out.semseg_side = R / config.semseg_downsample;

  for (const Sample& s : samples) {
    if (s.height != R || s.width != R) {
      throw DataError("sample is " + std::to_string(s.height) + "x" + std::to_string(s.width) + ", model expects " +
                      std::to_string(R) + "x" + std::to_string(R));
    }
    for (Modality m : kAllModalities) {
      if (batch_needs(config, m) && !s.has(m)) {
        throw DataError("sample is missing the " + std::string(modality_name(m)) + " raster");
      }
    }
    if (need_rgb) {
      const auto norm = normalize_rgb(s.rgb, config.rgb_mean, config.rgb_std);
      const auto patches = patchify_values<float>(norm, R, R, 3, p);
      const auto standardized = per_patch_standardize_values<float>(patches, p * p * 3);
      out.rgb.insert(out.rgb.end(), patches.begin(), patches.end());
      out.rgb_standardized.insert(out.rgb_standardized.end(), standardized.begin(), standardized.end());
    }
    if (need_depth) {
      const auto std_depth = robust_standardize_depth(s.depth, s.depth_valid);
      const auto patches = patchify_values<float>(std_depth.values, R, R, 1, p);
      std::vector<float> weight(s.depth_valid.size());
      for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = s.depth_valid[i] ? 1.0f : 0.0f;
      const auto wpatches = patchify_values<float>(weight, R, R, 1, p);
      out.depth.insert(out.depth.end(), patches.begin(), patches.end());
      out.depth_weight.insert(out.depth_weight.end(), wpatches.begin(), wpatches.end());
    }
    if (need_semseg) {
      for (std::uint8_t c : s.semseg) {
        if (c >= config.num_classes) {
          throw DataError("semseg class " + std::to_string(c) + " outside [0, " + std::to_string(config.num_classes) + ")");
        }
      }
      const auto small = downsample_nearest(s.semseg, R, R, config.semseg_downsample);
      const auto patches = patchify_values<std::uint8_t>(small, out.semseg_side, out.semseg_side, 1, config.semseg_patch_size);
      out.semseg_small.insert(out.semseg_small.end(), small.begin(), small.end());
      out.semseg_patches.insert(out.semseg_patches.end(), patches.begin(), patches.end());
    }
  }
  return out;
}

}  // namespace multimae

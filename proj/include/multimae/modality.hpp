#pragma once

// Modality descriptions and the parameter-free half of tokenisation:
// patch extraction, fixed 2D sine-cosine positional tables, nearest-neighbour
// downsampling of class maps and robust depth standardisation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/ops.hpp"
#include "multimae/tensor.hpp"

namespace multimae {

/// Input modalities, in the fixed sequence order used everywhere.
enum class Modality : std::uint8_t { rgb = 0, depth = 1, semseg = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::rgb, Modality::depth, Modality::semseg};

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::depth: return "depth";
    case Modality::semseg: return "semseg";
  }
  return "?";
}

inline Modality parse_modality(std::string_view name) {
  for (Modality m : kAllModalities) {
    if (modality_name(m) == name) return m;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected rgb, depth or semseg)");
}

/// Reconstruction targets. Both rgb tasks read the rgb raster; the
/// standardised variant exists only as an output.
enum class Task : std::uint8_t { rgb = 0, rgb_standardized = 1, depth = 2, semseg = 3 };

inline constexpr std::array<Task, 4> kAllTasks{Task::rgb, Task::rgb_standardized, Task::depth, Task::semseg};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::rgb: return "rgb";
    case Task::rgb_standardized: return "rgb_std";
    case Task::depth: return "depth";
    case Task::semseg: return "semseg";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "' (expected rgb, rgb_std, depth or semseg)");
}

/// Raster a task reconstructs.
inline Modality task_source(Task t) {
  switch (t) {
    case Task::rgb:
    case Task::rgb_standardized: return Modality::rgb;
    case Task::depth: return Modality::depth;
    case Task::semseg: return Modality::semseg;
  }
  return Modality::rgb;
}

enum class LossKind : std::uint8_t { mse, mse_standardized, l1, cross_entropy };

inline LossKind task_loss(Task t) {
  switch (t) {
    case Task::rgb: return LossKind::mse;
    case Task::rgb_standardized: return LossKind::mse_standardized;
    case Task::depth: return LossKind::l1;
    case Task::semseg: return LossKind::cross_entropy;
  }
  return LossKind::mse;
}

struct ModalityConfig {
  Modality id = Modality::rgb;
  std::size_t channels = 3;
  std::size_t resolution = 224;
  std::size_t patch_size = 16;
  std::size_t downsample = 1;
  std::size_t num_classes = 0;      // semseg only
  std::size_t class_embed_dim = 0;  // semseg only

  std::size_t grid() const { return resolution / (downsample * patch_size); }
  std::size_t tokens() const { return grid() * grid(); }

  /// Values per flattened input patch before projection.
  std::size_t patch_values() const {
    return patch_size * patch_size * (id == Modality::semseg ? class_embed_dim : channels);
  }

  void validate() const {
    if (patch_size == 0 || downsample == 0 || resolution == 0) {
      throw ConfigError(std::string(modality_name(id)) + ": sizes must be positive");
    }
    if (resolution % (downsample * patch_size) != 0) {
      throw ConfigError(std::string(modality_name(id)) + ": downsample*patch_size = " +
                        std::to_string(downsample * patch_size) + " does not divide resolution " +
                        std::to_string(resolution));
    }
    if (id == Modality::semseg && (num_classes == 0 || num_classes > 256 || class_embed_dim == 0)) {
      throw ConfigError("semseg: num_classes must be in [1, 256] and class_embed_dim positive");
    }
  }
};

/// One multi-modal training example. Rasters are row-major, channel-last.
struct Sample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> rgb;                 // H*W*3 in [0, 1]
  std::vector<float> depth;               // H*W raw depth
  std::vector<std::uint8_t> depth_valid;  // H*W, nonzero where depth is valid
  std::vector<std::uint8_t> semseg;       // H*W class indices

  bool has(Modality m) const {
    const std::size_t n = height * width;
    switch (m) {
      case Modality::rgb: return n > 0 && rgb.size() == n * 3;
      case Modality::depth: return n > 0 && depth.size() == n && depth_valid.size() == n;
      case Modality::semseg: return n > 0 && semseg.size() == n;
    }
    return false;
  }

  bool operator==(const Sample&) const = default;
};

/// Flat pixel order that lists patches row-major and pixels within a patch
/// row-major, so gathering pixels in this order yields flattened patches.
inline std::vector<std::size_t> patch_pixel_order(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide raster " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  std::vector<std::size_t> order;
  order.reserve(height * width);
  for (std::size_t pr = 0; pr < height / patch; ++pr)
    for (std::size_t pc = 0; pc < width / patch; ++pc)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) order.push_back((pr * patch + y) * width + pc * patch + x);
  return order;
}

/// Raster [H, W, C] -> patches [grid_h * grid_w, patch * patch * C].
template <typename T>
Tensor<T> patchify(const Tensor<T>& raster, std::size_t patch) {
  if (raster.rank() != 3) throw DimensionError("patchify expects [H, W, C], got " + shape_str(raster.shape()));
  const std::size_t H = raster.dim(0), W = raster.dim(1), C = raster.dim(2);
  const auto order = patch_pixel_order(H, W, patch);
  auto pixels = index_select(reshape(raster, {H * W, C}), 0, order);
  return reshape(pixels, {(H / patch) * (W / patch), patch * patch * C});
}

/// Same layout as patchify for plain buffers.
template <typename V>
std::vector<V> patchify_values(std::span<const V> raster, std::size_t height, std::size_t width,
                               std::size_t channels, std::size_t patch) {
  const auto order = patch_pixel_order(height, width, patch);
  std::vector<V> out;
  out.reserve(raster.size());
  for (std::size_t p : order) {
    for (std::size_t c = 0; c < channels; ++c) out.push_back(raster[p * channels + c]);
  }
  return out;
}

/// Inverse of patchify_values.
template <typename V>
std::vector<V> unpatchify_values(std::span<const V> patches, std::size_t height, std::size_t width,
                                 std::size_t channels, std::size_t patch) {
  const auto order = patch_pixel_order(height, width, patch);
  std::vector<V> out(height * width * channels);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) out[order[i] * channels + c] = patches[i * channels + c];
  }
  return out;
}

/// Fixed 2D sine-cosine table [grid*grid, dim]; row (r, c) is
/// [sin(r w), cos(r w), sin(c w), cos(c w)] with w_k = 10000^(-k / (dim/4)).
template <typename T>
Tensor<T> pos_embed_2d(std::size_t dim, std::size_t grid) {
  if (dim == 0 || dim % 4 != 0) throw ConfigError("positional embedding dim must be divisible by 4, got " + std::to_string(dim));
  if (grid == 0) throw ConfigError("positional embedding grid must be positive");
  const std::size_t quarter = dim / 4;
  std::vector<double> omega(quarter);
  for (std::size_t k = 0; k < quarter; ++k) {
    omega[k] = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
  }
  std::vector<T> out(grid * grid * dim);
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c) {
      T* row = &out[(r * grid + c) * dim];
      for (std::size_t k = 0; k < quarter; ++k) {
        row[k] = static_cast<T>(std::sin(static_cast<double>(r) * omega[k]));
        row[quarter + k] = static_cast<T>(std::cos(static_cast<double>(r) * omega[k]));
        row[2 * quarter + k] = static_cast<T>(std::sin(static_cast<double>(c) * omega[k]));
        row[3 * quarter + k] = static_cast<T>(std::cos(static_cast<double>(c) * omega[k]));
      }
    }
  return Tensor<T>::from_data({grid * grid, dim}, std::move(out));
}

/// Nearest-neighbour downsampling by an integer factor: output pixel (y, x)
/// takes input pixel (f*y + f/2, f*x + f/2).
inline std::vector<std::uint8_t> downsample_nearest(std::span<const std::uint8_t> map, std::size_t height,
                                                    std::size_t width, std::size_t factor) {
  if (factor == 0 || height % factor != 0 || width % factor != 0) {
    throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  const std::size_t h = height / factor, w = width / factor;
  std::vector<std::uint8_t> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = map[(y * factor + factor / 2) * width + x * factor + factor / 2];
  return out;
}

/// Class map [H, W] -> downsampled embedded raster [H/f, W/f, E] via the
/// learned table [num_classes, E].
template <typename T>
Tensor<T> embed_semseg(std::span<const std::uint8_t> class_map, std::size_t height, std::size_t width,
                       const Tensor<T>& table, std::size_t factor) {
  const std::size_t classes = table.dim(0);
  for (std::uint8_t c : class_map) {
    if (c >= classes) throw DataError("semseg class " + std::to_string(c) + " outside [0, " + std::to_string(classes) + ")");
  }
  const auto small = downsample_nearest(class_map, height, width, factor);
  std::vector<std::size_t> idx(small.begin(), small.end());
  return reshape(embedding(table, idx), {height / factor, width / factor, table.dim(1)});
}

struct StandardizedDepth {
  std::vector<float> values;
  bool flat = false;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Robust depth standardisation. Statistics come from the valid values
/// between the lower and upper trimming thresholds, inclusive: with n valid
/// values sorted ascending and k = floor(0.1 n), the thresholds are the
/// (k+1)-th smallest and (k+1)-th largest values. Invalid pixels become 0.
inline StandardizedDepth robust_standardize_depth(std::span<const float> depth, std::span<const std::uint8_t> valid) {
  if (depth.size() != valid.size()) throw DimensionError("depth and validity rasters differ in size");
  std::vector<float> vals;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (valid[i]) vals.push_back(depth[i]);
  }
  if (vals.size() < 10) {
    throw DataError("robust depth standardisation needs at least 10 valid pixels, got " + std::to_string(vals.size()));
  }
  std::sort(vals.begin(), vals.end());
  const std::size_t k = vals.size() / 10;
  const double lo = vals[k];
  const double hi = vals[vals.size() - 1 - k];
  double s = 0.0;
  std::size_t n = 0;
  for (float v : vals) {
    if (v >= lo && v <= hi) {
      s += v;
      ++n;
    }
  }
  const double mu = s / static_cast<double>(n);
  double ss = 0.0;
  for (float v : vals) {
    if (v >= lo && v <= hi) ss += (v - mu) * (v - mu);
  }
  const double sigma = std::sqrt(ss / static_cast<double>(n));

  StandardizedDepth out;
  out.values.assign(depth.size(), 0.0f);
  out.mean = mu;
  out.stddev = sigma;
  if (sigma < 1e-8) {
    out.flat = true;
    std::clog << "warning: flat depth map (robust std " << sigma << "); standardized depth set to zero\n";
    return out;
  }
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (valid[i]) out.values[i] = static_cast<float>((depth[i] - mu) / sigma);
  }
  return out;
}

/// Per-channel affine normalisation (x - mean) / std of an [H*W*3] raster.
inline std::vector<float> normalize_rgb(std::span<const float> rgb, const std::array<float, 3>& mean,
                                        const std::array<float, 3>& stddev) {
  std::vector<float> out(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) out[i] = (rgb[i] - mean[i % 3]) / stddev[i % 3];
  return out;
}

}  // namespace multimae

#pragma once

// Reconstruction rendering and the evaluation metrics run on trained models.
//
// Colormaps: rgb as is; depth as linear gray between the minimum (black) and
// maximum (white) of the ground truth's valid standardized values, invalid
// pixels in dark red; semseg through a fixed 133-entry palette built from a
// seeded permutation of a 6x6x6 color cube. Non-visible patches of the masked
// input are mid gray.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "multimae/datakit.hpp"
#include "multimae/image_io.hpp"
#include "multimae/pretrain_loss.hpp"

namespace multimae {

inline constexpr std::array<std::uint8_t, 3> kMaskedGray{128, 128, 128};
inline constexpr std::array<std::uint8_t, 3> kInvalidDepth{96, 0, 0};
inline constexpr std::uint64_t kPaletteSeed = 133;

inline const std::vector<std::array<std::uint8_t, 3>>& semseg_palette() {
  static const std::vector<std::array<std::uint8_t, 3>> palette = [] {
    std::vector<std::size_t> cube(215);
    for (std::size_t i = 0; i < cube.size(); ++i) cube[i] = i + 1;
    Rng rng(kPaletteSeed);
    rng.shuffle(cube);
    std::vector<std::array<std::uint8_t, 3>> out(kDefaultNumClasses);
    out[0] = {0, 0, 0};
    for (std::size_t c = 1; c < out.size(); ++c) {
      const std::size_t k = cube[c - 1];
      out[c] = {static_cast<std::uint8_t>(51 * (k / 36)), static_cast<std::uint8_t>(51 * (k / 6 % 6)),
                static_cast<std::uint8_t>(51 * (k % 6))};
    }
    return out;
  }();
  return palette;
}

/// A square class map at `side` resolution, colored and nearest-upsampled by `scale`.
inline RgbImage render_semseg(std::span<const std::uint8_t> map, std::size_t side, std::size_t scale) {
  const auto& palette = semseg_palette();
  RgbImage img{side * scale, side * scale, std::vector<std::uint8_t>(side * side * scale * scale * 3)};
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t cls = map[(y / scale) * side + x / scale];
      if (cls >= palette.size()) throw DataError("class " + std::to_string(cls) + " has no palette entry");
      const auto& color = palette[cls];
      std::copy(color.begin(), color.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>((y * img.width + x) * 3));
    }
  }
  return img;
}

inline RgbImage render_depth(std::span<const float> depth, std::span<const std::uint8_t> valid, std::size_t side,
                             float lo, float hi) {
  RgbImage img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < side * side; ++i) {
    std::array<std::uint8_t, 3> color = kInvalidDepth;
    if (valid.empty() || valid[i]) {
      const std::uint8_t g = byte_from_unit((depth[i] - lo) / span);
      color = {g, g, g};
    }
    std::copy(color.begin(), color.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return img;
}

inline RgbImage render_rgb(std::span<const float> rgb, std::size_t side) {
  RgbImage img{side, side, {}};
  img.pixels.reserve(rgb.size());
  for (float v : rgb) img.pixels.push_back(byte_from_unit(v));
  return img;
}

/// Copies the pixels of `src` inside the listed patches (grid of `patch` px) into `dst`.
inline void copy_patches(const RgbImage& src, RgbImage& dst, std::size_t patch, const std::vector<std::size_t>& patches) {
  const std::size_t grid = src.width / patch;
  for (std::size_t p : patches) {
    const std::size_t py = p / grid, px = p % grid;
    for (std::size_t y = py * patch; y < (py + 1) * patch; ++y) {
      const auto off = static_cast<std::ptrdiff_t>((y * src.width + px * patch) * 3);
      std::copy(src.pixels.begin() + off, src.pixels.begin() + off + static_cast<std::ptrdiff_t>(patch * 3),
                dst.pixels.begin() + off);
    }
  }
}

inline void gray_out_patches(RgbImage& img, std::size_t patch, const std::vector<std::size_t>& patches) {
  const std::size_t grid = img.width / patch;
  for (std::size_t p : patches) {
    const std::size_t py = p / grid, px = p % grid;
    for (std::size_t y = py * patch; y < (py + 1) * patch; ++y)
      for (std::size_t x = px * patch; x < (px + 1) * patch; ++x)
        std::copy(kMaskedGray.begin(), kMaskedGray.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>((y * img.width + x) * 3));
  }
}

/// Left to right: masked input, prediction with visible patches overlaid, ground truth.
struct Triptych {
  Modality modality = Modality::rgb;
  RgbImage masked;
  RgbImage prediction;
  RgbImage truth;

  RgbImage combined() const {
    RgbImage out{truth.width * 3, truth.height, std::vector<std::uint8_t>(truth.width * 3 * truth.height * 3)};
    for (std::size_t y = 0; y < truth.height; ++y) {
      for (std::size_t k = 0; k < 3; ++k) {
        const RgbImage& src = k == 0 ? masked : (k == 1 ? prediction : truth);
        std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>(y * src.width * 3), src.width * 3,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>((y * out.width + k * src.width) * 3));
      }
    }
    return out;
  }
};

/// Argmax class map [side * side] of sample b from semseg logits [B, G2, q*q*C].
template <typename T>
std::vector<std::uint8_t> semseg_argmax(const Tensor<T>& logits, std::size_t b, const ModelConfig& config) {
  const std::size_t G2 = config.tokens_per_modality();
  const std::size_t C = config.num_classes;
  const std::size_t q = config.semseg_patch_size;
  const std::size_t side = config.resolution / config.semseg_downsample;
  const auto data = logits.data();
  std::vector<std::uint8_t> patches(G2 * q * q);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto first = data.begin() + static_cast<std::ptrdiff_t>((b * G2 * q * q + i) * C);
    patches[i] = static_cast<std::uint8_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(C)) - first);
  }
  return unpatchify_values<std::uint8_t>(patches, side, side, 1, q);
}

/// The predicted class map with the visible semseg patches replaced by the input.
template <typename T>
std::vector<std::uint8_t> composite_semseg(const Tensor<T>& logits, const PreparedBatch& batch, std::size_t b,
                                           const MaskPlan& plan, const ModelConfig& config) {
  auto map = semseg_argmax(logits, b, config);
  const std::size_t side = batch.semseg_side, q = config.semseg_patch_size, grid = side / q;
  const std::uint8_t* truth = batch.semseg_small.data() + b * side * side;
  const std::size_t s = plan.slot(Modality::semseg);
  if (s != MaskPlan::npos) {
    for (std::size_t p : plan.visible[s]) {
      for (std::size_t y = (p / grid) * q; y < (p / grid + 1) * q; ++y)
        for (std::size_t x = (p % grid) * q; x < (p % grid + 1) * q; ++x) map[y * side + x] = truth[y * side + x];
    }
  }
  return map;
}

/// Pixels whose class differs from the right or lower neighbor.
inline std::vector<char> class_edges(std::span<const std::uint8_t> map, std::size_t side) {
  std::vector<char> e(side * side, 0);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const auto c = map[y * side + x];
      e[y * side + x] = (x + 1 < side && map[y * side + x + 1] != c) || (y + 1 < side && map[(y + 1) * side + x] != c);
    }
  }
  return e;
}

struct EdgeAgreement {
  std::size_t matched = 0;
  std::size_t edges = 0;

  double score() const { return edges == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(edges); }
  EdgeAgreement& operator+=(const EdgeAgreement& o) {
    matched += o.matched;
    edges += o.edges;
    return *this;
  }
};

/// Symmetric boundary agreement inside `region`: edge pixels of either map
/// that have an edge of the other map within one pixel (Chebyshev distance).
inline EdgeAgreement edge_agreement(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
                                    std::size_t side, std::span<const char> region) {
  const auto et = class_edges(truth, side), ep = class_edges(pred, side);
  auto near = [&](const std::vector<char>& e, std::size_t y, std::size_t x) {
    for (std::size_t yy = y == 0 ? 0 : y - 1; yy <= std::min(side - 1, y + 1); ++yy)
      for (std::size_t xx = x == 0 ? 0 : x - 1; xx <= std::min(side - 1, x + 1); ++xx)
        if (e[yy * side + xx]) return true;
    return false;
  };
  EdgeAgreement out;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t i = y * side + x;
      if (!region[i]) continue;
      if (et[i]) {
        ++out.edges;
        out.matched += near(ep, y, x);
      }
      if (ep[i]) {
        ++out.edges;
        out.matched += near(et, y, x);
      }
    }
  }
  return out;
}

/// Pixels of the semseg map (side x side) lying in patches the plan hides.
inline std::vector<char> masked_semseg_region(const MaskPlan& plan, const ModelConfig& config) {
  const std::size_t side = config.resolution / config.semseg_downsample, q = config.semseg_patch_size, grid = side / q;
  std::vector<char> region(side * side, 1);
  const std::size_t s = plan.slot(Modality::semseg);
  if (s != MaskPlan::npos) {
    for (std::size_t p : plan.visible[s])
      for (std::size_t y = (p / grid) * q; y < (p / grid + 1) * q; ++y)
        for (std::size_t x = (p % grid) * q; x < (p % grid + 1) * q; ++x) region[y * side + x] = 0;
  }
  return region;
}

struct Reconstruction {
  MaskPlan plan;
  std::vector<Triptych> panels;
  std::vector<std::uint8_t> semseg_composite;  // empty without a semseg task
  EdgeAgreement semseg_edges;
};

/// Runs one sample through the model under `plan` and renders a triptych per
/// reconstructed modality.
inline Reconstruction reconstruct(const MultiMae<float>& model, const Sample& sample, const MaskPlan& plan) {
  const ModelConfig& config = model.config();
  const std::vector<Sample> samples{sample};
  const PreparedBatch batch = prepare_batch(samples, config);
  const std::vector<MaskPlan> plans{plan};
  NoGradGuard no_grad;
  const auto out = model.forward_pretrain(model.tokenize(batch), plans);
  const std::size_t R = config.resolution, p = config.patch_size, G2 = config.tokens_per_modality();

  auto visible_of = [&](Modality m) {
    const std::size_t s = plan.slot(m);
    return s == MaskPlan::npos ? std::vector<std::size_t>{} : plan.visible[s];
  };
  auto hidden_of = [&](Modality m) {
    std::vector<std::size_t> h;
    const auto v = visible_of(m);
    for (std::size_t i = 0; i < G2; ++i)
      if (!std::binary_search(v.begin(), v.end(), i)) h.push_back(i);
    return h;
  };
  auto finish = [&](Triptych t, const RgbImage& input) {
    t.masked = input;
    gray_out_patches(t.masked, p, hidden_of(t.modality));
    copy_patches(input, t.prediction, p, visible_of(t.modality));
    return t;
  };

  Reconstruction rec;
  rec.plan = plan;
  if (config.has_task(Task::rgb)) {
    Triptych t;
    t.modality = Modality::rgb;
    const auto& pred = out.prediction(Task::rgb);
    auto pixels = unpatchify_values<float>(std::vector<float>(pred.data().begin(), pred.data().end()), R, R, 3, p);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = pixels[i] * config.rgb_std[i % 3] + config.rgb_mean[i % 3];
    t.prediction = render_rgb(pixels, R);
    t.truth = render_rgb(sample.rgb, R);
    rec.panels.push_back(finish(std::move(t), render_rgb(sample.rgb, R)));
  }
  if (config.has_task(Task::depth)) {
    Triptych t;
    t.modality = Modality::depth;
    const auto truth = unpatchify_values<float>(batch.depth, R, R, 1, p);
    const auto weight = unpatchify_values<float>(batch.depth_weight, R, R, 1, p);
    std::vector<std::uint8_t> valid(weight.size());
    float lo = 0.0f, hi = 0.0f;
    bool any = false;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      valid[i] = weight[i] > 0.0f;
      if (!valid[i]) continue;
      lo = any ? std::min(lo, truth[i]) : truth[i];
      hi = any ? std::max(hi, truth[i]) : truth[i];
      any = true;
    }
    const auto& pred = out.prediction(Task::depth);
    const auto pixels = unpatchify_values<float>(std::vector<float>(pred.data().begin(), pred.data().end()), R, R, 1, p);
    t.prediction = render_depth(pixels, {}, R, lo, hi);
    t.truth = render_depth(truth, valid, R, lo, hi);
    const RgbImage input = t.truth;
    rec.panels.push_back(finish(std::move(t), input));
  }
  if (config.has_task(Task::semseg)) {
    Triptych t;
    t.modality = Modality::semseg;
    const std::size_t side = batch.semseg_side, scale = config.semseg_downsample;
    const auto& pred = out.prediction(Task::semseg);
    t.prediction = render_semseg(semseg_argmax(pred, 0, config), side, scale);
    t.truth = render_semseg(batch.semseg_small, side, scale);
    const RgbImage input = t.truth;
    rec.panels.push_back(finish(std::move(t), input));
    rec.semseg_composite = composite_semseg(pred, batch, 0, plan, config);
    rec.semseg_edges = edge_agreement(batch.semseg_small, rec.semseg_composite, side, masked_semseg_region(plan, config));
  }
  return rec;
}

struct SemsegAccuracy {
  std::size_t correct = 0;
  std::size_t majority_correct = 0;
  std::size_t pixels = 0;
  std::size_t majority_class = 0;

  double accuracy() const { return pixels ? static_cast<double>(correct) / static_cast<double>(pixels) : 0.0; }
  double baseline() const { return pixels ? static_cast<double>(majority_correct) / static_cast<double>(pixels) : 0.0; }
};

/// Semseg accuracy on masked pixels when the encoder sees only `num_visible`
/// depth tokens, against always predicting the most frequent class of those
/// pixels.
inline SemsegAccuracy depth_only_semseg_accuracy(const MultiMae<float>& model, const std::vector<Sample>& samples,
                                                 std::size_t num_visible, std::uint64_t seed) {
  const ModelConfig& config = model.config();
  if (!config.has_input(Modality::depth) || !config.has_task(Task::semseg)) {
    throw ConfigError("depth-only semseg evaluation needs a depth input and a semseg task");
  }
  std::vector<double> lambda(config.inputs.size(), 0.0);
  lambda[static_cast<std::size_t>(std::find(config.inputs.begin(), config.inputs.end(), Modality::depth) - config.inputs.begin())] = 1.0;
  std::vector<std::size_t> histogram(config.num_classes, 0);
  std::vector<std::pair<std::uint8_t, std::uint8_t>> scored;  // (truth, prediction)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const MaskPlan plan = mask_plan_from_proportions(lambda, config.inputs, config.caps(), num_visible, seed + i);
    const std::vector<Sample> one{samples[i]};
    const PreparedBatch batch = prepare_batch(one, config);
    NoGradGuard no_grad;
    const auto out = model.forward_pretrain(model.tokenize(batch), {plan});
    const auto pred = semseg_argmax(out.prediction(Task::semseg), 0, config);
    const auto region = masked_semseg_region(plan, config);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (!region[k]) continue;
      ++histogram[batch.semseg_small[k]];
      scored.emplace_back(batch.semseg_small[k], pred[k]);
    }
  }
  SemsegAccuracy acc;
  acc.majority_class = static_cast<std::size_t>(std::max_element(histogram.begin(), histogram.end()) - histogram.begin());
  acc.pixels = scored.size();
  for (const auto& [truth, p] : scored) {
    acc.correct += truth == p;
    acc.majority_correct += truth == acc.majority_class;
  }
  return acc;
}

}  // namespace multimae

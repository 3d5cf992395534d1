#pragma once

// Synthetic coupled-modality scenes, per-sample files, dataset manifests and
// the joint crop/flip augmentation.
//
// Files of one sample <id> inside a dataset directory:
//   <id>_rgb.ppm          P6, maxval 255
//   <id>_depth.bin        "DPTH" u32 H u32 W u32 0, then H*W f32
//   <id>_depth_valid.bin  "DVAL" u32 H u32 W u32 0, then H*W bits (LSB first)
//   <id>_semseg.bin       "SSEG" u32 H u32 W, then H*W u8
// All integers little-endian.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/byte_io.hpp"
#include "multimae/image_io.hpp"
#include "multimae/modality.hpp"
#include "multimae/rng.hpp"

namespace multimae {

inline constexpr std::size_t kDefaultNumClasses = 133;

struct SyntheticParams {
  std::size_t resolution = 64;
  std::size_t shapes = 3;
  std::size_t num_classes = kDefaultNumClasses;
  double invalid_fraction = 0.05;

  void validate() const {
    if (resolution < 16 || resolution % 16 != 0) throw ConfigError("resolution must be a positive multiple of 16");
    if (shapes == 0) throw ConfigError("scenes need at least one shape");
    if (num_classes < 2 || num_classes > 256) throw ConfigError("num_classes must be in [2, 256]");
    if (shapes >= num_classes) throw ConfigError("scenes need fewer shapes than classes");
    if (!(invalid_fraction >= 0.0 && invalid_fraction < 0.5)) throw ConfigError("invalid_fraction must be in [0, 0.5)");
  }
};

/// Base colour of a class; class 0 (background) is not used.
inline std::array<float, 3> class_color(std::size_t cls) {
  std::uint64_t h = splitmix64(0x9e3779b97f4a7c15ULL ^ cls);
  std::array<float, 3> c{};
  for (auto& v : c) {
    v = 0.2f + 0.8f * static_cast<float>(h & 0xff) / 255.0f;
    h >>= 8;
  }
  return c;
}

/// Background colour and depth: a far plane rising towards the top.
inline std::array<float, 3> background_color(std::size_t y, std::size_t res) {
  const float t = static_cast<float>(y) / static_cast<float>(res);
  return {0.55f - 0.2f * t, 0.6f - 0.15f * t, 0.7f - 0.1f * t};
}

inline float background_depth(std::size_t y, std::size_t res) {
  return 10.0f - 1.5f * static_cast<float>(y) / static_cast<float>(res);
}

namespace detail {

struct Shape2D {
  bool ellipse = false;
  double cx = 0, cy = 0, hw = 0, hh = 0;
  double depth = 0, gx = 0, gy = 0;
  std::size_t cls = 0;

  bool covers(double x, double y) const {
    const double dx = (x - cx) / hw, dy = (y - cy) / hh;
    return ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
  double depth_at(double x, double y) const { return depth + gx * (x - cx) + gy * (y - cy); }
};

}  // namespace detail

/// Renders `shapes` rectangles/ellipses of distinct classes over the
/// background. Each pixel takes the nearest covering shape in all three rasters, so they agree by
/// construction. Shape depths lie in [1, 7] and are at least 0.5 apart.
inline Sample generate_synthetic_scene(std::uint64_t seed, const SyntheticParams& params) {
  params.validate();
  Rng rng = Rng::derive(seed, {hash_name("synthetic_scene")});
  const std::size_t R = params.resolution;
  const double res = static_cast<double>(R);
  std::vector<detail::Shape2D> shapes;
  for (std::size_t k = 0; k < params.shapes; ++k) {
    detail::Shape2D s;
    s.ellipse = rng.bernoulli(0.5);
    s.hw = res * rng.uniform(0.1, 0.28);
    s.hh = res * rng.uniform(0.1, 0.28);
    s.cx = rng.uniform(0.0, res);
    s.cy = rng.uniform(0.0, res);
    do {
      s.cls = 1 + static_cast<std::size_t>(rng.below(params.num_classes - 1));
    } while (std::any_of(shapes.begin(), shapes.end(), [&](const detail::Shape2D& o) { return o.cls == s.cls; }));
    for (int attempt = 0; attempt < 64; ++attempt) {
      s.depth = rng.uniform(1.0, 7.0);
      const bool clear = std::none_of(shapes.begin(), shapes.end(),
                                      [&](const detail::Shape2D& o) { return std::abs(o.depth - s.depth) < 0.5; });
      if (clear) break;
    }
    s.gx = rng.uniform(-0.3, 0.3) / res;
    s.gy = rng.uniform(-0.3, 0.3) / res;
    shapes.push_back(s);
  }

  Sample out;
  out.height = out.width = R;
  out.rgb.resize(R * R * 3);
  out.depth.resize(R * R);
  out.depth_valid.assign(R * R, 1);
  out.semseg.assign(R * R, 0);
  for (std::size_t y = 0; y < R; ++y) {
    for (std::size_t x = 0; x < R; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const detail::Shape2D* nearest = nullptr;
      for (const auto& s : shapes) {
        if (s.covers(px, py) && (!nearest || s.depth_at(px, py) < nearest->depth_at(px, py))) nearest = &s;
      }
      const std::size_t i = y * R + x;
      std::array<float, 3> color;
      if (nearest) {
        const double d = nearest->depth_at(px, py);
        const auto base = class_color(nearest->cls);
        const float shade = static_cast<float>(1.1 - 0.08 * d);
        for (std::size_t c = 0; c < 3; ++c) color[c] = base[c] * shade;
        out.depth[i] = static_cast<float>(d);
        out.semseg[i] = static_cast<std::uint8_t>(nearest->cls);
      } else {
        color = background_color(y, R);
        out.depth[i] = background_depth(y, R);
      }
      for (std::size_t c = 0; c < 3; ++c) out.rgb[i * 3 + c] = unit_from_byte(byte_from_unit(color[c]));
    }
  }
  for (std::size_t i = 0; i < R * R; ++i) {
    if (rng.bernoulli(params.invalid_fraction)) {
      out.depth_valid[i] = 0;
      out.depth[i] = 0.0f;
    }
  }
  return out;
}

struct AugmentParams {
  double scale_min = 0.2;
  double scale_max = 1.0;
  double ratio_min = 0.75;
  double ratio_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  std::size_t output_resolution = 64;

  void validate() const {
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
    if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) throw ConfigError("aspect range must satisfy 0 < min <= max");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip probability must be in [0, 1]");
    if (output_resolution == 0) throw ConfigError("output resolution must be positive");
  }
};

struct CropBox {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
  bool operator==(const CropBox&) const = default;
};

/// Area fraction and log-uniform aspect ratio, up to 10 attempts, then the
/// largest centred square.
inline CropBox sample_crop(std::size_t height, std::size_t width, const AugmentParams& params, Rng& rng) {
  const double area = static_cast<double>(height * width);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(params.scale_min, params.scale_max);
    const double ratio = std::exp(rng.uniform(std::log(params.ratio_min), std::log(params.ratio_max)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const auto y0 = static_cast<std::size_t>(rng.below(height - h + 1));
      const auto x0 = static_cast<std::size_t>(rng.below(width - w + 1));
      return {x0, y0, w, h};
    }
  }
  const std::size_t side = std::min(height, width);
  return {(width - side) / 2, (height - side) / 2, side, side};
}

/// Resamples the crop of every raster to out x out, mirroring columns when
/// `flip` is set. rgb is bilinear, depth bilinear over valid neighbours
/// only, semseg nearest.
inline Sample apply_crop_flip(const Sample& in, const CropBox& box, bool flip, std::size_t out) {
  if (box.width == 0 || box.height == 0 || box.x0 + box.width > in.width || box.y0 + box.height > in.height) {
    throw ContractError("crop box outside the sample");
  }
  Sample s;
  s.height = s.width = out;
  const bool rgb = in.has(Modality::rgb), depth = in.has(Modality::depth), semseg = in.has(Modality::semseg);
  if (rgb) s.rgb.resize(out * out * 3);
  if (depth) {
    s.depth.resize(out * out);
    s.depth_valid.resize(out * out);
  }
  if (semseg) s.semseg.resize(out * out);
  const double sy_scale = static_cast<double>(box.height) / static_cast<double>(out);
  const double sx_scale = static_cast<double>(box.width) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double fy = std::clamp((static_cast<double>(i) + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(box.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, box.height - 1);
    const double wy = fy - static_cast<double>(y0);
    const std::size_t ny = std::min(box.height - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * sy_scale));
    for (std::size_t j = 0; j < out; ++j) {
      const std::size_t jj = flip ? out - 1 - j : j;
      const double fx = std::clamp((static_cast<double>(jj) + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(box.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, box.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const std::size_t nx = std::min(box.width - 1, static_cast<std::size_t>((static_cast<double>(jj) + 0.5) * sx_scale));
      const std::array<std::size_t, 4> src{(box.y0 + y0) * in.width + box.x0 + x0, (box.y0 + y0) * in.width + box.x0 + x1,
                                           (box.y0 + y1) * in.width + box.x0 + x0, (box.y0 + y1) * in.width + box.x0 + x1};
      const std::array<double, 4> w{(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
      const std::size_t o = i * out + j;
      if (rgb) {
        for (std::size_t c = 0; c < 3; ++c) {
          double v = 0.0;
          for (std::size_t k = 0; k < 4; ++k) v += w[k] * in.rgb[src[k] * 3 + c];
          s.rgb[o * 3 + c] = static_cast<float>(v);
        }
      }
      if (depth) {
        double v = 0.0, total = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          if (in.depth_valid[src[k]] && w[k] > 0.0) {
            v += w[k] * in.depth[src[k]];
            total += w[k];
          }
        }
        if (total > 1e-9) {
          s.depth[o] = static_cast<float>(v / total);
          s.depth_valid[o] = 1;
        } else {
          s.depth[o] = 0.0f;
          s.depth_valid[o] = 0;
        }
      }
      if (semseg) s.semseg[o] = in.semseg[(box.y0 + ny) * in.width + box.x0 + nx];
    }
  }
  return s;
}

inline Sample random_resized_crop_flip(const Sample& in, const AugmentParams& params, Rng& rng) {
  params.validate();
  const CropBox box = sample_crop(in.height, in.width, params, rng);
  const bool flip = rng.bernoulli(params.flip_probability);
  return apply_crop_flip(in, box, flip, params.output_resolution);
}

inline Sample hflip(const Sample& in) {
  return apply_crop_flip(in, {0, 0, in.width, in.height}, true, in.width);
}

// ---------------------------------------------------------------------------
// Per-sample files

inline std::vector<std::uint8_t> encode_depth(const Sample& s) {
  ByteWriter w;
  w.raw("DPTH");
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(0);
  for (float v : s.depth) w.f32(v);
  return w.bytes();
}

inline std::vector<std::uint8_t> encode_validity(const Sample& s) {
  ByteWriter w;
  w.raw("DVAL");
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(0);
  std::vector<std::uint8_t> bits((s.depth_valid.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < s.depth_valid.size(); ++i) {
    if (s.depth_valid[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.raw(bits);
  return w.bytes();
}

inline std::vector<std::uint8_t> encode_semseg(const Sample& s) {
  ByteWriter w;
  w.raw("SSEG");
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.raw(s.semseg);
  return w.bytes();
}

namespace detail {

/// Reads magic + H + W (+ reserved word) and checks the total size.
inline std::pair<std::size_t, std::size_t> read_raster_header(ByteReader& r, std::span<const std::uint8_t> bytes,
                                                              std::string_view magic, bool reserved,
                                                              std::size_t payload_per_pixel_bits,
                                                              const std::string& what) {
  r.expect_magic(magic);
  const std::size_t h = r.u32(), w = r.u32();
  if (reserved) r.u32();
  if (h == 0 || w == 0) throw FormatError(what + ": zero raster dimension");
  const std::size_t payload = (h * w * payload_per_pixel_bits + 7) / 8;
  const std::size_t expected = r.offset() + payload;
  if (bytes.size() != expected) {
    throw FormatError(what + ": expected " + std::to_string(expected) + " bytes for a " + std::to_string(h) + "x" +
                      std::to_string(w) + " raster, file has " + std::to_string(bytes.size()));
  }
  return {h, w};
}

}  // namespace detail

inline void decode_depth(std::span<const std::uint8_t> bytes, Sample& s, const std::string& what) {
  ByteReader r(bytes, what);
  const auto [h, w] = detail::read_raster_header(r, bytes, "DPTH", true, 32, what);
  if (h != s.height || w != s.width) throw FormatError(what + ": raster size differs from the rgb image");
  s.depth.resize(h * w);
  for (auto& v : s.depth) v = r.f32();
}

inline void decode_validity(std::span<const std::uint8_t> bytes, Sample& s, const std::string& what) {
  ByteReader r(bytes, what);
  const auto [h, w] = detail::read_raster_header(r, bytes, "DVAL", true, 1, what);
  if (h != s.height || w != s.width) throw FormatError(what + ": raster size differs from the rgb image");
  const auto bits = r.take((h * w + 7) / 8);
  s.depth_valid.resize(h * w);
  for (std::size_t i = 0; i < h * w; ++i) s.depth_valid[i] = (bits[i / 8] >> (i % 8)) & 1u;
}

inline void decode_semseg(std::span<const std::uint8_t> bytes, Sample& s, std::size_t num_classes,
                          const std::string& what) {
  ByteReader r(bytes, what);
  const auto [h, w] = detail::read_raster_header(r, bytes, "SSEG", false, 8, what);
  if (h != s.height || w != s.width) throw FormatError(what + ": raster size differs from the rgb image");
  const auto data = r.take(h * w);
  s.semseg.assign(data.begin(), data.end());
  for (std::uint8_t c : s.semseg) {
    if (c >= num_classes) {
      throw DataError(what + ": class " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

inline std::string sample_path(const std::string& root, const std::string& id, std::string_view suffix) {
  return (std::filesystem::path(root) / (id + std::string(suffix))).string();
}

inline void save_sample(const std::string& root, const std::string& id, const Sample& s) {
  if (!s.has(Modality::rgb) || !s.has(Modality::depth) || !s.has(Modality::semseg)) {
    throw DataError("sample '" + id + "' lacks a modality raster");
  }
  RgbImage img{s.width, s.height, {}};
  img.pixels.reserve(s.rgb.size());
  for (float v : s.rgb) img.pixels.push_back(byte_from_unit(v));
  write_ppm(sample_path(root, id, "_rgb.ppm"), img);
  write_file_bytes(sample_path(root, id, "_depth.bin"), encode_depth(s));
  write_file_bytes(sample_path(root, id, "_depth_valid.bin"), encode_validity(s));
  write_file_bytes(sample_path(root, id, "_semseg.bin"), encode_semseg(s));
}

inline Sample load_sample(const std::string& root, const std::string& id, std::size_t num_classes = kDefaultNumClasses) {
  Sample s;
  const auto img = read_ppm(sample_path(root, id, "_rgb.ppm"));
  s.height = img.height;
  s.width = img.width;
  s.rgb.reserve(img.pixels.size());
  for (std::uint8_t b : img.pixels) s.rgb.push_back(unit_from_byte(b));
  const auto dpath = sample_path(root, id, "_depth.bin");
  decode_depth(read_file_bytes(dpath), s, dpath);
  const auto vpath = sample_path(root, id, "_depth_valid.bin");
  decode_validity(read_file_bytes(vpath), s, vpath);
  const auto spath = sample_path(root, id, "_semseg.bin");
  decode_semseg(read_file_bytes(spath), s, num_classes, spath);
  return s;
}

// ---------------------------------------------------------------------------
// Manifest: "key=value" header lines, a "[samples]" line, then one id per line.

struct DatasetManifest {
  std::string root;
  std::vector<std::string> ids;
  std::size_t resolution = 0;
  std::size_t num_classes = kDefaultNumClasses;
  std::map<std::string, std::string> header;  // everything else, e.g. generator settings
};

inline std::string manifest_path(const std::string& root) { return (std::filesystem::path(root) / "manifest.txt").string(); }

inline std::string encode_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "resolution=" << m.resolution << '\n' << "num_classes=" << m.num_classes << '\n';
  for (const auto& [k, v] : m.header) os << k << '=' << v << '\n';
  os << "[samples]\n";
  for (const auto& id : m.ids) os << id << '\n';
  return os.str();
}

inline DatasetManifest decode_manifest(const std::string& text, const std::string& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  bool samples = false;
  std::size_t lineno = 0;
  auto as_size = [&](const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::size_t out = 0;
    try {
      out = std::stoul(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw FormatError("manifest: bad value for " + key + ": '" + v + "'");
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (samples) {
      if (line.find_first_of("/\\") != std::string::npos) throw FormatError("manifest: sample id '" + line + "' contains a path separator");
      m.ids.push_back(line);
      continue;
    }
    if (line == "[samples]") {
      samples = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "resolution") {
      m.resolution = as_size(key, value);
    } else if (key == "num_classes") {
      m.num_classes = as_size(key, value);
    } else {
      m.header[key] = value;
    }
  }
  if (!samples) throw FormatError("manifest: missing [samples] section");
  if (m.ids.empty()) throw FormatError("manifest: no samples listed");
  if (m.resolution == 0) throw FormatError("manifest: missing resolution");
  return m;
}

inline DatasetManifest read_manifest(const std::string& root) {
  const auto bytes = read_file_bytes(manifest_path(root));
  return decode_manifest(std::string(bytes.begin(), bytes.end()), root);
}

inline std::string sample_id(std::size_t i) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << i;
  return os.str();
}

/// Writes `num` synthetic scenes (sample i uses seed derived from (seed, i))
/// and the manifest.
inline DatasetManifest generate_dataset(const std::string& root, std::size_t num, std::uint64_t seed,
                                        const SyntheticParams& params) {
  if (num == 0) throw ConfigError("num must be >= 1");
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec || !std::filesystem::is_directory(root)) throw IoError("cannot create dataset directory '" + root + "'");
  DatasetManifest m;
  m.root = root;
  m.resolution = params.resolution;
  m.num_classes = params.num_classes;
  m.header["generator"] = "synthetic";
  m.header["seed"] = std::to_string(seed);
  m.header["shapes"] = std::to_string(params.shapes);
  std::ostringstream frac;
  frac.precision(17);
  frac << params.invalid_fraction;
  m.header["invalid_fraction"] = frac.str();
  for (std::size_t i = 0; i < num; ++i) {
    m.ids.push_back(sample_id(i));
    const std::uint64_t sample_seed = Rng::derive(seed, {hash_name("dataset_sample"), i}).next_u64();
    save_sample(root, m.ids.back(), generate_synthetic_scene(sample_seed, params));
  }
  const auto text = encode_manifest(m);
  write_file_bytes(manifest_path(root), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return m;
}

inline std::vector<Sample> load_dataset(const DatasetManifest& m) {
  std::vector<Sample> out;
  for (const auto& id : m.ids) {
    out.push_back(load_sample(m.root, id, m.num_classes));
    if (out.back().height != m.resolution || out.back().width != m.resolution) {
      throw DataError("sample '" + id + "' is " + std::to_string(out.back().height) + "x" +
                      std::to_string(out.back().width) + ", manifest says " + std::to_string(m.resolution));
    }
  }
  return out;
}

}  // namespace multimae

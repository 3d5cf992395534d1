#pragma once

// Binary PPM (P6, maxval 255) reading and writing.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "multimae/byte_io.hpp"

namespace multimae {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  bool operator==(const RgbImage&) const = default;
};

inline std::uint8_t byte_from_unit(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float unit_from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  if (img.pixels.size() != img.width * img.height * 3) throw ContractError("ppm: pixel buffer does not match size");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline RgbImage decode_ppm(std::span<const std::uint8_t> bytes, const std::string& what = "ppm") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1u << 24) throw FormatError(what + ": " + field + " too large");
      ++pos;
    }
    if (pos == start) throw FormatError(what + ": expected " + field + " at offset " + std::to_string(start));
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError(what + ": not a binary PPM (missing P6 magic)");
  pos = 2;
  RgbImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) throw FormatError(what + ": PPM maxval must be 255, got " + std::to_string(maxval));
  if (img.width == 0 || img.height == 0) throw FormatError(what + ": zero image dimension");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(what + ": missing whitespace after header");
  ++pos;
  const std::size_t expected = img.width * img.height * 3;
  if (bytes.size() - pos != expected) {
    throw FormatError(what + ": expected " + std::to_string(expected) + " pixel bytes, found " + std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) { write_file_bytes(path, encode_ppm(img)); }

inline RgbImage read_ppm(const std::string& path) { return decode_ppm(read_file_bytes(path), path); }

}  // namespace multimae

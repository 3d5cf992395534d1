#pragma once

// Little-endian encoding helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multimae/errors.hpp"

namespace multimae {

class ByteWriter {
 public:
  template <typename U>
  void put_uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put_uint(v); }
  void u64(std::uint64_t v) { put_uint(v); }
  void f32(float v) { put_uint(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void raw(std::span<const std::uint8_t> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  /// u32 length followed by the bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Sequential reader; every shortfall raises FormatError naming the offset
/// and the expected and available byte counts.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) {
      throw FormatError(what_ + ": truncated at offset " + std::to_string(pos_) + " (expected " + std::to_string(n) +
                        " more bytes, " + std::to_string(remaining()) + " available)");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U get_uint() {
    const auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(s[i]) << (8 * i);
    return v;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() { return get_uint<std::uint32_t>(); }
  std::uint64_t u64() { return get_uint<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_uint<std::uint32_t>()); }

  std::string str() {
    const std::uint32_t n = u32();
    const auto s = take(n);
    return std::string(s.begin(), s.end());
  }

  void expect_magic(std::string_view magic) {
    const std::size_t at = pos_;
    const auto s = take(magic.size());
    if (!std::equal(s.begin(), s.end(), magic.begin())) {
      throw FormatError(what_ + ": bad magic at offset " + std::to_string(at) + " (expected '" + std::string(magic) + "')");
    }
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(what_ + ": " + message + " at offset " + std::to_string(pos_));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace multimae

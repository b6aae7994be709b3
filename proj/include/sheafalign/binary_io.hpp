#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sheafalign/error.hpp"

namespace sheafalign {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source. Every read names the section it belongs to so
/// failures report where in the file they happened.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  void section(std::string name) { section_ = std::move(name); }
  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(section_, pos_, what); }
  [[noreturn]] void fail_at(std::uint64_t offset, const std::string& what) const {
    throw ParseError(section_, offset, what);
  }

  void need(std::size_t n) const {
    if (remaining() < n) {
      fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
    }
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(buf_[pos_ + k]) << (8 * k);
    pos_ += n;
    return v;
  }

  const std::vector<std::uint8_t>& buf_;
  std::uint64_t pos_ = 0;
  std::string section_ = "file";
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// FNV-1a 64.
std::uint64_t checksum64(const std::uint8_t* data, std::size_t n);

}  // namespace sheafalign

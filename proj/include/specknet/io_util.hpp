#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "specknet/common.hpp"

namespace specknet::detail {

// Explicit little-endian encoding, independent of host byte order.

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u32be(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

// Cursor over a byte buffer; throws FormatError naming the offset on
// truncation.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) {
    if (pos_ + n > data_.size())
      throw FormatError(origin_ + ": truncated while reading " +
                        std::string(what) + " at byte offset " +
                        std::to_string(pos_) + " (need " + std::to_string(n) +
                        ", have " + std::to_string(data_.size() - pos_) + ")");
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return std::uint8_t(data_[pos_++]);
  }

  std::uint16_t u16le(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= std::uint16_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32le(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64le(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint32_t u32be(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v = (v << 8) | std::uint8_t(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  float f32le(const char* what) {
    const std::uint32_t bits = u32le(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64le(const char* what) {
    const std::uint64_t bits = u64le(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const std::uint8_t* raw(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = reinterpret_cast<const std::uint8_t*>(data_.data() + pos_);
    pos_ += n;
    return p;
  }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(data.data(), std::streamsize(data.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace specknet::detail

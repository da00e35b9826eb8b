#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/io_util.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

// IDX image/label files: big-endian u32 header words, raw bytes after.
// Image files carry magic 0x00000803 (u8 data, 3 dims), label files
// 0x00000801 (u8 data, 1 dim).
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline Tensor<std::uint8_t> read_idx_images(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  const std::uint32_t magic = r.u32be("image magic");
  if (magic != kIdxImageMagic)
    throw FormatError(path + ": bad image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000803");
  const std::size_t n = r.u32be("image count");
  const std::size_t h = r.u32be("image rows");
  const std::size_t w = r.u32be("image cols");
  Tensor<std::uint8_t> images({n, h, w});
  const std::uint8_t* p = r.raw(n * h * w, "image pixels");
  std::copy(p, p + images.size(), images.data());
  return images;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  const std::uint32_t magic = r.u32be("label magic");
  if (magic != kIdxLabelMagic)
    throw FormatError(path + ": bad label magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000801");
  const std::size_t n = r.u32be("label count");
  const std::uint8_t* p = r.raw(n, "labels");
  return std::vector<std::uint8_t>(p, p + n);
}

inline void write_idx_images(const std::string& path,
                             const Tensor<std::uint8_t>& images) {
  if (images.rank() != 3)
    throw DimensionError("write_idx_images: expected [N x H x W], got " +
                         shape_to_string(images.shape()));
  std::string out;
  out.reserve(16 + images.size());
  detail::put_u32be(out, kIdxImageMagic);
  detail::put_u32be(out, std::uint32_t(images.dim(0)));
  detail::put_u32be(out, std::uint32_t(images.dim(1)));
  detail::put_u32be(out, std::uint32_t(images.dim(2)));
  out.append(reinterpret_cast<const char*>(images.data()), images.size());
  detail::write_file(path, out);
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<std::uint8_t>& labels) {
  std::string out;
  out.reserve(8 + labels.size());
  detail::put_u32be(out, kIdxLabelMagic);
  detail::put_u32be(out, std::uint32_t(labels.size()));
  out.append(reinterpret_cast<const char*>(labels.data()), labels.size());
  detail::write_file(path, out);
}

}  // namespace specknet

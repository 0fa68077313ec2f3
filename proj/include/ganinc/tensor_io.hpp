#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "ganinc/errors.hpp"
#include "ganinc/tensor.hpp"

namespace ganinc {

// Tensor file layout, all integers little-endian:
//   magic "ILTF", version u32 = 1, dtype u8 (1 = IEEE-754 binary32),
//   rank u8, dims u32 each, then the row-major payload.
namespace iltf {

constexpr char kMagic[4] = {'I', 'L', 'T', 'F'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 1;

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace iltf

inline void write_tensor(std::ostream& os, const TensorValue& t) {
  os.write(iltf::kMagic, 4);
  iltf::put_u32(os, iltf::kVersion);
  os.put(static_cast<char>(iltf::kDtypeF32));
  os.put(static_cast<char>(t.rank()));
  for (int64_t d : t.shape) iltf::put_u32(os, static_cast<uint32_t>(d));
  for (float v : t.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    iltf::put_u32(os, bits);
  }
}

inline void write_tensor(const std::filesystem::path& path, const TensorValue& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error("cannot open for write: " + path.string());
  write_tensor(os, t);
  if (!os) throw format_error("short write: " + path.string());
}

inline TensorValue read_tensor(std::istream& is, const std::string& name) {
  auto fail = [&](const std::string& what) {
    throw format_error(name + ": " + what + " at offset " + std::to_string(is.tellg()));
  };
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, iltf::kMagic, 4) != 0) fail("bad magic");
  uint32_t version = iltf::get_u32(is);
  if (!is || version != iltf::kVersion) fail("unsupported version " + std::to_string(version));
  int dtype = is.get();
  if (dtype != iltf::kDtypeF32) fail("unsupported dtype " + std::to_string(dtype));
  int rank = is.get();
  if (rank < 0 || rank > 8) fail("bad rank");
  std::vector<int64_t> shape(static_cast<size_t>(rank));
  for (auto& d : shape) {
    d = iltf::get_u32(is);
    if (!is) fail("truncated header");
  }
  TensorValue t(shape);
  for (auto& v : t.data) {
    uint32_t bits = iltf::get_u32(is);
    if (!is) fail("truncated payload");
    std::memcpy(&v, &bits, 4);
  }
  return t;
}

inline TensorValue read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open: " + path.string());
  return read_tensor(is, path.string());
}

}  // namespace ganinc

#pragma once

// Binary file formats. All integers little-endian.
//   DLRW: magic "DLRW", u32 version=1, u32 tensor count; per tensor a u16
//         name length, UTF-8 name, u8 ndim, ndim u32 extents, f32 data.
//   FEAT: magic "FEAT", u32 version=1, u32 rows, u32 cols, row-major f32.
//   PGM:  binary 8-bit P5 heatmaps, min-max scaled per image.
// Round-trips are bit-exact.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dlr/tensor.hpp"

namespace dlr {

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 4);
}
inline void put_f32(std::ostream& os, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}
inline uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}
inline float get_f32(std::istream& is) {
  const uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_dlrw(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dlrw: cannot create file: " + path);
  os.write("DLRW", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw std::runtime_error("dlrw: tensor name too long");
    detail::put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.ndim()));
    for (int e : t.shape) detail::put_u32(os, static_cast<uint32_t>(e));
    for (float v : t.data) detail::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("dlrw: write failed: " + path);
}

inline NamedTensors load_dlrw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dlrw: cannot open file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DLRW", 4) != 0)
    throw std::runtime_error("dlrw: bad magic in " + path);
  const uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw std::runtime_error("dlrw: unsupported version " + std::to_string(version) + " in " +
                             path);
  const uint32_t count = detail::get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = detail::get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const int ndim = is.get();
    if (!is || ndim <= 0 || ndim > 8) throw std::runtime_error("dlrw: truncated file: " + path);
    std::vector<int> shape(static_cast<size_t>(ndim));
    for (int d = 0; d < ndim; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(detail::get_u32(is));
    Tensor t(shape);
    for (auto& v : t.data) v = detail::get_f32(is);
    if (!is) throw std::runtime_error("dlrw: truncated file: " + path);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline const Tensor* find_tensor(const NamedTensors& ts, const std::string& name) {
  for (const auto& [n, t] : ts)
    if (n == name) return &t;
  return nullptr;
}

inline const Tensor& require_tensor(const NamedTensors& ts, const std::string& name,
                                    const std::string& path) {
  const Tensor* t = find_tensor(ts, name);
  if (!t) throw std::runtime_error("dlrw: missing tensor '" + name + "' in " + path);
  return *t;
}

// ---- FEAT ----

inline void save_feat(const std::string& path, const Tensor& m) {
  if (m.ndim() != 2) throw std::runtime_error("feat: only 2-D matrices are stored");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("feat: cannot create file: " + path);
  os.write("FEAT", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<uint32_t>(m.dim(0)));
  detail::put_u32(os, static_cast<uint32_t>(m.dim(1)));
  for (float v : m.data) detail::put_f32(os, v);
  if (!os) throw std::runtime_error("feat: write failed: " + path);
}

inline Tensor load_feat(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("feat: cannot open file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FEAT", 4) != 0)
    throw std::runtime_error("feat: bad magic in " + path);
  const uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw std::runtime_error("feat: unsupported version " + std::to_string(version));
  const uint32_t rows = detail::get_u32(is);
  const uint32_t cols = detail::get_u32(is);
  Tensor t({static_cast<int>(rows), static_cast<int>(cols)});
  for (auto& v : t.data) v = detail::get_f32(is);
  if (!is) throw std::runtime_error("feat: truncated file: " + path);
  return t;
}

// row-major CSV, '.' decimal, one matrix row per line
inline void save_csv(const std::string& path, const Tensor& m) {
  if (m.ndim() != 2) throw std::runtime_error("csv: only 2-D matrices are stored");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("csv: cannot create file: " + path);
  char buf[64];
  for (int r = 0; r < m.dim(0); ++r) {
    for (int c = 0; c < m.dim(1); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m.at(r, c)));
      if (c) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("csv: write failed: " + path);
}

// ---- PGM ----

// 8-bit binary PGM heatmap, rows = matrix rows, min-max scaled per image.
// A constant matrix maps to uniform mid-gray.
inline void save_pgm(const std::string& path, const Tensor& m) {
  if (m.ndim() != 2) throw std::runtime_error("pgm: only 2-D matrices are rendered");
  float lo = m.data[0], hi = m.data[0];
  for (float v : m.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot create file: " + path);
  os << "P5\n" << m.dim(1) << " " << m.dim(0) << "\n255\n";
  const float range = hi - lo;
  for (float v : m.data) {
    int gray = range > 0.0f ? static_cast<int>(std::lround((v - lo) / range * 255.0f)) : 128;
    os.put(static_cast<char>(std::clamp(gray, 0, 255)));
  }
  if (!os) throw std::runtime_error("pgm: write failed: " + path);
}

struct PgmImage {
  int width = 0, height = 0;
  std::vector<unsigned char> pixels;
};

inline PgmImage load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("pgm: cannot open file: " + path);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  if (magic != "P5" || maxv != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("pgm: unsupported header in " + path);
  is.get();  // single whitespace after header
  PgmImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw std::runtime_error("pgm: truncated file: " + path);
  return img;
}

}  // namespace dlr

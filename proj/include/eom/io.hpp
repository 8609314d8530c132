#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eom/grid.hpp"

namespace eom {

constexpr uint16_t kGridFormatVersion = 1;
constexpr uint8_t kGridDtypeU8 = 0;
constexpr uint8_t kGridDtypeF32 = 1;

namespace detail {

inline void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Writes a file through a temp sibling so readers never see partial content.
inline void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace detail {

inline std::string grid_header(uint8_t dtype, int h, int w) {
  std::string buf;
  buf.reserve(13);
  buf += "EOMG";
  put_u16(buf, kGridFormatVersion);
  buf.push_back(static_cast<char>(dtype));
  put_u32(buf, static_cast<uint32_t>(h));
  put_u32(buf, static_cast<uint32_t>(w));
  return buf;
}

// Returns payload offset after validating magic/version/dtype/size.
inline size_t check_grid_header(const std::string& bytes, uint8_t expect_dtype, int& h, int& w,
                                size_t elem_size, const std::string& path) {
  if (bytes.size() < 15) throw std::runtime_error("truncated grid file: " + path);
  if (bytes.compare(0, 4, "EOMG") != 0) throw std::runtime_error("bad magic in grid file: " + path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  uint16_t version = get_u16(p + 4);
  if (version != kGridFormatVersion)
    throw std::runtime_error("unsupported grid version " + std::to_string(version) + ": " + path);
  uint8_t dtype = p[6];
  if (dtype != expect_dtype) throw std::runtime_error("grid dtype mismatch: " + path);
  h = static_cast<int>(get_u32(p + 7));
  w = static_cast<int>(get_u32(p + 11));
  if (bytes.size() != 15 + static_cast<size_t>(h) * w * elem_size)
    throw std::runtime_error("truncated grid file: " + path);
  return 15;
}

}  // namespace detail

inline void write_grid(const Grid<float>& g, const std::string& path) {
  std::string buf = detail::grid_header(kGridDtypeF32, g.h, g.w);
  buf.reserve(buf.size() + g.v.size() * 4);
  for (float f : g.v) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(buf, bits);
  }
  atomic_write_file(path, buf);
}

inline void write_grid(const Grid<uint8_t>& g, const std::string& path) {
  std::string buf = detail::grid_header(kGridDtypeU8, g.h, g.w);
  buf.append(reinterpret_cast<const char*>(g.v.data()), g.v.size());
  atomic_write_file(path, buf);
}

inline Grid<float> read_grid_f32(const std::string& path) {
  std::string bytes = read_file(path);
  int h = 0, w = 0;
  size_t off = detail::check_grid_header(bytes, kGridDtypeF32, h, w, 4, path);
  Grid<float> g(h, w);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
  for (size_t i = 0; i < g.v.size(); ++i) {
    uint32_t bits = detail::get_u32(p + 4 * i);
    std::memcpy(&g.v[i], &bits, 4);
  }
  return g;
}

inline Grid<uint8_t> read_grid_u8(const std::string& path) {
  std::string bytes = read_file(path);
  int h = 0, w = 0;
  size_t off = detail::check_grid_header(bytes, kGridDtypeU8, h, w, 1, path);
  Grid<uint8_t> g(h, w);
  std::memcpy(g.v.data(), bytes.data() + off, g.v.size());
  return g;
}

// --- visualization exports ---

inline void write_pgm(const Grid<uint8_t>& g, const std::string& path) {
  std::string buf = "P5\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(g.v.data()), g.v.size());
  atomic_write_file(path, buf);
}

// Darker pixels are occupied earlier; value T (never occupied) renders white.
inline void write_eom_pgm(const Grid<float>& eom, int horizon_steps, const std::string& path) {
  Grid<uint8_t> img(eom.h, eom.w);
  for (size_t i = 0; i < eom.v.size(); ++i) {
    double x = 1.0 - eom.v[i] / static_cast<double>(horizon_steps);
    x = std::min(1.0, std::max(0.0, x));
    img.v[i] = static_cast<uint8_t>(std::lround(255.0 * x));
  }
  write_pgm(img, path);
}

inline void write_mask_pgm(const Grid<uint8_t>& mask, const std::string& path) {
  Grid<uint8_t> img(mask.h, mask.w);
  for (size_t i = 0; i < mask.v.size(); ++i) img.v[i] = mask.v[i] ? 255 : 0;
  write_pgm(img, path);
}

inline void write_ppm(int h, int w, const std::vector<uint8_t>& rgb, const std::string& path) {
  std::string buf = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  atomic_write_file(path, buf);
}

}  // namespace eom

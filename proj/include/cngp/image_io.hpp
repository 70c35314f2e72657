#pragma once

// RGB float images, 8-bit PNG read/write (libpng) and the float depth raster.

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "cngp/common.hpp"

namespace cngp {

// Interleaved RGB, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float* at(int row, int col) { return &rgb[(static_cast<std::size_t>(row) * width + col) * 3]; }
  const float* at(int row, int col) const { return &rgb[(static_cast<std::size_t>(row) * width + col) * 3]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel float raster.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

// Rounds every channel to the nearest 8-bit level, so that a PNG round trip is
// lossless afterwards.
inline void quantize_8bit(Image& img) {
  for (float& v : img.rgb) v = from_byte(to_byte(v));
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

namespace detail {

// The setjmp frames below hold no objects with destructors.
inline bool png_write_body(png_structp png, png_infop info, std::FILE* fp, const Image& img, std::uint8_t* row) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t n = static_cast<std::size_t>(img.width) * 3;
  for (int r = 0; r < img.height; ++r) {
    const float* src = img.at(r, 0);
    for (std::size_t i = 0; i < n; ++i) row[i] = to_byte(src[i]);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  return true;
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("write_png: empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("write_png: cannot open " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng init failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  const bool ok = detail::png_write_body(png, info, fp.get(), img, row.data());
  png_destroy_write_struct(&png, &info);
  if (!ok) throw Error("write_png: libpng error writing " + path.string());
}

namespace detail {

// setjmp frames: no objects with destructors live in these functions.
inline bool png_read_header(png_structp png, png_infop info, std::FILE* fp, int* width, int* height) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  *width = static_cast<int>(png_get_image_width(png, info));
  *height = static_cast<int>(png_get_image_height(png, info));
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (!(color_type & PNG_COLOR_MASK_ALPHA) && !png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
  }
  png_read_update_info(png, info);
  return png_get_channels(png, info) == 4;
}

inline bool png_read_rgba(png_structp png, std::uint8_t* rgba, int width, int height) {
  if (setjmp(png_jmpbuf(png))) return false;
  for (int r = 0; r < height; ++r) png_read_row(png, rgba + static_cast<std::size_t>(r) * width * 4, nullptr);
  return true;
}

}  // namespace detail

// Reads an 8-bit PNG. RGBA pixels are composited over `background`; gray and
// palette images are expanded to RGB.
inline Image read_png(const std::filesystem::path& path, const std::array<float, 3>& background = {1, 1, 1}) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("read_png: cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, 8, fp.get()) != 8 || png_sig_cmp(sig.data(), 0, 8) != 0) {
    throw FormatError("read_png: not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng init failed");
  }
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgba;
  bool ok = detail::png_read_header(png, info, fp.get(), &width, &height);
  if (ok) {
    rgba.resize(static_cast<std::size_t>(width) * height * 4);
    ok = detail::png_read_rgba(png, rgba.data(), width, height);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw FormatError("read_png: corrupt PNG " + path.string());

  Image img(width, height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const std::uint8_t* px = &rgba[i * 4];
    float* dst = &img.rgb[i * 3];
    if (px[3] == 255) {
      for (int k = 0; k < 3; ++k) dst[k] = from_byte(px[k]);
    } else {
      const float a = from_byte(px[3]);
      for (int k = 0; k < 3; ++k) dst[k] = from_byte(px[k]) * a + background[k] * (1.0f - a);
    }
  }
  return img;
}

// Depth raster: 16-byte header {"CDEP", u32 width, u32 height, u32 version}
// followed by width*height little-endian float32 values.
inline constexpr std::uint32_t kDepthRasterVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_depth: cannot open " + path.string());
  os.write("CDEP", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(depth.width));
  detail::put_u32(os, static_cast<std::uint32_t>(depth.height));
  detail::put_u32(os, kDepthRasterVersion);
  for (float v : depth.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(os, bits);
  }
}

inline DepthMap read_depth(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_depth: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CDEP", 4) != 0) throw FormatError("read_depth: bad header");
  DepthMap d;
  d.width = static_cast<int>(detail::get_u32(&bytes[4]));
  d.height = static_cast<int>(detail::get_u32(&bytes[8]));
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  if (bytes.size() != 16 + 4 * n) throw FormatError("read_depth: truncated raster");
  d.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = detail::get_u32(&bytes[16 + 4 * i]);
    std::memcpy(&d.values[i], &bits, 4);
  }
  return d;
}

}  // namespace cngp

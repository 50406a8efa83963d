#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace aggfov {

/// Netpbm parsing failure; remembers how far into the file the problem was
/// found so truncation and bad headers are easy to locate.
struct parse_error : std::runtime_error {
  size_t byte_offset;
  parse_error(const std::string& what, size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

/// Single-channel image, row-major, values in [0,1].
struct PlaneImage {
  int64_t h = 0, w = 0;
  std::vector<float> v;  // h*w
};

/// Three-channel image, channel-major (c,h,w), values in [0,1].
struct ColorImage {
  int64_t h = 0, w = 0;
  std::vector<float> v;  // 3*h*w
};

/// Binary PGM (magic P5), 8-bit or big-endian 16-bit; values scaled by the
/// header maxval into [0,1].
PlaneImage load_pgm(const std::filesystem::path& path);

/// Binary PPM (magic P6), 8-bit or big-endian 16-bit per channel.
ColorImage load_ppm(const std::filesystem::path& path);

/// Writers for the same formats; bits = 8 or 16 selects the sample width.
void save_pgm(const std::filesystem::path& path, const PlaneImage& img,
              int bits = 8);
void save_ppm(const std::filesystem::path& path, const ColorImage& img);

/// BT.601 RGB -> YUV with each chroma channel affine-rescaled into [0,1]
/// (U spans [-0.436, 0.436], V spans [-0.615, 0.615]); yuv_to_rgb applies
/// the exact inverse and clamps the result to [0,1].
std::array<float, 3> rgb_to_yuv(float r, float g, float b);
std::array<float, 3> yuv_to_rgb(float y, float u, float v);

ColorImage rgb_to_yuv(const ColorImage& rgb);
ColorImage yuv_to_rgb(const ColorImage& yuv);

/// Per-image min-max rescale of a depth plane to [0,1]; a constant plane
/// maps to all 0.5 (the midpoint) rather than dividing by zero.
void normalize_depth(PlaneImage& img);

}  // namespace aggfov

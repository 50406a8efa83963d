#include "aggfov/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>

namespace aggfov {

namespace {

struct Reader {
  std::vector<char> bytes;
  size_t pos = 0;

  explicit Reader(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
      throw parse_error("cannot open " + path.string(), 0);
    bytes.assign(std::istreambuf_iterator<char>(f),
                 std::istreambuf_iterator<char>());
  }

  // skips whitespace and '#' comment lines between header tokens
  void skip_separators() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  int64_t header_int(const char* what) {
    skip_separators();
    const size_t start = pos;
    int64_t value = 0;
    while (pos < bytes.size() &&
           std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > std::numeric_limits<int32_t>::max())
        throw parse_error(std::string(what) + " out of range", start);
      ++pos;
    }
    if (pos == start)
      throw parse_error(std::string("expected ") + what, pos);
    return value;
  }
};

struct Header {
  int64_t w, h, maxval;
  size_t payload;  // byte offset of the first sample
};

Header parse_header(Reader& r, const char* magic) {
  if (r.bytes.size() < 2 || r.bytes[0] != magic[0] || r.bytes[1] != magic[1])
    throw parse_error(std::string("bad magic, expected ") + magic, 0);
  r.pos = 2;
  Header h{};
  h.w = r.header_int("width");
  h.h = r.header_int("height");
  r.skip_separators();
  const size_t maxval_at = r.pos;
  h.maxval = r.header_int("maxval");
  if (h.maxval != 255 && h.maxval != 65535)
    throw parse_error("unsupported maxval " + std::to_string(h.maxval) +
                          " (must be 255 or 65535)",
                      maxval_at);
  if (h.w <= 0 || h.h <= 0)
    throw parse_error("non-positive image dimensions", 2);
  // exactly one whitespace byte separates the header from the payload
  if (r.pos >= r.bytes.size() ||
      !std::isspace(static_cast<unsigned char>(r.bytes[r.pos])))
    throw parse_error("missing separator before payload", r.pos);
  h.payload = ++r.pos;
  return h;
}

// reads count samples scaled into [0,1]; 16-bit samples are big-endian
void read_samples(const Reader& r, const Header& h, int64_t count,
                  float* out) {
  const int bytes_per = h.maxval == 255 ? 1 : 2;
  const size_t need = h.payload + static_cast<size_t>(count) * bytes_per;
  if (r.bytes.size() < need)
    throw parse_error("truncated payload: need " + std::to_string(need) +
                          " bytes, file has " + std::to_string(r.bytes.size()),
                      r.bytes.size());
  const unsigned char* p =
      reinterpret_cast<const unsigned char*>(r.bytes.data()) + h.payload;
  const float scale = 1.0f / static_cast<float>(h.maxval);
  if (bytes_per == 1) {
    for (int64_t i = 0; i < count; ++i) out[i] = p[i] * scale;
  } else {
    for (int64_t i = 0; i < count; ++i)
      out[i] = static_cast<float>((p[2 * i] << 8) | p[2 * i + 1]) * scale;
  }
}

void write_file(const std::filesystem::path& path, const std::string& header,
                const std::vector<unsigned char>& payload) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::vector<unsigned char> quantize(const std::vector<float>& v, int bits) {
  const int64_t maxval = bits == 8 ? 255 : 65535;
  std::vector<unsigned char> out;
  out.reserve(v.size() * (bits / 8));
  for (float x : v) {
    const float c = std::clamp(x, 0.0f, 1.0f);
    const int64_t q =
        static_cast<int64_t>(c * static_cast<float>(maxval) + 0.5f);
    if (bits == 8) {
      out.push_back(static_cast<unsigned char>(q));
    } else {
      out.push_back(static_cast<unsigned char>(q >> 8));
      out.push_back(static_cast<unsigned char>(q & 0xff));
    }
  }
  return out;
}

}  // namespace

PlaneImage load_pgm(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = parse_header(r, "P5");
  PlaneImage img{h.h, h.w, std::vector<float>(static_cast<size_t>(h.h * h.w))};
  read_samples(r, h, h.h * h.w, img.v.data());
  return img;
}

ColorImage load_ppm(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = parse_header(r, "P6");
  const int64_t npix = h.h * h.w;
  std::vector<float> interleaved(static_cast<size_t>(3 * npix));
  read_samples(r, h, 3 * npix, interleaved.data());
  ColorImage img{h.h, h.w, std::vector<float>(static_cast<size_t>(3 * npix))};
  for (int64_t i = 0; i < npix; ++i)
    for (int64_t c = 0; c < 3; ++c)
      img.v[static_cast<size_t>(c * npix + i)] =
          interleaved[static_cast<size_t>(3 * i + c)];
  return img;
}

void save_pgm(const std::filesystem::path& path, const PlaneImage& img,
              int bits) {
  if (bits != 8 && bits != 16)
    throw std::invalid_argument("save_pgm: bits must be 8 or 16");
  const std::string header = "P5\n" + std::to_string(img.w) + " " +
                             std::to_string(img.h) + "\n" +
                             (bits == 8 ? "255" : "65535") + "\n";
  write_file(path, header, quantize(img.v, bits));
}

void save_ppm(const std::filesystem::path& path, const ColorImage& img) {
  const int64_t npix = img.h * img.w;
  std::vector<float> interleaved(static_cast<size_t>(3 * npix));
  for (int64_t i = 0; i < npix; ++i)
    for (int64_t c = 0; c < 3; ++c)
      interleaved[static_cast<size_t>(3 * i + c)] =
          img.v[static_cast<size_t>(c * npix + i)];
  const std::string header = "P6\n" + std::to_string(img.w) + " " +
                             std::to_string(img.h) + "\n255\n";
  write_file(path, header, quantize(interleaved, 8));
}

namespace {
constexpr float kUmax = 0.436f, kVmax = 0.615f;
constexpr float kWr = 0.299f, kWg = 0.587f, kWb = 0.114f;
constexpr float kUc = 0.492f, kVc = 0.877f;
}  // namespace

std::array<float, 3> rgb_to_yuv(float r, float g, float b) {
  const float y = kWr * r + kWg * g + kWb * b;
  const float u = kUc * (b - y);
  const float v = kVc * (r - y);
  return {y, (u + kUmax) / (2 * kUmax), (v + kVmax) / (2 * kVmax)};
}

std::array<float, 3> yuv_to_rgb(float y, float u01, float v01) {
  const float u = u01 * (2 * kUmax) - kUmax;
  const float v = v01 * (2 * kVmax) - kVmax;
  const float r = y + v / kVc;
  const float b = y + u / kUc;
  const float g = (y - kWr * r - kWb * b) / kWg;
  return {std::clamp(r, 0.0f, 1.0f), std::clamp(g, 0.0f, 1.0f),
          std::clamp(b, 0.0f, 1.0f)};
}

ColorImage rgb_to_yuv(const ColorImage& rgb) {
  const int64_t npix = rgb.h * rgb.w;
  ColorImage out{rgb.h, rgb.w, std::vector<float>(rgb.v.size())};
  for (int64_t i = 0; i < npix; ++i) {
    const auto yuv = rgb_to_yuv(rgb.v[i], rgb.v[npix + i], rgb.v[2 * npix + i]);
    out.v[i] = yuv[0];
    out.v[npix + i] = yuv[1];
    out.v[2 * npix + i] = yuv[2];
  }
  return out;
}

ColorImage yuv_to_rgb(const ColorImage& yuv) {
  const int64_t npix = yuv.h * yuv.w;
  ColorImage out{yuv.h, yuv.w, std::vector<float>(yuv.v.size())};
  for (int64_t i = 0; i < npix; ++i) {
    const auto rgb = yuv_to_rgb(yuv.v[i], yuv.v[npix + i], yuv.v[2 * npix + i]);
    out.v[i] = rgb[0];
    out.v[npix + i] = rgb[1];
    out.v[2 * npix + i] = rgb[2];
  }
  return out;
}

void normalize_depth(PlaneImage& img) {
  if (img.v.empty()) return;
  const auto [mn, mx] = std::minmax_element(img.v.begin(), img.v.end());
  const float lo = *mn, hi = *mx;
  if (hi - lo <= 0.0f) {
    std::fill(img.v.begin(), img.v.end(), 0.5f);
    return;
  }
  const float inv = 1.0f / (hi - lo);
  for (float& x : img.v) x = (x - lo) * inv;
}

}  // namespace aggfov

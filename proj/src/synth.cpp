#include "aggfov/synth.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include "aggfov/common.hpp"

namespace aggfov {

int depth_bucket(float depth) {
  return std::clamp(static_cast<int>(depth * 10.0f), 0, 9);
}

std::array<float, 3> synth_color(int bucket, int neighbor_bucket) {
  // channel 0 encodes the region's own depth, channel 1 the neighbor's, so
  // distinct (bucket, neighbor) pairs always differ in at least one channel
  return {0.06f + 0.09f * static_cast<float>(bucket),
          0.06f + 0.09f * static_cast<float>(neighbor_bucket),
          0.90f - 0.08f * static_cast<float>((bucket + neighbor_bucket) % 10)};
}

namespace {

struct Scene {
  PlaneImage depth;
  ColorImage rgb;
};

Scene make_scene(uint64_t seed, uint64_t index, int64_t h, int64_t w) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  Scene s;
  s.depth = {h, w, std::vector<float>(static_cast<size_t>(h * w))};
  s.rgb = {h, w, std::vector<float>(static_cast<size_t>(3 * h * w))};

  // background: a ramp spanning exactly [0.02, 0.98] so that per-image
  // min-max depth normalization is the same affine map for every scene
  const int dir = static_cast<int>(rng() % 4);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double t = 0;
      switch (dir) {
        case 0: t = static_cast<double>(x) / (w - 1); break;
        case 1: t = static_cast<double>(y) / (h - 1); break;
        case 2: t = static_cast<double>(x + y) / (w + h - 2); break;
        default: t = static_cast<double>(x + (h - 1 - y)) / (w + h - 2); break;
      }
      s.depth.v[y * w + x] = static_cast<float>(0.02 + 0.96 * t);
    }

  // rectangles at distinct depth buckets, inset one pixel so the background
  // frame (and with it the ramp extremes) always survives
  const int nrect = 3 + static_cast<int>(rng() % 6);
  std::vector<int> buckets(10);
  for (int i = 0; i < 10; ++i) buckets[i] = i;
  std::shuffle(buckets.begin(), buckets.end(), rng);

  std::vector<int> region(static_cast<size_t>(h * w), 0);  // 0 = background
  std::vector<int> rect_bucket(static_cast<size_t>(nrect) + 1, 0);
  for (int r = 1; r <= nrect; ++r) {
    const int64_t max_rh = std::max<int64_t>(8, h / 2);
    const int64_t max_rw = std::max<int64_t>(8, w / 2);
    const int64_t rh = 8 + static_cast<int64_t>(rng() % (max_rh - 7));
    const int64_t rw = 8 + static_cast<int64_t>(rng() % (max_rw - 7));
    const int64_t y0 = 1 + static_cast<int64_t>(rng() % (h - rh - 1));
    const int64_t x0 = 1 + static_cast<int64_t>(rng() % (w - rw - 1));
    rect_bucket[r] = buckets[(r - 1) % 10];
    const float d = 0.05f + 0.1f * static_cast<float>(rect_bucket[r]);
    for (int64_t y = y0; y < y0 + rh; ++y)
      for (int64_t x = x0; x < x0 + rw; ++x) {
        s.depth.v[y * w + x] = d;
        region[y * w + x] = r;
      }
  }

  // dominant neighbor bucket of each visible rectangle: the most frequent
  // depth bucket just outside its boundary
  std::vector<std::array<int, 10>> counts(static_cast<size_t>(nrect) + 1,
                                          std::array<int, 10>{});
  const int64_t dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int r = region[y * w + x];
      if (r == 0) continue;
      for (int k = 0; k < 4; ++k) {
        const int64_t ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (region[ny * w + nx] != r)
          ++counts[r][depth_bucket(s.depth.v[ny * w + nx])];
      }
    }
  std::vector<int> neighbor(static_cast<size_t>(nrect) + 1, 0);
  for (int r = 1; r <= nrect; ++r) {
    int best = rect_bucket[r], best_count = 0;
    for (int b = 0; b < 10; ++b)
      if (counts[r][b] > best_count) best = b, best_count = counts[r][b];
    neighbor[r] = best;
  }

  const int64_t npix = h * w;
  for (int64_t i = 0; i < npix; ++i) {
    const int r = region[i];
    const int b = r == 0 ? depth_bucket(s.depth.v[i]) : rect_bucket[r];
    const int nb = r == 0 ? b : neighbor[r];
    const auto c = synth_color(b, nb);
    s.rgb.v[i] = c[0];
    s.rgb.v[npix + i] = c[1];
    s.rgb.v[2 * npix + i] = c[2];
  }
  return s;
}

}  // namespace

DatasetManifest synth_generate(uint64_t seed, int count, int64_t h, int64_t w,
                               const std::filesystem::path& out_dir) {
  if (count <= 0) throw config_error("synth: count must be positive");
  if (h % 16 != 0 || w % 16 != 0)
    throw config_error("synth: dimensions " + std::to_string(h) + "x" +
                       std::to_string(w) + " must be divisible by 16");
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.root = out_dir;
  for (int i = 0; i < count; ++i) {
    Scene s = make_scene(seed, static_cast<uint64_t>(i), h, w);
    char dname[32], cname[32];
    std::snprintf(dname, sizeof dname, "depth_%04d.pgm", i);
    std::snprintf(cname, sizeof cname, "rgb_%04d.ppm", i);
    save_pgm(out_dir / dname, s.depth, /*bits=*/16);
    save_ppm(out_dir / cname, s.rgb);
    m.entries.push_back({dname, cname});
  }
  save_manifest(out_dir / "manifest.txt", m.entries,
                "synthetic dataset seed=" + std::to_string(seed) +
                    " count=" + std::to_string(count) + " " +
                    std::to_string(h) + "x" + std::to_string(w));
  return m;
}

}  // namespace aggfov

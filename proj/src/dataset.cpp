#include "aggfov/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace aggfov {

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const size_t tab = line.find('\t', first);
    if (tab == std::string::npos || tab + 1 >= line.size())
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": expected <depth><TAB><rgb>");
    ManifestEntry e{line.substr(first, tab - first), line.substr(tab + 1)};
    if (!seen.insert(e.depth).second)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": duplicate id " + e.depth);
    for (const std::string& rel : {e.depth, e.rgb})
      if (!std::filesystem::exists(m.root / rel))
        throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                 ": missing file " + (m.root / rel).string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries,
                   const std::string& comment) {
  std::ofstream f(path);
  if (!f)
    throw std::runtime_error("cannot write manifest " + path.string());
  if (!comment.empty()) f << "# " << comment << "\n";
  for (const ManifestEntry& e : entries) f << e.depth << "\t" << e.rgb << "\n";
  if (!f)
    throw std::runtime_error("write failed for manifest " + path.string());
}

ImagePair load_pair(const std::filesystem::path& root,
                    const ManifestEntry& entry) {
  ImagePair p;
  p.id = entry.depth;
  p.depth_path = root / entry.depth;
  p.rgb_path = root / entry.rgb;
  PlaneImage d = load_pgm(p.depth_path);
  ColorImage rgb = load_ppm(p.rgb_path);
  if (d.h != rgb.h || d.w != rgb.w)
    throw std::runtime_error("pair " + p.id + ": depth is " +
                             std::to_string(d.h) + "x" + std::to_string(d.w) +
                             " but rgb is " + std::to_string(rgb.h) + "x" +
                             std::to_string(rgb.w));
  if (d.h % 16 != 0 || d.w % 16 != 0)
    throw std::runtime_error("pair " + p.id + ": dimensions " +
                             std::to_string(d.h) + "x" + std::to_string(d.w) +
                             " are not divisible by 16");
  normalize_depth(d);
  ColorImage yuv = rgb_to_yuv(rgb);
  p.h = d.h;
  p.w = d.w;
  p.depth = std::move(d.v);
  p.yuv = std::move(yuv.v);
  return p;
}

std::vector<ImagePair> load_pairs(const DatasetManifest& manifest) {
  std::vector<ImagePair> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries)
    out.push_back(load_pair(manifest.root, e));
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(
    const DatasetManifest& manifest, double ratio, uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("split ratio must be in [0,1]");
  std::vector<size_t> idx(manifest.entries.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const size_t ntrain = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(idx.size())));
  DatasetManifest train{manifest.root, {}}, test{manifest.root, {}};
  for (size_t i = 0; i < idx.size(); ++i)
    (i < ntrain ? train : test).entries.push_back(manifest.entries[idx[i]]);
  return {std::move(train), std::move(test)};
}

std::pair<Tensor<float>, Tensor<float>> make_batch(
    const std::vector<ImagePair>& pairs, const std::vector<int64_t>& indices) {
  if (indices.empty())
    throw std::invalid_argument("make_batch: empty index list");
  for (int64_t i : indices)
    if (i < 0 || i >= static_cast<int64_t>(pairs.size()))
      throw std::out_of_range("make_batch: index " + std::to_string(i) +
                              " out of range for " +
                              std::to_string(pairs.size()) + " pairs");
  const int64_t h = pairs[indices[0]].h, w = pairs[indices[0]].w;
  const int64_t n = static_cast<int64_t>(indices.size());
  std::vector<float> depth(static_cast<size_t>(n * h * w));
  std::vector<float> target(static_cast<size_t>(n * 3 * h * w));
  for (int64_t b = 0; b < n; ++b) {
    const ImagePair& p = pairs[indices[b]];
    if (p.h != h || p.w != w)
      throw shape_error("make_batch: pair " + p.id + " is " +
                        std::to_string(p.h) + "x" + std::to_string(p.w) +
                        ", batch is " + std::to_string(h) + "x" +
                        std::to_string(w));
    std::copy(p.depth.begin(), p.depth.end(), depth.begin() + b * h * w);
    std::copy(p.yuv.begin(), p.yuv.end(), target.begin() + b * 3 * h * w);
  }
  return {Tensor<float>::from_data({n, 1, h, w}, std::move(depth)),
          Tensor<float>::from_data({n, 3, h, w}, std::move(target))};
}

}  // namespace aggfov

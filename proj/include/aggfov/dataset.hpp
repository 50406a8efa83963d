#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aggfov/image.hpp"
#include "aggfov/tensor.hpp"

namespace aggfov {

/// One manifest line: paths of a depth/RGB pair, relative to the manifest
/// root. The depth path doubles as the pair id.
struct ManifestEntry {
  std::string depth;
  std::string rgb;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

/// Fully ingested training pair: per-image min-max-normalized depth plane
/// and the BT.601 YUV target, both in [0,1].
struct ImagePair {
  std::string id;
  int64_t h = 0, w = 0;
  std::vector<float> depth;  // h*w
  std::vector<float> yuv;    // 3*h*w, channel-major
  std::filesystem::path depth_path, rgb_path;
};

/// Parses a manifest file: one `depth<TAB>rgb` relative path pair per line,
/// `#` comments and blank lines allowed. Validates that ids are unique and
/// every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries,
                   const std::string& comment = "");

/// Loads one pair through the full pipeline (PGM + min-max depth scaling,
/// PPM + RGB->YUV); checks matching dimensions divisible by 16.
ImagePair load_pair(const std::filesystem::path& root,
                    const ManifestEntry& entry);

std::vector<ImagePair> load_pairs(const DatasetManifest& manifest);

/// Seeded shuffle then partition: the first round(ratio*n) shuffled entries
/// become the train manifest, the rest the test manifest.
std::pair<DatasetManifest, DatasetManifest> split_manifest(
    const DatasetManifest& manifest, double ratio, uint64_t seed);

/// Stacks the selected pairs into (depth [N,1,H,W], target [N,3,H,W]).
std::pair<Tensor<float>, Tensor<float>> make_batch(
    const std::vector<ImagePair>& pairs, const std::vector<int64_t>& indices);

}  // namespace aggfov

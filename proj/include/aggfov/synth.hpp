#pragma once

#include <cstdint>
#include <filesystem>

#include "aggfov/dataset.hpp"

namespace aggfov {

/// Depth values quantize into ten buckets; every painted region's color is
/// a deterministic function of its own bucket and its dominant neighbor's
/// bucket, so the depth->RGB mapping is learnable but needs spatial context.
int depth_bucket(float depth);

/// The generator's color rule. Distinct (bucket, neighbor) pairs always map
/// to distinct colors.
std::array<float, 3> synth_color(int bucket, int neighbor_bucket);

/// Writes `count` synthetic depth/RGB scenes (16-bit PGM + 8-bit PPM) plus
/// a manifest into out_dir. Each scene is a full-range background ramp with
/// 3-8 axis-aligned rectangles at distinct depths, colored by synth_color.
/// Byte-identical output for identical arguments.
DatasetManifest synth_generate(uint64_t seed, int count, int64_t h, int64_t w,
                               const std::filesystem::path& out_dir);

}  // namespace aggfov

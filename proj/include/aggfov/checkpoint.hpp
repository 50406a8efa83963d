#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aggfov/adam.hpp"
#include "aggfov/network.hpp"
#include "aggfov/tensor.hpp"

namespace aggfov {

/// Binary checkpoint: magic "AGFV", format version, step counter, then every
/// named tensor (parameters and normalization buffers) as little-endian f32,
/// optionally followed by the Adam moments. Round trips are bit-exact.
/// Loading validates names and shapes against the receiving network and
/// throws checkpoint_error on any mismatch, bad magic/version, or truncation.
void save_checkpoint(
    const std::filesystem::path& path,
    std::vector<std::pair<std::string, Tensor<float>>> params,
    const std::vector<std::pair<std::string, std::vector<float>*>>& buffers,
    int64_t step, const Adam<float>* opt = nullptr);

/// Returns the stored step counter. If `opt` is non-null the checkpoint must
/// contain optimizer state; if it is null any stored state is skipped.
int64_t load_checkpoint(
    const std::filesystem::path& path,
    std::vector<std::pair<std::string, Tensor<float>>> params,
    const std::vector<std::pair<std::string, std::vector<float>*>>& buffers,
    Adam<float>* opt = nullptr);

inline void save_checkpoint(const std::filesystem::path& path,
                            HallucinationNet<float>& net, int64_t step,
                            const Adam<float>* opt = nullptr) {
  save_checkpoint(path, net.params(), net.buffers(), step, opt);
}

inline int64_t load_checkpoint(const std::filesystem::path& path,
                               HallucinationNet<float>& net,
                               Adam<float>* opt = nullptr) {
  return load_checkpoint(path, net.params(), net.buffers(), opt);
}

}  // namespace aggfov

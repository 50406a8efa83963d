#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aggfov/adam.hpp"
#include "aggfov/dataset.hpp"
#include "aggfov/network.hpp"

namespace aggfov {

/// Raised when a training step produces a non-finite loss; names the step
/// and the sample ids that were in the offending shard.
struct train_abort_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int workers = 1;
  int batch_per_worker = 8;
  int64_t steps = 500;
  uint64_t seed = 0;
  float lambda = 50.0f;
  float delta = 0.001f;
  /// When non-empty, one `step,loss` line is appended per step.
  std::filesystem::path loss_csv;
  /// Step counter offset when resuming from a checkpoint.
  int64_t start_step = 0;

  void validate() const;
};

struct StepRecord {
  int64_t step;  // 1-based global step number
  float loss;
};

/// Runs cfg.steps synchronous data-parallel steps: each worker computes the
/// loss gradient on its own shard of the global batch, gradients are
/// arithmetically averaged in worker order, and one Adam step updates the
/// master network. Batches are drawn from a seeded shuffle without
/// replacement, reshuffling each epoch. The sampled batch sequence depends
/// only on (seed, global batch size), never on the worker count.
std::vector<StepRecord> train(HallucinationNet<float>& net, Adam<float>& opt,
                              const std::vector<ImagePair>& pairs,
                              const TrainConfig& cfg);

struct EvalReport {
  double mapd = 0.0;  // mean over images, 0-255 RGB scale
  std::vector<std::pair<std::string, double>> per_image;
};

/// Mean absolute pixel difference between hallucinated and ground-truth RGB
/// on the 0-255 scale, using eval-mode normalization statistics.
EvalReport evaluate(HallucinationNet<float>& net,
                    const std::vector<ImagePair>& pairs);

}  // namespace aggfov

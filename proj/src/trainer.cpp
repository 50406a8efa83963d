#include "aggfov/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "aggfov/image.hpp"
#include "aggfov/loss.hpp"

namespace aggfov {

void TrainConfig::validate() const {
  if (workers < 1)
    throw config_error("workers must be >= 1, got " + std::to_string(workers));
  if (batch_per_worker < 1)
    throw config_error("batch-per-worker must be >= 1, got " +
                       std::to_string(batch_per_worker));
  if (steps < 0)
    throw config_error("steps must be >= 0, got " + std::to_string(steps));
  if (start_step < 0)
    throw config_error("start step must be >= 0, got " +
                       std::to_string(start_step));
  LossConfig<float>{lambda, delta}.validate();
}

namespace {

// Gradients are accumulated over fixed microbatches of this size (smaller
// only at an odd shard tail), always in global sample order. Because every
// worker count processes the same microbatch graphs and sums them in the
// same order, the optimizer trajectory is identical for any sharding of the
// same global batch, not merely equal up to rounding.
constexpr int kMicrobatch = 2;

// Must match the batch_norm default: the master replays worker batch
// statistics through the same momentum blend.
constexpr float kBnMomentum = 0.9f;

/// Seeded epoch shuffler: deals global batches without replacement and
/// reshuffles when fewer than one full batch remains.
struct BatchSampler {
  std::vector<int64_t> order;
  std::mt19937_64 rng;
  size_t cursor;

  BatchSampler(size_t n, uint64_t seed) : order(n), rng(seed), cursor(n) {
    std::iota(order.begin(), order.end(), int64_t(0));
  }

  std::vector<int64_t> draw(size_t count) {
    if (cursor + count > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<int64_t> out(
        order.begin() + static_cast<int64_t>(cursor),
        order.begin() + static_cast<int64_t>(cursor + count));
    cursor += count;
    return out;
  }
};

struct MicrobatchResult {
  std::vector<int64_t> samples;
  float loss = 0.0f;           // unscaled microbatch loss
  bool finite = true;
  std::vector<std::vector<float>> grads;    // per parameter, already weighted
  std::vector<std::vector<float>> bn_mean;  // per normalization layer
  std::vector<std::vector<float>> bn_var;
};

/// Runs every microbatch of one worker shard in order, capturing the
/// weighted gradients and batch statistics per microbatch. Gradients are
/// never accumulated in place across microbatches: summing the finished
/// per-microbatch gradients keeps the rounding identical for every worker
/// count.
void run_worker(HallucinationNet<float>& net,
                const std::vector<ImagePair>& pairs, const TrainConfig& cfg,
                int64_t global_batch,
                std::vector<MicrobatchResult*> micro) {
  auto params = net.params();
  auto bns = net.bn_states();
  const LossConfig<float> lc{cfg.lambda, cfg.delta};
  for (MicrobatchResult* m : micro) {
    auto [depth, target] = make_batch(pairs, m->samples);
    Tensor<float> hal = net.forward(depth, BnMode::train);
    Tensor<float> loss = total_loss(hal, target, lc);
    m->loss = loss.item();
    m->finite = std::isfinite(m->loss);
    if (!m->finite) return;  // master aborts; later microbatches moot
    const float weight = static_cast<float>(m->samples.size()) /
                         static_cast<float>(global_batch);
    scalar_mul(loss, weight).backward();
    m->grads.reserve(params.size());
    for (auto& [name, p] : params) {
      auto& g = p.node()->grad;
      m->grads.push_back(std::move(g));
      g.clear();  // re-zeroed by ensure_grad on the next backward
    }
    m->bn_mean.reserve(bns.size());
    m->bn_var.reserve(bns.size());
    for (auto& [name, s] : bns) {
      m->bn_mean.push_back(s->batch_mean);
      m->bn_var.push_back(s->batch_var);
    }
  }
}

std::string sample_ids(const std::vector<ImagePair>& pairs,
                       const std::vector<int64_t>& samples) {
  std::string s;
  for (size_t i = 0; i < samples.size(); ++i)
    s += (i ? ", " : "") + pairs[static_cast<size_t>(samples[i])].id;
  return s;
}

}  // namespace

std::vector<StepRecord> train(HallucinationNet<float>& net, Adam<float>& opt,
                              const std::vector<ImagePair>& pairs,
                              const TrainConfig& cfg) {
  cfg.validate();
  const size_t global = static_cast<size_t>(cfg.workers) *
                        static_cast<size_t>(cfg.batch_per_worker);
  if (pairs.empty()) throw config_error("training set is empty");
  if (global > pairs.size())
    throw config_error("global batch of " + std::to_string(global) +
                       " exceeds the " + std::to_string(pairs.size()) +
                       "-sample training set (sampling is without replacement)");

  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    const bool append =
        cfg.start_step > 0 && std::filesystem::exists(cfg.loss_csv);
    csv.open(cfg.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv)
      throw io_error("cannot write loss history " + cfg.loss_csv.string());
    if (!append) csv << "step,loss\n";
  }

  const int W = cfg.workers;
  std::vector<HallucinationNet<float>> replicas;
  if (W > 1)
    for (int w = 0; w < W; ++w) replicas.push_back(build_network<float>(0));

  BatchSampler sampler(pairs.size(), cfg.seed);
  std::vector<StepRecord> history;
  history.reserve(static_cast<size_t>(cfg.steps));
  auto mp = net.params();
  auto mbn = net.bn_states();

  for (int64_t s = 1; s <= cfg.steps; ++s) {
    const int64_t step = cfg.start_step + s;
    const std::vector<int64_t> batch = sampler.draw(global);

    // carve the global batch into per-worker shards of microbatches
    std::vector<MicrobatchResult> micro;
    std::vector<std::vector<MicrobatchResult*>> shard(static_cast<size_t>(W));
    micro.reserve(global / kMicrobatch + static_cast<size_t>(W));
    for (int w = 0; w < W; ++w)
      for (int64_t done = 0; done < cfg.batch_per_worker;) {
        const int64_t take =
            std::min<int64_t>(kMicrobatch, cfg.batch_per_worker - done);
        MicrobatchResult m;
        const int64_t base = int64_t(w) * cfg.batch_per_worker + done;
        m.samples.assign(batch.begin() + base, batch.begin() + base + take);
        micro.push_back(std::move(m));
        done += take;
      }
    size_t mi = 0;
    for (int w = 0; w < W; ++w)
      for (int64_t done = 0; done < cfg.batch_per_worker;
           done += kMicrobatch)
        shard[w].push_back(&micro[mi++]);

    if (W == 1) {
      run_worker(net, pairs, cfg, static_cast<int64_t>(global), shard[0]);
    } else {
      for (int w = 0; w < W; ++w) replicas[w].copy_state_from(net);
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(static_cast<size_t>(W));
      for (int w = 0; w < W; ++w)
        threads.emplace_back([&, w] {
          try {
            run_worker(replicas[w], pairs, cfg, static_cast<int64_t>(global),
                       shard[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& t : threads) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    float loss = 0.0f;
    for (const MicrobatchResult& m : micro) {
      if (!m.finite)
        throw train_abort_error(
            "non-finite loss " + std::to_string(m.loss) + " at step " +
            std::to_string(step) + " on samples [" +
            sample_ids(pairs, m.samples) + "]");
      loss += m.loss * (static_cast<float>(m.samples.size()) /
                        static_cast<float>(global));
    }

    // sum the weighted microbatch gradients in global order
    for (size_t i = 0; i < mp.size(); ++i) {
      auto g = mp[i].second.grad();
      std::fill(g.begin(), g.end(), 0.0f);
      for (const MicrobatchResult& m : micro) {
        const std::vector<float>& mg = m.grads[i];
        for (size_t j = 0; j < mg.size(); ++j) g[j] += mg[j];
      }
    }
    if (W > 1) {
      // replay the workers' normalization blends in global order; the
      // single-worker path already applied the identical blends in place
      for (const MicrobatchResult& m : micro)
        for (size_t b = 0; b < mbn.size(); ++b) {
          BatchNormState<float>& st = *mbn[b].second;
          for (size_t c = 0; c < st.running_mean.size(); ++c) {
            st.running_mean[c] = kBnMomentum * st.running_mean[c] +
                                 (1.0f - kBnMomentum) * m.bn_mean[b][c];
            st.running_var[c] = kBnMomentum * st.running_var[c] +
                                (1.0f - kBnMomentum) * m.bn_var[b][c];
          }
        }
    }
    opt.step(mp);

    history.push_back({step, loss});
    if (csv.is_open()) {
      csv << step << "," << std::setprecision(9) << loss << "\n";
      csv.flush();
    }
  }
  return history;
}

EvalReport evaluate(HallucinationNet<float>& net,
                    const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw config_error("evaluation set is empty");
  EvalReport report;
  NoGradGuard guard;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto [depth, target] = make_batch(pairs, {static_cast<int64_t>(i)});
    Tensor<float> hal = net.forward(depth, BnMode::eval);
    const int64_t hw = pairs[i].h * pairs[i].w;
    ColorImage pred{pairs[i].h, pairs[i].w,
                    std::vector<float>(hal.data().begin(), hal.data().end())};
    ColorImage gt{pairs[i].h, pairs[i].w,
                  std::vector<float>(target.data().begin(),
                                     target.data().end())};
    ColorImage pred_rgb = yuv_to_rgb(pred);
    ColorImage gt_rgb = yuv_to_rgb(gt);
    double sum = 0.0;
    for (int64_t j = 0; j < 3 * hw; ++j)
      sum += std::abs(pred_rgb.v[static_cast<size_t>(j)] -
                      gt_rgb.v[static_cast<size_t>(j)]);
    const double mapd = 255.0 * sum / static_cast<double>(3 * hw);
    report.per_image.emplace_back(pairs[i].id, mapd);
    report.mapd += mapd;
  }
  report.mapd /= static_cast<double>(report.per_image.size());
  return report;
}

}  // namespace aggfov

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aggfov/synth.hpp"
#include "aggfov/trainer.hpp"

using namespace aggfov;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("aggfov_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<ImagePair> tiny_dataset(const std::string& name, int count = 8,
                                    int64_t h = 32, int64_t w = 32) {
  fs::path dir = tmpdir(name);
  DatasetManifest m = synth_generate(3, count, h, w, dir);
  return load_pairs(m);
}

std::vector<float> snapshot(HallucinationNet<float>& net) {
  std::vector<float> v;
  for (auto& [name, p] : net.params())
    v.insert(v.end(), p.data().begin(), p.data().end());
  return v;
}

}  // namespace

TEST_CASE("zero steps leave the network untouched") {
  auto pairs = tiny_dataset("zero");
  HallucinationNet<float> net = build_network<float>(1);
  const std::vector<float> before = snapshot(net);
  Adam<float> opt;
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_per_worker = 4;
  auto history = train(net, opt, pairs, cfg);
  CHECK(history.empty());
  CHECK(snapshot(net) == before);
  CHECK(opt.t == 0);
}

TEST_CASE("training is deterministic and the loss goes down") {
  auto pairs = tiny_dataset("det");
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_per_worker = 4;
  cfg.seed = 5;

  HallucinationNet<float> net1 = build_network<float>(1);
  Adam<float> opt1;
  auto h1 = train(net1, opt1, pairs, cfg);
  REQUIRE(h1.size() == 20);
  CHECK(h1.front().step == 1);
  CHECK(h1.back().step == 20);
  CHECK(h1.back().loss < h1.front().loss);
  CHECK(opt1.t == 20);

  HallucinationNet<float> net2 = build_network<float>(1);
  Adam<float> opt2;
  auto h2 = train(net2, opt2, pairs, cfg);
  for (size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].loss == h2[i].loss);
  CHECK(snapshot(net1) == snapshot(net2));
}

TEST_CASE("1 worker and 4 workers follow the same trajectory") {
  auto pairs = tiny_dataset("workers");
  HallucinationNet<float> net1 = build_network<float>(1);
  HallucinationNet<float> net4 = build_network<float>(1);
  Adam<float> opt1, opt4;

  TrainConfig c1;
  c1.workers = 1;
  c1.batch_per_worker = 8;
  c1.steps = 10;
  c1.seed = 9;
  TrainConfig c4 = c1;
  c4.workers = 4;
  c4.batch_per_worker = 2;

  auto h1 = train(net1, opt1, pairs, c1);
  auto h4 = train(net4, opt4, pairs, c4);
  REQUIRE(h1.size() == h4.size());
  // fixed-size microbatches summed in global order make the sharding
  // bitwise irrelevant, which comfortably beats the 1e-6 requirement
  for (size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].loss == h4[i].loss);

  const std::vector<float> p1 = snapshot(net1);
  const std::vector<float> p4 = snapshot(net4);
  REQUIRE(p1.size() == p4.size());
  double worst = 0.0;
  for (size_t i = 0; i < p1.size(); ++i) {
    const double denom = std::max(1.0, std::abs(double(p1[i])));
    worst = std::max(worst, std::abs(double(p1[i]) - double(p4[i])) / denom);
  }
  CHECK(worst < 1e-6);
  CHECK(p1 == p4);

  // normalization running statistics merge identically too
  auto b1 = net1.buffers(), b4 = net4.buffers();
  for (size_t i = 0; i < b1.size(); ++i) CHECK(*b1[i].second == *b4[i].second);
}

TEST_CASE("loss history CSV holds one step,loss line per step") {
  auto pairs = tiny_dataset("csv", 4);
  fs::path dir = tmpdir("csv_out");
  HallucinationNet<float> net = build_network<float>(1);
  Adam<float> opt;
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_per_worker = 2;
  cfg.loss_csv = dir / "loss.csv";
  auto history = train(net, opt, pairs, cfg);

  std::ifstream f(cfg.loss_csv);
  REQUIRE(f.good());
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "step,loss");
  for (int i = 0; i < 3; ++i) {
    REQUIRE(std::getline(f, line));
    std::istringstream is(line);
    int64_t step;
    char comma;
    float loss;
    is >> step >> comma >> loss;
    CHECK(step == history[static_cast<size_t>(i)].step);
    CHECK(comma == ',');
    CHECK(loss == doctest::Approx(history[static_cast<size_t>(i)].loss));
  }
  CHECK(!std::getline(f, line));

  // resuming with start_step appends instead of truncating
  TrainConfig more = cfg;
  more.start_step = 3;
  more.steps = 2;
  auto h2 = train(net, opt, pairs, more);
  CHECK(h2.front().step == 4);
  std::ifstream f2(cfg.loss_csv);
  int lines = 0;
  while (std::getline(f2, line)) ++lines;
  CHECK(lines == 1 + 3 + 2);
}

TEST_CASE("a poisoned parameter aborts with step and sample ids") {
  auto pairs = tiny_dataset("nan", 4);
  HallucinationNet<float> net = build_network<float>(1);
  // poison the output layer: its NaN reaches the loss directly instead of
  // being absorbed by a downstream relu or normalization
  for (auto& [name, p] : net.params())
    if (name == "out.bias") p.data()[0] = std::nanf("");
  Adam<float> opt;
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_per_worker = 2;
  try {
    train(net, opt, pairs, cfg);
    FAIL("expected train_abort_error");
  } catch (const train_abort_error& e) {
    const std::string what = e.what();
    CHECK(what.find("step 1") != std::string::npos);
    CHECK(what.find("depth_") != std::string::npos);  // sample ids listed
  }
}

TEST_CASE("configuration and dataset validation") {
  auto pairs = tiny_dataset("cfg", 2);
  HallucinationNet<float> net = build_network<float>(1);
  Adam<float> opt;
  TrainConfig cfg;
  cfg.steps = 1;

  TrainConfig bad = cfg;
  bad.workers = 0;
  CHECK_THROWS_AS(train(net, opt, pairs, bad), config_error);
  bad = cfg;
  bad.batch_per_worker = 0;
  CHECK_THROWS_AS(train(net, opt, pairs, bad), config_error);
  bad = cfg;
  bad.delta = 0.0f;
  CHECK_THROWS_AS(train(net, opt, pairs, bad), config_error);
  bad = cfg;
  bad.lambda = -1.0f;
  CHECK_THROWS_AS(train(net, opt, pairs, bad), config_error);
  // global batch larger than the dataset cannot sample without replacement
  bad = cfg;
  bad.batch_per_worker = 3;
  CHECK_THROWS_AS(train(net, opt, pairs, bad), config_error);
  CHECK_THROWS_AS(train(net, opt, {}, cfg), config_error);
}

TEST_CASE("evaluate reports per-image MAPD on the 0-255 scale") {
  auto pairs = tiny_dataset("eval", 4);
  HallucinationNet<float> net = build_network<float>(1);
  EvalReport r = evaluate(net, pairs);
  REQUIRE(r.per_image.size() == 4);
  double mean = 0.0;
  for (auto& [id, mapd] : r.per_image) {
    CHECK(mapd >= 0.0);
    CHECK(mapd <= 255.0);
    CHECK(id.find("depth_") == 0);
    mean += mapd;
  }
  CHECK(r.mapd == doctest::Approx(mean / 4.0));
  CHECK_THROWS_AS(evaluate(net, {}), config_error);
}

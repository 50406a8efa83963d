#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "aggfov/checkpoint.hpp"

using namespace aggfov;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("aggfov_ckpt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// a miniature "network": two parameters and one buffer
struct TinyState {
  Tensor<float> w = Tensor<float>::zeros({2, 1, 3, 3});
  Tensor<float> b = Tensor<float>::zeros({1, 2, 1, 1});
  std::vector<float> running = {0.0f, 0.0f};

  explicit TinyState(uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto& x : w.data()) x = d(rng);
    for (auto& x : b.data()) x = d(rng);
    for (auto& x : running) x = d(rng);
  }

  std::vector<std::pair<std::string, Tensor<float>>> params() {
    return {{"b", b}, {"w", w}};
  }
  std::vector<std::pair<std::string, std::vector<float>*>> buffers() {
    return {{"running", &running}};
  }
};

}  // namespace

TEST_CASE("round trip restores parameters, buffers, and step bit-exactly") {
  fs::path dir = tmpdir("rt");
  TinyState a(1), b(2);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 123);
  const int64_t step = load_checkpoint(dir / "c.bin", b.params(), b.buffers());
  CHECK(step == 123);
  CHECK(std::memcmp(a.w.data().data(), b.w.data().data(),
                    4 * static_cast<size_t>(a.w.numel())) == 0);
  CHECK(std::memcmp(a.b.data().data(), b.b.data().data(),
                    4 * static_cast<size_t>(a.b.numel())) == 0);
  CHECK(a.running == b.running);
  // saving the restored state reproduces the file byte for byte
  save_checkpoint(dir / "c2.bin", b.params(), b.buffers(), 123);
  CHECK(read_bytes(dir / "c.bin") == read_bytes(dir / "c2.bin"));
}

TEST_CASE("file starts with the AGFV magic") {
  fs::path dir = tmpdir("magic");
  TinyState a(3);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 0);
  std::vector<char> raw = read_bytes(dir / "c.bin");
  REQUIRE(raw.size() >= 4);
  CHECK(std::string(raw.begin(), raw.begin() + 4) == "AGFV");
}

TEST_CASE("optimizer state round trips through a checkpoint") {
  fs::path dir = tmpdir("adam");
  TinyState a(4);
  auto pa = a.params();
  Adam<float> opt;
  for (auto& [n, t] : pa) {
    t.node()->ensure_grad();
    for (auto& g : t.node()->grad) g = 0.25f;
  }
  opt.step(pa);
  opt.step(pa);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 2, &opt);

  TinyState b(5);
  Adam<float> opt2;
  const int64_t step = load_checkpoint(dir / "c.bin", b.params(), b.buffers(),
                                       &opt2);
  CHECK(step == 2);
  CHECK(opt2.t == opt.t);
  REQUIRE(opt2.m.size() == opt.m.size());
  for (size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(opt2.m[i] == opt.m[i]);
    CHECK(opt2.v[i] == opt.v[i]);
  }
  // loading without asking for optimizer state also works
  TinyState c(6);
  CHECK(load_checkpoint(dir / "c.bin", c.params(), c.buffers()) == 2);
}

TEST_CASE("requesting optimizer state from a bare checkpoint fails") {
  fs::path dir = tmpdir("noadam");
  TinyState a(7);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 1);
  Adam<float> opt;
  CHECK_THROWS_WITH_AS(
      load_checkpoint(dir / "c.bin", a.params(), a.buffers(), &opt),
      doctest::Contains("no optimizer state"), checkpoint_error);
}

TEST_CASE("bad magic and bad version are rejected distinctly") {
  fs::path dir = tmpdir("bad");
  TinyState a(8);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 1);
  std::vector<char> raw = read_bytes(dir / "c.bin");

  std::vector<char> wrong_magic = raw;
  wrong_magic[0] = 'X';
  std::ofstream(dir / "m.bin", std::ios::binary)
      .write(wrong_magic.data(), static_cast<std::streamsize>(raw.size()));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "m.bin", a.params(), a.buffers()),
                       doctest::Contains("bad magic"), checkpoint_error);

  std::vector<char> wrong_version = raw;
  wrong_version[4] = 99;
  std::ofstream(dir / "v.bin", std::ios::binary)
      .write(wrong_version.data(), static_cast<std::streamsize>(raw.size()));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v.bin", a.params(), a.buffers()),
                       doctest::Contains("version"), checkpoint_error);
}

TEST_CASE("truncated checkpoints are reported as truncated") {
  fs::path dir = tmpdir("trunc");
  TinyState a(9);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 1);
  std::vector<char> raw = read_bytes(dir / "c.bin");
  for (size_t keep : {raw.size() - 1, raw.size() / 2, size_t(10)}) {
    std::ofstream(dir / "t.bin", std::ios::binary)
        .write(raw.data(), static_cast<std::streamsize>(keep));
    CHECK_THROWS_WITH_AS(
        load_checkpoint(dir / "t.bin", a.params(), a.buffers()),
        doctest::Contains("truncated"), checkpoint_error);
  }
}

TEST_CASE("missing parameter is named in the error") {
  fs::path dir = tmpdir("missing");
  TinyState a(10);
  // save only one of the two parameters
  save_checkpoint(dir / "c.bin", {{"b", a.b}}, a.buffers(), 1);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.bin", a.params(), a.buffers()),
                       doctest::Contains("missing parameter w"),
                       checkpoint_error);
}

TEST_CASE("shape mismatch is rejected and leaves the target untouched") {
  fs::path dir = tmpdir("shape");
  TinyState a(11);
  save_checkpoint(dir / "c.bin", a.params(), a.buffers(), 1);
  Tensor<float> wrong = Tensor<float>::filled({2, 1, 5, 5}, 0.5f);
  auto params = a.params();
  params[1].second = wrong;  // "w" now has the wrong shape
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.bin", params, a.buffers()),
                       doctest::Contains("shape mismatch for w"),
                       checkpoint_error);
  // validation failed before any writes: the good parameter kept its value
  for (float x : wrong.data()) CHECK(x == 0.5f);
}

TEST_CASE("full network checkpoint restores every tensor") {
  fs::path dir = tmpdir("net");
  HallucinationNet<float> a = build_network<float>(21);
  HallucinationNet<float> b = build_network<float>(22);
  save_checkpoint(dir / "net.bin", a, 77);
  CHECK(load_checkpoint(dir / "net.bin", b) == 77);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(std::memcmp(pa[i].second.data().data(), pb[i].second.data().data(),
                      4 * static_cast<size_t>(pa[i].second.numel())) == 0);
  }
  auto ba = a.buffers(), bb = b.buffers();
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);
  // a network from a different seed cannot load a checkpoint with renamed
  // tensors; simulate by dropping one tensor from the stored set
  auto params = a.params();
  params.pop_back();
  CHECK_THROWS_AS(load_checkpoint(dir / "net.bin", params, a.buffers()),
                  checkpoint_error);
}

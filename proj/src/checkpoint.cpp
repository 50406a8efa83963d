#include "aggfov/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace aggfov {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'F', 'V'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::ofstream f;

  explicit Writer(const std::filesystem::path& path)
      : f(path, std::ios::binary) {
    if (!f) throw io_error("cannot write checkpoint " + path.string());
  }

  void bytes(const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void i64(int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32s(const float* p, size_t n) { bytes(p, 4 * n); }
};

struct CkptReader {
  std::vector<char> b;
  size_t pos = 0;
  std::string name;  // for error messages

  explicit CkptReader(const std::filesystem::path& path)
      : name(path.string()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint " + name);
    b.assign(std::istreambuf_iterator<char>(f),
             std::istreambuf_iterator<char>());
  }

  void need(size_t n) {
    if (b.size() - pos < n)
      throw checkpoint_error("truncated checkpoint " + name + ": need " +
                             std::to_string(n) + " more bytes at offset " +
                             std::to_string(pos));
  }
  void bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, b.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 16))
      throw checkpoint_error("corrupt checkpoint " + name +
                             ": implausible name length at offset " +
                             std::to_string(pos - 4));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

struct StoredTensor {
  std::vector<int64_t> dims;
  std::vector<float> data;
};

std::string dims_str(const std::vector<int64_t>& d) {
  std::string s = "(";
  for (size_t i = 0; i < d.size(); ++i)
    s += (i ? "," : "") + std::to_string(d[i]);
  return s + ")";
}

}  // namespace

void save_checkpoint(
    const std::filesystem::path& path,
    std::vector<std::pair<std::string, Tensor<float>>> params,
    const std::vector<std::pair<std::string, std::vector<float>*>>& buffers,
    int64_t step, const Adam<float>* opt) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.i64(step);
  w.u32(static_cast<uint32_t>(params.size() + buffers.size()));
  for (auto& [name, t] : params) {
    w.str(name);
    w.u32(4);
    const Shape s = t.shape();
    w.i64(s.n);
    w.i64(s.c);
    w.i64(s.h);
    w.i64(s.w);
    w.f32s(t.data().data(), static_cast<size_t>(t.numel()));
  }
  for (auto& [name, b] : buffers) {
    w.str(name);
    w.u32(1);
    w.i64(static_cast<int64_t>(b->size()));
    w.f32s(b->data(), b->size());
  }
  if (opt) {
    if (!opt->m.empty() && opt->m.size() != params.size())
      throw checkpoint_error("optimizer holds " +
                             std::to_string(opt->m.size()) +
                             " parameter slots, network has " +
                             std::to_string(params.size()));
    w.f.put(1);
    w.i64(opt->t);
    w.u32(static_cast<uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
      const size_t n = static_cast<size_t>(params[i].second.numel());
      if (opt->m.empty()) {
        const std::vector<float> zero(n, 0.0f);
        w.f32s(zero.data(), n);
        w.f32s(zero.data(), n);
      } else {
        w.f32s(opt->m[i].data(), n);
        w.f32s(opt->v[i].data(), n);
      }
    }
  } else {
    w.f.put(0);
  }
  if (!w.f) throw io_error("write failed for checkpoint " + path.string());
}

int64_t load_checkpoint(
    const std::filesystem::path& path,
    std::vector<std::pair<std::string, Tensor<float>>> params,
    const std::vector<std::pair<std::string, std::vector<float>*>>& buffers,
    Adam<float>* opt) {
  CkptReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw checkpoint_error("bad magic in " + r.name +
                           ": not an AGFV checkpoint");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw checkpoint_error("unsupported checkpoint version " +
                           std::to_string(version) + " in " + r.name +
                           " (expected " + std::to_string(kVersion) + ")");
  const int64_t step = r.i64();
  const uint32_t ntensors = r.u32();
  std::map<std::string, StoredTensor> stored;
  for (uint32_t i = 0; i < ntensors; ++i) {
    const std::string name = r.str();
    StoredTensor t;
    const uint32_t rank = r.u32();
    if (rank == 0 || rank > 4)
      throw checkpoint_error("corrupt checkpoint " + r.name + ": tensor " +
                             name + " has rank " + std::to_string(rank));
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.i64());
      numel *= t.dims.back();
    }
    if (numel < 0 || numel > (int64_t(1) << 32))
      throw checkpoint_error("corrupt checkpoint " + r.name + ": tensor " +
                             name + " has implausible size");
    t.data.resize(static_cast<size_t>(numel));
    r.bytes(t.data.data(), 4 * static_cast<size_t>(numel));
    if (!stored.emplace(name, std::move(t)).second)
      throw checkpoint_error("corrupt checkpoint " + r.name +
                             ": duplicate tensor " + name);
  }
  if (stored.size() != params.size() + buffers.size()) {
    // report one concrete name the network expects but the file lacks, or
    // one the file has that the network does not
    for (auto& [name, t] : params)
      if (!stored.count(name))
        throw checkpoint_error("checkpoint " + r.name +
                               " is missing parameter " + name);
    for (auto& [name, b] : buffers)
      if (!stored.count(name))
        throw checkpoint_error("checkpoint " + r.name + " is missing buffer " +
                               name);
    throw checkpoint_error("checkpoint " + r.name + " holds " +
                           std::to_string(stored.size()) +
                           " tensors, network expects " +
                           std::to_string(params.size() + buffers.size()));
  }
  // validate everything before mutating the network
  for (auto& [name, t] : params) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw checkpoint_error("checkpoint " + r.name +
                             " is missing parameter " + name);
    const Shape s = t.shape();
    const std::vector<int64_t> want{s.n, s.c, s.h, s.w};
    if (it->second.dims != want)
      throw checkpoint_error("shape mismatch for " + name + ": checkpoint has " +
                             dims_str(it->second.dims) + ", network expects " +
                             s.str());
  }
  for (auto& [name, b] : buffers) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw checkpoint_error("checkpoint " + r.name + " is missing buffer " +
                             name);
    const std::vector<int64_t> want{static_cast<int64_t>(b->size())};
    if (it->second.dims != want)
      throw checkpoint_error("shape mismatch for buffer " + name +
                             ": checkpoint has " + dims_str(it->second.dims) +
                             ", network expects (" + std::to_string(b->size()) +
                             ")");
  }
  const uint8_t has_adam = r.u8();
  Adam<float> restored;
  if (has_adam) {
    restored.t = r.i64();
    const uint32_t nparams = r.u32();
    if (nparams != params.size())
      throw checkpoint_error("checkpoint " + r.name + " optimizer state has " +
                             std::to_string(nparams) +
                             " parameters, network expects " +
                             std::to_string(params.size()));
    restored.m.resize(nparams);
    restored.v.resize(nparams);
    for (uint32_t i = 0; i < nparams; ++i) {
      const size_t n = static_cast<size_t>(params[i].second.numel());
      restored.m[i].resize(n);
      restored.v[i].resize(n);
      r.bytes(restored.m[i].data(), 4 * n);
      r.bytes(restored.v[i].data(), 4 * n);
    }
  } else if (opt) {
    throw checkpoint_error("checkpoint " + r.name +
                           " has no optimizer state but one was requested");
  }
  for (auto& [name, t] : params)
    std::copy(stored[name].data.begin(), stored[name].data.end(),
              t.data().begin());
  for (auto& [name, b] : buffers) *b = stored[name].data;
  if (opt) {
    opt->t = restored.t;
    opt->m = std::move(restored.m);
    opt->v = std::move(restored.v);
  }
  return step;
}

}  // namespace aggfov

#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace aggfov {

struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct dimension_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Four-axis tensor extent: (batch, channels, height, width).
struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline Shape scalar_shape() { return {1, 1, 1, 1}; }

/// Intra-op thread cap from AGGFOV_THREADS; 1 means fully serial execution.
inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("AGGFOV_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return cached;
}

/// When true, every forward op validates that its output is finite.
inline bool& debug_checks() {
  static bool enabled = std::getenv("AGGFOV_DEBUG_CHECKS") != nullptr;
  return enabled;
}

}  // namespace aggfov

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mdb {

enum class Err {
  NonPositiveDepth,
  DimensionMismatch,
  ShapeMismatch,
  NonScalarLoss,
  MissingGradient,
  LabelOutOfRange,
  InvalidK,
  AllZeroFrequencies,
  EmptyMask,
  NonFinite,
  EmptyEvaluationRegion,
  TooFewFolds,
  InvalidSpec,
  Io,
  FormatViolation,
  ProviderFileMissing,
  Usage,
  Internal,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Err code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

uint64_t splitmix64(uint64_t x);

// Seed for an independent substream (per fold, per sample, per layer, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x9e3779b97f4a7c15ull));
}

// mt19937_64 with explicit draw routines. std::*_distribution output is
// implementation-defined; these are not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // standard normal, Box-Muller with cached spare
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mdb

#include "mdb/common.hpp"

#include <cmath>

namespace mdb {

const char* err_name(Err e) {
  switch (e) {
    case Err::NonPositiveDepth: return "NonPositiveDepth";
    case Err::DimensionMismatch: return "DimensionMismatch";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonScalarLoss: return "NonScalarLoss";
    case Err::MissingGradient: return "MissingGradient";
    case Err::LabelOutOfRange: return "LabelOutOfRange";
    case Err::InvalidK: return "InvalidK";
    case Err::AllZeroFrequencies: return "AllZeroFrequencies";
    case Err::EmptyMask: return "EmptyMask";
    case Err::NonFinite: return "NonFinite";
    case Err::EmptyEvaluationRegion: return "EmptyEvaluationRegion";
    case Err::TooFewFolds: return "TooFewFolds";
    case Err::InvalidSpec: return "InvalidSpec";
    case Err::Io: return "Io";
    case Err::FormatViolation: return "FormatViolation";
    case Err::ProviderFileMissing: return "ProviderFileMissing";
    case Err::Usage: return "Usage";
    case Err::Internal: return "Internal";
  }
  return "Unknown";
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

}  // namespace mdb

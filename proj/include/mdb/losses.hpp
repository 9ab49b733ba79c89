#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mdb/geometry.hpp"
#include "mdb/tensor.hpp"

namespace mdb {

inline constexpr int kNumClasses = 12;
inline constexpr uint8_t kUnannotated = 255;

/// Per-class loss weights, all positive and finite.
struct ClassWeights {
  std::array<double, kNumClasses> weights;

  void validate() const;
  static ClassWeights uniform();
};

enum class WeightingMode { KMeansReweight, Resample };

struct CombinedLossConfig {
  double lambda = 1.0;    // the paper's two tested settings are 0.5 and 1
  double smoothing = 0.1;
  WeightingMode weighting_mode = WeightingMode::KMeansReweight;
};

/// Per-voxel include flag aligned with a label volume; outside-frustum and
/// unannotated voxels are never included.
using VoxelMask = std::vector<uint8_t>;

using LabelVolume = std::vector<uint8_t>;

/// Exact masked per-class voxel counts over a set of label volumes.
std::array<int64_t, kNumClasses> class_frequencies(
    const std::vector<const LabelVolume*>& labels,
    const std::vector<const VoxelMask*>& masks);

struct KmeansResult {
  std::vector<int> assignments;    // one per input value
  std::vector<double> centroids;   // ascending
  double sse = 0.0;
};

/// Lloyd's algorithm on scalars with k-means++ seeding; best of `restarts`
/// seeded runs by summed squared error. Deterministic given the seed.
KmeansResult kmeans_1d(const std::vector<double>& values, int k, int max_iters,
                       uint64_t seed, int restarts = 8);

/// Smoothed class re-weighting: K-means over log-frequencies of the present
/// classes; weight = inverse cluster-median frequency, mean-normalized over
/// present classes, absent classes get 1, all clamped to [0.01, 100].
ClassWeights reweight_classes(const std::array<int64_t, kNumClasses>& freqs, int k,
                              uint64_t seed);

/// Weighted cross-entropy over masked voxels of one scene (logits [12,X,Y,Z])
/// or a batch ([N,12,X,Y,Z] with per-sample labels/masks concatenated; the
/// per-scene losses are averaged). Normalized by the summed weights of the
/// masked voxels. Differentiable wrt logits.
template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& logits, const std::vector<uint8_t>& labels,
                      const ClassWeights& weights, const VoxelMask& mask);

/// Label-smoothed cross-entropy over non-ignored pixels (logits [12,H,W] or
/// [N,12,H,W]). Target puts 1-smoothing on the true class plus smoothing/12
/// uniform mass. ignore: 1 = skip pixel (empty vector keeps every pixel).
template <typename T>
Tensor<T> smooth_ce(const Tensor<T>& logits, const std::vector<uint8_t>& labels,
                    double smoothing, const std::vector<uint8_t>& ignore);

/// SSCNet-style resampling baseline: keep every occupied voxel, draw empty
/// voxels without replacement up to ratio x occupied (all of them when fewer
/// are available). Outside-frustum and unannotated voxels are excluded.
VoxelMask resample_mask(const LabelVolume& labels, const std::vector<VoxelState>& states,
                        double ratio, uint64_t seed);

/// lambda * l_ss + l_ssc; gradients flow into both heads.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& l_ss, const Tensor<T>& l_ssc, double lambda);

/// Mask for the 3D loss: in-frustum annotated voxels, thinned by resampling
/// when the weighting mode asks for it.
VoxelMask make_loss_mask(const LabelVolume& labels, const std::vector<VoxelState>& states,
                         WeightingMode mode, double resample_ratio, uint64_t seed);

#define MDB_EXTERN_LOSSES(T)                                                       \
  extern template Tensor<T> weighted_ce(const Tensor<T>&, const std::vector<uint8_t>&, \
                                        const ClassWeights&, const VoxelMask&);    \
  extern template Tensor<T> smooth_ce(const Tensor<T>&, const std::vector<uint8_t>&,  \
                                      double, const std::vector<uint8_t>&);        \
  extern template Tensor<T> combined_loss(const Tensor<T>&, const Tensor<T>&, double);

MDB_EXTERN_LOSSES(float)
MDB_EXTERN_LOSSES(double)
#undef MDB_EXTERN_LOSSES

}  // namespace mdb

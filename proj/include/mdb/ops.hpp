#pragma once

#include <array>

#include "mdb/geometry.hpp"
#include "mdb/tensor.hpp"

namespace mdb {

struct Conv3dSpec {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
};

// out = floor((in + 2*pad - kernel) / stride) + 1; throws ShapeMismatch when
// the kernel does not fit the padded input.
int64_t conv_out_dim(int64_t in, int64_t kernel, int stride, int pad);

/// 3D cross-correlation with zero padding. x: [N,C,D,H,W], w: [K,C,kd,kh,kw],
/// b: [K] or undefined for bias-free. Differentiable in x, w, b.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv3dSpec& spec);

/// Per-channel batch normalization over all non-channel dims (channel = dim 1).
/// Training mode normalizes by batch statistics and updates running buffers
/// in place; eval mode normalizes by the running buffers.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

enum class Act { Relu, Tanh };

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind);

enum class ResampleMode { Nearest, Trilinear };

/// Resize the spatial dims of [N,C,D,H,W] to target (d,h,w). Output index i
/// samples input position (i+0.5)*in/out - 0.5 (taps clamped to the volume).
/// Trilinear mode is differentiable; nearest is intended for label volumes.
template <typename T>
Tensor<T> resample_volume(const Tensor<T>& x, std::array<int64_t, 3> target,
                          ResampleMode mode);

/// Scatter per-pixel features onto voxels through precomputed projection maps
/// (one per batch sample); colliding pixels average. x: [N,C,H,W] ->
/// [N,C,X,Y,Z]. Differentiable in x.
template <typename T>
Tensor<T> scatter_project(const Tensor<T>& x, const std::vector<const ProjectionMap*>& maps);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);  // same shape
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);  // elementwise
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);  // scalar

/// Same data, new shape (copies; gradient passes through).
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

#define MDB_EXTERN_OPS(T)                                                              \
  extern template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   const Conv3dSpec&);                                 \
  extern template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&,            \
                                       const Tensor<T>&, Tensor<T>&, Tensor<T>&, bool, \
                                       T, T);                                          \
  extern template Tensor<T> relu(const Tensor<T>&);                                    \
  extern template Tensor<T> tanh(const Tensor<T>&);                                    \
  extern template Tensor<T> activation(const Tensor<T>&, Act);                         \
  extern template Tensor<T> resample_volume(const Tensor<T>&, std::array<int64_t, 3>,  \
                                            ResampleMode);                             \
  extern template Tensor<T> scatter_project(const Tensor<T>&,                          \
                                            const std::vector<const ProjectionMap*>&); \
  extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  extern template Tensor<T> scale(const Tensor<T>&, T);                                \
  extern template Tensor<T> sum(const Tensor<T>&);                                     \
  extern template Tensor<T> reshape(const Tensor<T>&, Shape);

MDB_EXTERN_OPS(float)
MDB_EXTERN_OPS(double)
#undef MDB_EXTERN_OPS

}  // namespace mdb

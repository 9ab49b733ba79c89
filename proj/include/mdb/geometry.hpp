#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mdb/common.hpp"

namespace mdb {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;  // row-major

Vec3 mat_vec(const Mat3& m, const Vec3& v);
Mat3 transpose(const Mat3& m);

/// Pinhole camera: intrinsics (fx, fy, cx, cy) plus world-to-camera [R|t].
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};  // world -> camera
  Vec3 translation{0, 0, 0};                          // meters
  int image_width = 1, image_height = 1;

  // Throws InvalidSpec when R is not orthonormal within 1e-9 or focals/dims
  // are not positive.
  void validate() const;

  static CameraModel identity();
};

/// Single-channel depth image in meters; 0 marks missing depth.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> meters;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), meters(static_cast<size_t>(w) * h, fill) {}

  float at(int u, int v) const { return meters[static_cast<size_t>(v) * width + u]; }
  float& at(int u, int v) { return meters[static_cast<size_t>(v) * width + u]; }
};

/// Dense 2D image with channel-major layout (c, y, x).
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<float> values;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(static_cast<size_t>(c) * h * w, fill) {}

  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

/// Axis-aligned voxel lattice: dims in voxels, physical origin and spacing.
struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};  // nx, ny, nz
  Vec3 origin{0, 0, 0};
  double voxel_size = 1.0;
  double truncation = 1.0;

  void validate() const;
  int64_t voxel_count() const {
    return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
  }
  int64_t flat_index(int x, int y, int z) const {
    return (static_cast<int64_t>(x) * dims[1] + y) * dims[2] + z;
  }
  Vec3 voxel_center(int x, int y, int z) const {
    return {origin[0] + (x + 0.5) * voxel_size, origin[1] + (y + 0.5) * voxel_size,
            origin[2] + (z + 0.5) * voxel_size};
  }
  // Containing voxel of a world point; false when outside the lattice.
  bool voxel_of(const Vec3& p, std::array<int, 3>& out) const;

  bool same_lattice(const GridSpec& o) const;

  // Voxel-grid files persist geometry as f32; snapping keeps a save/load
  // round-trip bit-identical.
  GridSpec snapped_to_f32() const;

  // 240x144x240 voxels of 0.02 m, truncation 0.24 m.
  static GridSpec full_scale();
  // 24x16x24 voxels of 0.2 m, truncation 0.6 m.
  static GridSpec desk_scale();
};

/// Dense voxel payload, layout (channel, x, y, z) with z fastest.
struct VoxelGrid {
  GridSpec spec;
  int channels = 1;
  std::vector<float> values;

  VoxelGrid() = default;
  VoxelGrid(const GridSpec& s, int c, float fill = 0.0f)
      : spec(s), channels(c),
        values(static_cast<size_t>(c) * s.voxel_count(), fill) {}

  float at(int c, int x, int y, int z) const {
    return values[static_cast<size_t>(c) * spec.voxel_count() + spec.flat_index(x, y, z)];
  }
  float& at(int c, int x, int y, int z) {
    return values[static_cast<size_t>(c) * spec.voxel_count() + spec.flat_index(x, y, z)];
  }
};

enum class VoxelState : uint8_t {
  VisibleEmpty = 0,
  Surface = 1,
  Occluded = 2,
  OutsideFrustum = 3,
};

struct VisibilityGrid {
  GridSpec spec;
  std::vector<VoxelState> states;

  VisibilityGrid() = default;
  explicit VisibilityGrid(const GridSpec& s)
      : spec(s), states(s.voxel_count(), VoxelState::OutsideFrustum) {}

  VoxelState at(int x, int y, int z) const { return states[spec.flat_index(x, y, z)]; }
  VoxelState& at(int x, int y, int z) { return states[spec.flat_index(x, y, z)]; }
};

struct PixelProjection {
  double u = 0.0, v = 0.0, depth = 0.0;
};

/// Perspective projection of a world point. Throws NonPositiveDepth when the
/// camera-frame z is not positive.
PixelProjection project_point(const CameraModel& camera, const Vec3& point);

/// Inverse of project_point: pixel + camera-frame depth to a world point.
Vec3 backproject_pixel(const CameraModel& camera, double u, double v, double depth);

/// Per-voxel visibility from one depth view. Voxel centers are projected to
/// the nearest pixel; |voxel depth - pixel depth| <= voxel_size marks Surface,
/// nearer voxels are VisibleEmpty, farther ones Occluded. Off-image, behind-
/// camera, and missing-depth voxels are OutsideFrustum.
VisibilityGrid classify_voxels(const CameraModel& camera, const DepthMap& depth,
                               const GridSpec& spec);

/// Flipped TSDF: value = sign * (1 - min(1, d / truncation)) with sign +1 for
/// visible/surface voxels, -1 for occluded ones and 0 outside the frustum.
/// d is the distance to the observed surface, the minimum of the euclidean
/// distance to the depth-pixel point cloud (exact within 2*truncation) and
/// the projective depth difference along the voxel's own viewing ray.
VoxelGrid compute_ftsdf(const CameraModel& camera, const DepthMap& depth,
                        const GridSpec& spec);

/// Sparse pixel-to-voxel assignment: for every pixel with valid depth, the
/// voxel containing its back-projection. CSR over receiving voxels; pixel
/// lists keep row-major image order.
struct ProjectionMap {
  std::array<int, 3> grid_dims{0, 0, 0};
  int image_width = 0, image_height = 0;
  std::vector<int64_t> voxel_index;    // one entry per receiving voxel
  std::vector<int32_t> pixel_offset;   // size voxel_index.size()+1
  std::vector<int32_t> pixel_list;     // flat pixel index v*width+u
};

ProjectionMap build_projection_map(const CameraModel& camera, const DepthMap& depth,
                                   const GridSpec& spec);

/// Scatter a 2D feature map onto scene surfaces: each valid-depth pixel's
/// feature vector lands in the voxel containing its back-projected point;
/// collisions average.
VoxelGrid project_features(const CameraModel& camera, const Image& features,
                           const DepthMap& depth, const GridSpec& spec);

}  // namespace mdb

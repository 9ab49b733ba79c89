#include "mdb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdb {

Vec3 mat_vec(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

Mat3 transpose(const Mat3& m) {
  Mat3 t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

void CameraModel::validate() const {
  require(fx > 0.0 && fy > 0.0, Err::InvalidSpec, "focal lengths must be positive");
  require(image_width > 0 && image_height > 0, Err::InvalidSpec,
          "image dimensions must be positive");
  // R^T R = I entrywise within 1e-9
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rotation[k][i] * rotation[k][j];
      double expect = (i == j) ? 1.0 : 0.0;
      require(std::abs(dot - expect) <= 1e-9, Err::InvalidSpec,
              "rotation is not orthonormal");
    }
  }
}

CameraModel CameraModel::identity() { return CameraModel{}; }

void GridSpec::validate() const {
  require(voxel_size > 0.0, Err::InvalidSpec, "voxel_size must be positive");
  require(truncation > 0.0, Err::InvalidSpec, "truncation must be positive");
  require(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, Err::InvalidSpec,
          "grid dims must be >= 1");
}

bool GridSpec::voxel_of(const Vec3& p, std::array<int, 3>& out) const {
  for (int a = 0; a < 3; ++a) {
    double rel = (p[a] - origin[a]) / voxel_size;
    int idx = static_cast<int>(std::floor(rel));
    if (idx < 0 || idx >= dims[a]) return false;
    out[a] = idx;
  }
  return true;
}

bool GridSpec::same_lattice(const GridSpec& o) const {
  return dims == o.dims && origin == o.origin && voxel_size == o.voxel_size;
}

GridSpec GridSpec::snapped_to_f32() const {
  GridSpec s = *this;
  for (int a = 0; a < 3; ++a) s.origin[a] = static_cast<float>(origin[a]);
  s.voxel_size = static_cast<float>(voxel_size);
  s.truncation = static_cast<float>(truncation);
  return s;
}

GridSpec GridSpec::full_scale() {
  GridSpec s;
  s.dims = {240, 144, 240};
  s.origin = {0, 0, 0};
  s.voxel_size = 0.02;
  s.truncation = 0.24;
  return s.snapped_to_f32();
}

GridSpec GridSpec::desk_scale() {
  GridSpec s;
  s.dims = {24, 16, 24};
  s.origin = {0, 0, 0};
  s.voxel_size = 0.2;
  s.truncation = 0.6;
  return s.snapped_to_f32();
}

PixelProjection project_point(const CameraModel& camera, const Vec3& point) {
  Vec3 q = mat_vec(camera.rotation, point);
  for (int a = 0; a < 3; ++a) q[a] += camera.translation[a];
  require(q[2] > 0.0, Err::NonPositiveDepth, "point behind camera");
  PixelProjection p;
  p.u = camera.fx * q[0] / q[2] + camera.cx;
  p.v = camera.fy * q[1] / q[2] + camera.cy;
  p.depth = q[2];
  return p;
}

Vec3 backproject_pixel(const CameraModel& camera, double u, double v, double depth) {
  require(depth > 0.0, Err::NonPositiveDepth, "depth must be positive");
  Vec3 q{(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth};
  for (int a = 0; a < 3; ++a) q[a] -= camera.translation[a];
  return mat_vec(transpose(camera.rotation), q);
}

namespace {

// Projection of one voxel center, resolved to its nearest pixel.
struct VoxelView {
  bool in_frustum = false;
  int u = 0, v = 0;         // nearest pixel
  double voxel_depth = 0.0;  // camera-frame z of the voxel center
  float pixel_depth = 0.0f;  // depth map value at (u, v)
};

VoxelView view_voxel(const CameraModel& camera, const DepthMap& depth, const Vec3& center) {
  VoxelView view;
  Vec3 q = mat_vec(camera.rotation, center);
  for (int a = 0; a < 3; ++a) q[a] += camera.translation[a];
  if (q[2] <= 0.0) return view;
  double u = camera.fx * q[0] / q[2] + camera.cx;
  double v = camera.fy * q[1] / q[2] + camera.cy;
  int ui = static_cast<int>(std::lround(u));
  int vi = static_cast<int>(std::lround(v));
  if (ui < 0 || ui >= depth.width || vi < 0 || vi >= depth.height) return view;
  float d = depth.at(ui, vi);
  if (d <= 0.0f) return view;  // missing depth
  view.in_frustum = true;
  view.u = ui;
  view.v = vi;
  view.voxel_depth = q[2];
  view.pixel_depth = d;
  return view;
}

VoxelState classify_one(const VoxelView& view, double voxel_size) {
  if (!view.in_frustum) return VoxelState::OutsideFrustum;
  double diff = view.voxel_depth - static_cast<double>(view.pixel_depth);
  if (std::abs(diff) <= voxel_size) return VoxelState::Surface;
  if (diff < 0.0) return VoxelState::VisibleEmpty;
  return VoxelState::Occluded;
}

// Uniform binning of the surface point cloud, cell edge = truncation. A
// query scanning +-2 cells sees every point within 2*truncation.
class PointBins {
 public:
  PointBins(const GridSpec& spec, double cell) : cell_(cell) {
    for (int a = 0; a < 3; ++a) {
      lo_[a] = spec.origin[a] - 2.0 * cell_;
      n_[a] = std::max<int64_t>(
          1, static_cast<int64_t>(std::ceil((spec.dims[a] * spec.voxel_size + 4.0 * cell_) / cell_)));
    }
    heads_.assign(static_cast<size_t>(n_[0]) * n_[1] * n_[2], -1);
  }

  void add(const Vec3& p) {
    points_.push_back(p);
    int32_t idx = static_cast<int32_t>(points_.size()) - 1;
    next_.push_back(heads_[bin_of(p)]);
    heads_[bin_of(p)] = idx;
  }

  // Exact squared distance to the nearest point within 2*cell; clamped to
  // (2*cell)^2 beyond that radius.
  double nearest_sq(const Vec3& q) const {
    double cap = 2.0 * cell_;
    double best = cap * cap;
    int64_t cx = coord(q, 0), cy = coord(q, 1), cz = coord(q, 2);
    for (int64_t x = std::max<int64_t>(0, cx - 2); x <= std::min(n_[0] - 1, cx + 2); ++x) {
      for (int64_t y = std::max<int64_t>(0, cy - 2); y <= std::min(n_[1] - 1, cy + 2); ++y) {
        for (int64_t z = std::max<int64_t>(0, cz - 2); z <= std::min(n_[2] - 1, cz + 2); ++z) {
          int32_t it = heads_[(x * n_[1] + y) * n_[2] + z];
          while (it >= 0) {
            const Vec3& p = points_[it];
            double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
            double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) best = d2;
            it = next_[it];
          }
        }
      }
    }
    return best;
  }

 private:
  int64_t coord(const Vec3& p, int a) const {
    int64_t c = static_cast<int64_t>(std::floor((p[a] - lo_[a]) / cell_));
    return std::clamp<int64_t>(c, 0, n_[a] - 1);
  }
  size_t bin_of(const Vec3& p) const {
    return static_cast<size_t>((coord(p, 0) * n_[1] + coord(p, 1)) * n_[2] + coord(p, 2));
  }

  double cell_;
  Vec3 lo_;
  std::array<int64_t, 3> n_;
  std::vector<int32_t> heads_;
  std::vector<Vec3> points_;
  std::vector<int32_t> next_;
};

void check_dims(const CameraModel& camera, const DepthMap& depth) {
  require(depth.width == camera.image_width && depth.height == camera.image_height,
          Err::DimensionMismatch, "depth map does not match camera image dimensions");
}

}  // namespace

VisibilityGrid classify_voxels(const CameraModel& camera, const DepthMap& depth,
                               const GridSpec& spec) {
  check_dims(camera, depth);
  spec.validate();
  VisibilityGrid grid(spec);
  for (int x = 0; x < spec.dims[0]; ++x) {
    for (int y = 0; y < spec.dims[1]; ++y) {
      for (int z = 0; z < spec.dims[2]; ++z) {
        VoxelView view = view_voxel(camera, depth, spec.voxel_center(x, y, z));
        grid.at(x, y, z) = classify_one(view, spec.voxel_size);
      }
    }
  }
  return grid;
}

VoxelGrid compute_ftsdf(const CameraModel& camera, const DepthMap& depth,
                        const GridSpec& spec) {
  check_dims(camera, depth);
  spec.validate();

  PointBins bins(spec, spec.truncation);
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      float d = depth.at(u, v);
      if (d > 0.0f) bins.add(backproject_pixel(camera, u, v, d));
    }
  }

  VoxelGrid grid(spec, 1, 0.0f);
  for (int x = 0; x < spec.dims[0]; ++x) {
    for (int y = 0; y < spec.dims[1]; ++y) {
      for (int z = 0; z < spec.dims[2]; ++z) {
        Vec3 center = spec.voxel_center(x, y, z);
        VoxelView view = view_voxel(camera, depth, center);
        VoxelState state = classify_one(view, spec.voxel_size);
        if (state == VoxelState::OutsideFrustum) continue;  // stays 0
        double d = std::sqrt(bins.nearest_sq(center));
        double ray = std::abs(view.voxel_depth - static_cast<double>(view.pixel_depth));
        d = std::min(d, ray);
        double sign = (state == VoxelState::Occluded) ? -1.0 : 1.0;
        grid.at(0, x, y, z) =
            static_cast<float>(sign * (1.0 - std::min(1.0, d / spec.truncation)));
      }
    }
  }
  return grid;
}

ProjectionMap build_projection_map(const CameraModel& camera, const DepthMap& depth,
                                   const GridSpec& spec) {
  check_dims(camera, depth);
  spec.validate();

  // pixel -> voxel in row-major pixel order
  std::vector<int64_t> voxel_of_pixel(static_cast<size_t>(depth.width) * depth.height, -1);
  std::vector<int32_t> count(spec.voxel_count(), 0);
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      float d = depth.at(u, v);
      if (d <= 0.0f) continue;
      Vec3 p = backproject_pixel(camera, u, v, d);
      std::array<int, 3> cell;
      if (!spec.voxel_of(p, cell)) continue;
      int64_t idx = spec.flat_index(cell[0], cell[1], cell[2]);
      voxel_of_pixel[static_cast<size_t>(v) * depth.width + u] = idx;
      ++count[idx];
    }
  }

  ProjectionMap map;
  map.grid_dims = spec.dims;
  map.image_width = depth.width;
  map.image_height = depth.height;

  std::vector<int32_t> slot(spec.voxel_count(), -1);
  for (int64_t i = 0; i < spec.voxel_count(); ++i) {
    if (count[i] == 0) continue;
    slot[i] = static_cast<int32_t>(map.voxel_index.size());
    map.voxel_index.push_back(i);
    map.pixel_offset.push_back(0);
  }
  map.pixel_offset.push_back(0);
  for (size_t s = 1; s <= map.voxel_index.size(); ++s) {
    map.pixel_offset[s] =
        map.pixel_offset[s - 1] + count[map.voxel_index[s - 1]];
  }
  map.pixel_list.resize(map.pixel_offset.back());

  std::vector<int32_t> cursor(map.voxel_index.size(), 0);
  for (int32_t px = 0; px < static_cast<int32_t>(voxel_of_pixel.size()); ++px) {
    int64_t vox = voxel_of_pixel[px];
    if (vox < 0) continue;
    int32_t s = slot[vox];
    map.pixel_list[map.pixel_offset[s] + cursor[s]++] = px;
  }
  return map;
}

VoxelGrid project_features(const CameraModel& camera, const Image& features,
                           const DepthMap& depth, const GridSpec& spec) {
  require(features.height == depth.height && features.width == depth.width,
          Err::DimensionMismatch, "feature map does not match depth map dimensions");
  ProjectionMap map = build_projection_map(camera, depth, spec);

  VoxelGrid grid(spec, features.channels, 0.0f);
  int64_t stride = spec.voxel_count();
  for (size_t s = 0; s < map.voxel_index.size(); ++s) {
    int64_t vox = map.voxel_index[s];
    int32_t begin = map.pixel_offset[s], end = map.pixel_offset[s + 1];
    for (int c = 0; c < features.channels; ++c) {
      double acc = 0.0;
      for (int32_t i = begin; i < end; ++i) {
        int32_t px = map.pixel_list[i];
        acc += features.values[static_cast<size_t>(c) * depth.height * depth.width + px];
      }
      grid.values[static_cast<size_t>(c) * stride + vox] =
          static_cast<float>(acc / (end - begin));
    }
  }
  return grid;
}

}  // namespace mdb

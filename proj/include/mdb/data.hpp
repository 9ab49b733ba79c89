#pragma once

#include <array>
#include <string>
#include <vector>

#include "mdb/geometry.hpp"
#include "mdb/io.hpp"
#include "mdb/losses.hpp"

namespace mdb {

/// One scene: RGB view, depth map, camera, full-resolution ground-truth label
/// volume, and the grids derived from them.
struct Sample {
  std::string id;
  Image rgb;            // 3xHxW in [0,1]
  DepthMap depth;       // meters, 0 = missing
  CameraModel camera;
  GridSpec grid;
  LabelVolume gt_labels;  // 0..11, 255 = unannotated

  // derived by derive()
  VoxelGrid ftsdf;
  VisibilityGrid visibility;
  LabelVolume labels2d;  // per-pixel class, 255 = no depth
  ProjectionMap projection;

  // Fills the derived fields from rgb/depth/camera/gt_labels. Per-pixel
  // classes come from the grid label at each pixel's back-projection.
  void derive();
};

/// Axis-aligned box tagged with a class label.
struct Solid {
  Vec3 lo, hi;
  uint8_t label;
  bool contains(const Vec3& p) const;
};

struct SyntheticSceneSpec {
  GridSpec grid = GridSpec::desk_scale();
  int image_width = 64, image_height = 48;
  double focal = 50.0;
  int shell_thickness = 3;  // voxels; thick enough to survive 4x pooling
  int min_objects = 2, max_objects = 4;
  std::vector<uint8_t> object_classes{6, 7, 8, 10};  // bed sofa table furniture
  double skew = 0.0;          // >0 makes later-listed classes rarer
  double color_noise = 0.05;
  double missing_depth_fraction = 0.0;
  double object_scale = 1.0;   // footprint multiplier (easy tier upsizes)
  double camera_jitter = 1.0;  // scales viewpoint randomness

  void validate() const;

  static SyntheticSceneSpec easy_tier();
  static SyntheticSceneSpec skewed_tier();
};

struct GeneratedScene {
  Sample sample;
  std::array<int64_t, kNumClasses> class_counts{};  // full-resolution voxel counts
  std::vector<Solid> solids;
};

/// Procedural room: shell solids (floor/ceiling/walls), wall-attached windows
/// and TVs, free-standing furniture; depth by analytic ray casting against
/// the solids, class-coded RGB with additive noise. Deterministic per seed.
GeneratedScene generate_scene(const SyntheticSceneSpec& spec, uint64_t seed);

/// Seeded shuffle + contiguous partition; folds are disjoint, cover all
/// indices, sizes differ by at most one.
std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_split(int n, int k,
                                                                       uint64_t seed);

struct TrainState {
  int epoch = 0;
  double best_miou = -1.0;
  int epochs_since_improvement = 0;
  uint64_t seed = 0;
  int fold_id = 0;
};

enum class StopDecision { Continue, Stop };

/// Strictly-greater improvement resets the counter; Stop once
/// epochs_since_improvement reaches patience.
StopDecision early_stop(TrainState& state, double val_miou, int patience);

/// Writes rgb/depth/labels/camera files for a sample and returns their
/// manifest-relative paths.
SamplePaths save_sample(const std::string& dir, const Sample& sample);

/// Loads and derives a sample from manifest paths (relative to manifest_dir).
Sample load_sample(const std::string& manifest_dir, const SamplePaths& paths);

const std::array<const char*, kNumClasses>& class_names();

}  // namespace mdb

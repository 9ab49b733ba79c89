#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdb/geometry.hpp"
#include "mdb/losses.hpp"
#include "mdb/tensor.hpp"

namespace mdb {

// --- depth / rgb images -----------------------------------------------------
// Depth maps are 16-bit single-channel PNGs in millimeters, 0 = missing.

void save_depth_png(const std::string& path, const DepthMap& depth);
DepthMap load_depth_png(const std::string& path);

// RGB images are 8-bit three-channel PNGs; in memory they live in [0,1].
void save_rgb_png(const std::string& path, const Image& rgb);
Image load_rgb_png(const std::string& path);

// --- camera text files -------------------------------------------------------
// Line 1: "fx fy cx cy"; lines 2-4: rows of R; line 5: t. Whitespace-separated
// decimals. Image dimensions come from the paired image files.

void save_camera(const std::string& path, const CameraModel& camera);
CameraModel load_camera(const std::string& path, int image_width, int image_height);

// --- VXG1 voxel grids ---------------------------------------------------------
// magic "VXG1", u32 channels/nx/ny/nz, f32 origin[3], f32 voxel_size,
// f32 truncation, u8 dtype (0 = f32, 1 = u8), little-endian payload in
// (channel, x, y, z) order with z fastest.

void save_vxg(const std::string& path, const VoxelGrid& grid);
VoxelGrid load_vxg(const std::string& path);

void save_vxg_labels(const std::string& path, const LabelVolume& labels,
                     const GridSpec& spec);
std::pair<LabelVolume, GridSpec> load_vxg_labels(const std::string& path);

// 2D feature/logit maps stored as single-slice VXG grids (nx=W, ny=H, nz=1).
void save_image_vxg(const std::string& path, const Image& image);
Image load_image_vxg(const std::string& path);

// --- checkpoints ---------------------------------------------------------------
// magic "MDB1", u32 count, then per entry: u32 name length + bytes, u32 rank,
// u32 dims[rank], f32 payload; followed by an optimizer-state section in the
// same layout.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& params,
                     const std::vector<CheckpointEntry>& opt_state);
std::pair<std::vector<CheckpointEntry>, std::vector<CheckpointEntry>> load_checkpoint(
    const std::string& path);

template <typename T>
std::vector<CheckpointEntry> to_entries(
    const std::vector<std::pair<std::string, Tensor<T>>>& named);

// Copies entry values into same-named tensors; throws FormatViolation for
// missing names, ShapeMismatch for shape disagreement.
template <typename T>
void apply_entries(const std::vector<CheckpointEntry>& entries,
                   const std::vector<std::pair<std::string, Tensor<T>>>& named);

// --- class weight files ---------------------------------------------------------
// 12 lines of "class_index weight".

void save_class_weights(const std::string& path, const ClassWeights& weights);
ClassWeights load_class_weights(const std::string& path);

// --- dataset manifest -------------------------------------------------------------
// One sample per line: rgb depth labels camera (paths relative to the manifest).

struct SamplePaths {
  std::string rgb, depth, labels, camera;
};

void save_manifest(const std::string& path, const std::vector<SamplePaths>& samples);
std::vector<SamplePaths> load_manifest(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

#define MDB_EXTERN_IO(T)                                                            \
  extern template std::vector<CheckpointEntry> to_entries(                          \
      const std::vector<std::pair<std::string, Tensor<T>>>&);                       \
  extern template void apply_entries(const std::vector<CheckpointEntry>&,           \
                                     const std::vector<std::pair<std::string, Tensor<T>>>&);

MDB_EXTERN_IO(float)
MDB_EXTERN_IO(double)
#undef MDB_EXTERN_IO

}  // namespace mdb

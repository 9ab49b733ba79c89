#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdb/losses.hpp"

namespace mdb {

/// 12x12 counts over masked-in voxels; rows ground truth, columns prediction.
struct ConfusionMatrix {
  std::array<int64_t, kNumClasses * kNumClasses> counts{};

  int64_t& at(int gt, int pred) { return counts[gt * kNumClasses + pred]; }
  int64_t at(int gt, int pred) const { return counts[gt * kNumClasses + pred]; }
  void add(const ConfusionMatrix& o);
  int64_t total() const;
};

ConfusionMatrix confusion_matrix(const LabelVolume& pred, const LabelVolume& gt,
                                 const VoxelMask& mask);

struct ScCounts {
  int64_t tp = 0, fp = 0, fn = 0;
};

struct ScResult {
  double precision = 0.0, recall = 0.0, iou = 0.0;  // percentages
  bool zero_denominator = false;
  int64_t region_size = 0;
};

/// Scene-completion evaluation region: every occluded GT-occupied voxel plus
/// a seeded without-replacement sample of occluded GT-empty voxels, ratio x
/// the occupied count (1:1 by default). Unannotated voxels are skipped.
std::vector<int64_t> select_sc_region(const LabelVolume& gt,
                                      const std::vector<VoxelState>& states,
                                      uint64_t resample_seed, double ratio = 1.0);

ScCounts sc_counts(const LabelVolume& pred, const LabelVolume& gt,
                   const std::vector<int64_t>& region);

ScResult sc_from_counts(const ScCounts& c);

/// Binary occupancy precision/recall/IoU over the resampled occluded region.
/// Zero denominators report 0 and set the flag.
ScResult sc_eval(const LabelVolume& pred, const LabelVolume& gt,
                 const std::vector<VoxelState>& states, uint64_t resample_seed,
                 double ratio = 1.0);

struct SscClassCounts {
  std::array<int64_t, kNumClasses> tp{}, fp{}, fn{};
  void add(const SscClassCounts& o);
};

struct SscResult {
  std::array<double, 11> per_class_iou{};  // classes 1..11, percentages
  std::array<bool, 11> defined{};          // absent from both pred and GT -> false
  double miou = 0.0;                       // mean over defined classes
  bool any_defined = false;
};

SscClassCounts ssc_counts(const LabelVolume& pred, const LabelVolume& gt,
                          const VoxelMask& mask);

SscResult ssc_from_counts(const SscClassCounts& c);

/// Per-class IoU and mIoU over the masked region (observed surface plus
/// occluded voxels), excluding the empty class; classes absent from both
/// prediction and ground truth are excluded from the mean.
SscResult ssc_eval(const LabelVolume& pred, const LabelVolume& gt, const VoxelMask& mask);

/// Mask of voxels evaluated by the semantic task: surface and occluded,
/// annotated.
VoxelMask make_ssc_mask(const std::vector<VoxelState>& states, const LabelVolume& labels);

struct EvalReport {
  int fold_id = 0;
  double sc_precision = 0.0, sc_recall = 0.0, sc_iou = 0.0;
  std::array<double, 11> per_class_iou{};
  std::array<bool, 11> class_defined{};
  double ssc_miou = 0.0;
  double sc_resample_ratio = 1.0;
  bool zero_denominator = false;
};

struct MetricStat {
  double mean = 0.0, stddev = 0.0;
  std::string str() const;  // "60.1±1.0"
};

struct FoldAggregate {
  MetricStat sc_precision, sc_recall, sc_iou, ssc_miou;
  std::array<MetricStat, 11> per_class_iou;
  std::array<bool, 11> class_defined{};  // defined in at least one fold
  int folds = 0;
};

/// Mean and Bessel-corrected standard deviation per metric; needs >= 2 reports.
FoldAggregate aggregate_folds(const std::vector<EvalReport>& reports);

std::string format_mean_std(double mean, double stddev);

}  // namespace mdb

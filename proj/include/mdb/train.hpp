#pragma once

#include <string>
#include <vector>

#include "mdb/blocks.hpp"
#include "mdb/data.hpp"
#include "mdb/metrics.hpp"

namespace mdb {

struct TrainConfig {
  MdbNetConfig model;
  int epochs = 8;
  int batch_size = 2;
  double sgd_max_lr = 0.01;
  double sgd_momentum = 0.9;
  double sgd_weight_decay = 5e-4;
  double onecycle_warmup = 0.3;
  double adamw_lr = 1e-3;
  double adamw_weight_decay = 0.05;
  double adamw_min_lr = 1e-7;
  // 2D-head-only steps on the semantic loss before joint training; stands in
  // for the pretrained features the full-scale pipeline starts from
  int head2d_warmup_steps = 300;
  int patience = 15;
  double lambda = 1.0;  // combined-loss coefficient
  double smoothing = 0.1;
  WeightingMode weighting = WeightingMode::KMeansReweight;
  int kmeans_k = 3;
  double resample_ratio = 2.0;  // empty:occupied for the resampling loss
  double sc_ratio = 1.0;        // empty:occupied for SC evaluation
  int folds = 3;
  uint64_t seed = 1;
};

/// Output-resolution tensors shared by the loss and the evaluators.
struct PreparedSample {
  LabelVolume pooled_labels;
  std::vector<VoxelState> pooled_visibility;
  VoxelMask loss_mask;
  VoxelMask ssc_mask;
  std::vector<uint8_t> ignore2d;  // 1 = pixel skipped by the 2D loss
  uint64_t sc_seed = 0;
};

PreparedSample prepare_sample(const Sample& sample, const TrainConfig& cfg,
                              int global_index);

struct StepLog {
  int64_t step = 0;
  double lr3d = 0, lr2d = 0;
  double loss = 0, l_ss = 0, l_ssc = 0;
};

struct FoldOutcome {
  EvalReport report;
  std::vector<StepLog> steps;
  int best_epoch = -1;
  double best_miou = 0.0;
  int epochs_run = 0;
  std::vector<CheckpointEntry> best_state;      // params + buffers
  std::vector<CheckpointEntry> best_opt_state;  // optimizer moments
  ClassWeights class_weights = ClassWeights::uniform();
};

/// Trains one fold: SGD momentum + OneCycle on the 3D branch, AdamW + cosine
/// decay on the 2D head, early stopping on validation mIoU. Deterministic for
/// a fixed seed. Leaves the best epoch's state in the outcome.
FoldOutcome train_fold(const TrainConfig& cfg, const std::vector<Sample>& samples,
                       const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                       int fold_id);

struct ExperimentResult {
  std::vector<FoldOutcome> folds;
  FoldAggregate aggregate;
};

/// K-fold training; folds may run on parallel threads (MDB_THREADS) with
/// per-fold seeds, which does not change the results.
ExperimentResult run_experiment(const TrainConfig& cfg, const std::vector<Sample>& samples);

/// Evaluates a model over samples, accumulating counts across scenes.
EvalReport evaluate_fold(MdbNet<float>& model, const TrainConfig& cfg,
                         const std::vector<Sample>& samples, const std::vector<int>& idx,
                         const std::vector<PreparedSample>& prepared, int fold_id);

/// Single-sample forward pass through the dual-head network.
MdbNet<float>::Output mdbnet_forward(MdbNet<float>& model, const Sample& sample,
                                     bool training = false);

/// Argmax class volume from [1,12,X,Y,Z] logits.
LabelVolume predict_labels(const Tensor<float>& logits3d);

/// Per-voxel multinomial logistic regression over pooled F-TSDF, visibility
/// one-hots, and normalized coordinates. Returns validation SSC mIoU.
double logistic_baseline_miou(const TrainConfig& cfg, const std::vector<Sample>& samples,
                              const std::vector<int>& train_idx,
                              const std::vector<int>& val_idx);

// --- artifacts ---------------------------------------------------------------

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports,
                    double sc_ratio);
std::vector<EvalReport> read_eval_csv(const std::string& path);

void write_steps_csv(const std::string& path, const std::vector<StepLog>& steps);

/// Aligned table in the result-table layout: SC precision/recall/IoU columns,
/// the eleven per-class IoUs, and mIoU, as mean±std over folds.
std::string render_report_table(const FoldAggregate& agg, const std::string& title);

struct FusionRow {
  std::string name;  // Early / Middle / Late
  MetricStat sc_iou, ssc_miou;
  bool overlap_flag = false;  // std intervals overlap with another row
};

/// Fusion-comparison table: "Fusion Method | SC-IoU% | SSC-mIoU%".
std::string render_fusion_table(const std::vector<FusionRow>& rows);

// --- verification ----------------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

/// Finite-difference suite over every differentiable op and both residual
/// block variants, run at f64.
std::vector<GradCheckEntry> run_gradient_suite();

}  // namespace mdb

#include "mdb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mdb {

void ConfusionMatrix::add(const ConfusionMatrix& o) {
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

ConfusionMatrix confusion_matrix(const LabelVolume& pred, const LabelVolume& gt,
                                 const VoxelMask& mask) {
  require(pred.size() == gt.size() && gt.size() == mask.size(), Err::DimensionMismatch,
          "confusion_matrix: sizes disagree");
  ConfusionMatrix cm;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    require(pred[i] < kNumClasses && gt[i] < kNumClasses, Err::LabelOutOfRange,
            "label outside [0,11]");
    ++cm.at(gt[i], pred[i]);
  }
  return cm;
}

std::vector<int64_t> select_sc_region(const LabelVolume& gt,
                                      const std::vector<VoxelState>& states,
                                      uint64_t resample_seed, double ratio) {
  require(gt.size() == states.size(), Err::DimensionMismatch,
          "visibility does not match label volume");
  require(ratio > 0.0, Err::InvalidSpec, "resample ratio must be positive");

  std::vector<int64_t> region;
  std::vector<int64_t> empties;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (states[i] != VoxelState::Occluded || gt[i] == kUnannotated) continue;
    require(gt[i] < kNumClasses, Err::LabelOutOfRange, "label outside [0,11]");
    if (gt[i] > 0)
      region.push_back(static_cast<int64_t>(i));
    else
      empties.push_back(static_cast<int64_t>(i));
  }

  int64_t quota =
      static_cast<int64_t>(std::llround(ratio * static_cast<double>(region.size())));
  if (quota >= static_cast<int64_t>(empties.size())) {
    region.insert(region.end(), empties.begin(), empties.end());
  } else {
    Rng rng(resample_seed);
    for (int64_t i = 0; i < quota; ++i) {
      int64_t j = rng.uniform_int(i, static_cast<int64_t>(empties.size()) - 1);
      std::swap(empties[i], empties[j]);
      region.push_back(empties[i]);
    }
  }
  require(!region.empty(), Err::EmptyEvaluationRegion, "no occluded voxels to evaluate");
  std::sort(region.begin(), region.end());
  return region;
}

ScCounts sc_counts(const LabelVolume& pred, const LabelVolume& gt,
                   const std::vector<int64_t>& region) {
  require(pred.size() == gt.size(), Err::DimensionMismatch, "volumes disagree");
  ScCounts c;
  for (int64_t i : region) {
    bool p = pred[i] > 0 && pred[i] != kUnannotated;
    bool g = gt[i] > 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
  }
  return c;
}

ScResult sc_from_counts(const ScCounts& c) {
  ScResult r;
  r.region_size = 0;  // caller-specific; filled by sc_eval
  if (c.tp + c.fp > 0)
    r.precision = 100.0 * c.tp / static_cast<double>(c.tp + c.fp);
  else
    r.zero_denominator = true;
  if (c.tp + c.fn > 0)
    r.recall = 100.0 * c.tp / static_cast<double>(c.tp + c.fn);
  else
    r.zero_denominator = true;
  if (c.tp + c.fp + c.fn > 0)
    r.iou = 100.0 * c.tp / static_cast<double>(c.tp + c.fp + c.fn);
  else
    r.zero_denominator = true;
  return r;
}

ScResult sc_eval(const LabelVolume& pred, const LabelVolume& gt,
                 const std::vector<VoxelState>& states, uint64_t resample_seed,
                 double ratio) {
  std::vector<int64_t> region = select_sc_region(gt, states, resample_seed, ratio);
  ScResult r = sc_from_counts(sc_counts(pred, gt, region));
  r.region_size = static_cast<int64_t>(region.size());
  return r;
}

void SscClassCounts::add(const SscClassCounts& o) {
  for (int c = 0; c < kNumClasses; ++c) {
    tp[c] += o.tp[c];
    fp[c] += o.fp[c];
    fn[c] += o.fn[c];
  }
}

SscClassCounts ssc_counts(const LabelVolume& pred, const LabelVolume& gt,
                          const VoxelMask& mask) {
  ConfusionMatrix cm = confusion_matrix(pred, gt, mask);
  SscClassCounts out;
  for (int c = 0; c < kNumClasses; ++c) {
    out.tp[c] = cm.at(c, c);
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      out.fp[c] += cm.at(o, c);
      out.fn[c] += cm.at(c, o);
    }
  }
  return out;
}

SscResult ssc_from_counts(const SscClassCounts& c) {
  SscResult r;
  double acc = 0.0;
  int defined = 0;
  for (int cls = 1; cls < kNumClasses; ++cls) {
    int64_t denom = c.tp[cls] + c.fp[cls] + c.fn[cls];
    if (denom == 0) continue;  // absent from both pred and GT
    double iou = 100.0 * c.tp[cls] / static_cast<double>(denom);
    r.per_class_iou[cls - 1] = iou;
    r.defined[cls - 1] = true;
    acc += iou;
    ++defined;
  }
  r.any_defined = defined > 0;
  r.miou = defined > 0 ? acc / defined : 0.0;
  return r;
}

SscResult ssc_eval(const LabelVolume& pred, const LabelVolume& gt, const VoxelMask& mask) {
  return ssc_from_counts(ssc_counts(pred, gt, mask));
}

VoxelMask make_ssc_mask(const std::vector<VoxelState>& states, const LabelVolume& labels) {
  require(states.size() == labels.size(), Err::DimensionMismatch,
          "visibility does not match label volume");
  VoxelMask mask(states.size(), 0);
  for (size_t i = 0; i < states.size(); ++i) {
    bool in = (states[i] == VoxelState::Surface || states[i] == VoxelState::Occluded);
    mask[i] = (in && labels[i] != kUnannotated) ? 1 : 0;
  }
  return mask;
}

std::string MetricStat::str() const { return format_mean_std(mean, stddev); }

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.1f", mean, stddev);
  return buf;
}

namespace {

MetricStat stat_of(const std::vector<double>& xs) {
  MetricStat s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
  return s;
}

}  // namespace

FoldAggregate aggregate_folds(const std::vector<EvalReport>& reports) {
  require(reports.size() >= 2, Err::TooFewFolds, "need at least two fold reports");
  FoldAggregate agg;
  agg.folds = static_cast<int>(reports.size());

  auto collect = [&](auto getter) {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(getter(r));
    return stat_of(xs);
  };
  agg.sc_precision = collect([](const EvalReport& r) { return r.sc_precision; });
  agg.sc_recall = collect([](const EvalReport& r) { return r.sc_recall; });
  agg.sc_iou = collect([](const EvalReport& r) { return r.sc_iou; });
  agg.ssc_miou = collect([](const EvalReport& r) { return r.ssc_miou; });

  for (int c = 0; c < 11; ++c) {
    std::vector<double> xs;
    for (const auto& r : reports)
      if (r.class_defined[c]) xs.push_back(r.per_class_iou[c]);
    if (xs.empty()) continue;
    agg.class_defined[c] = true;
    agg.per_class_iou[c] = stat_of(xs);
  }
  return agg;
}

}  // namespace mdb

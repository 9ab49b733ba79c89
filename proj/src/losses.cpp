#include "mdb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdb/ops.hpp"

namespace mdb {

void ClassWeights::validate() const {
  for (double w : weights)
    require(w > 0.0 && std::isfinite(w), Err::InvalidSpec, "class weight must be positive");
}

ClassWeights ClassWeights::uniform() {
  ClassWeights w;
  w.weights.fill(1.0);
  return w;
}

std::array<int64_t, kNumClasses> class_frequencies(
    const std::vector<const LabelVolume*>& labels,
    const std::vector<const VoxelMask*>& masks) {
  require(labels.size() == masks.size(), Err::DimensionMismatch,
          "one mask per label volume required");
  std::array<int64_t, kNumClasses> counts{};
  for (size_t g = 0; g < labels.size(); ++g) {
    const LabelVolume& lv = *labels[g];
    const VoxelMask& m = *masks[g];
    require(lv.size() == m.size(), Err::DimensionMismatch,
            "mask size does not match label volume");
    for (size_t i = 0; i < lv.size(); ++i) {
      if (!m[i]) continue;
      require(lv[i] < kNumClasses, Err::LabelOutOfRange,
              "label " + std::to_string(lv[i]) + " outside [0,11]");
      ++counts[lv[i]];
    }
  }
  return counts;
}

namespace {

double kmeans_sse(const std::vector<double>& values, const std::vector<int>& assign,
                  const std::vector<double>& centroids) {
  double sse = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    double d = values[i] - centroids[assign[i]];
    sse += d * d;
  }
  return sse;
}

KmeansResult kmeans_once(const std::vector<double>& values, int k, int max_iters, Rng& rng) {
  const int n = static_cast<int>(values.size());
  std::vector<double> centroids;
  centroids.reserve(k);

  // k-means++ seeding
  centroids.push_back(values[rng.uniform_int(0, n - 1)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centroids) best = std::min(best, (values[i] - c) * (values[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centroids.push_back(values[rng.uniform_int(0, n - 1)]);
      continue;
    }
    double r = rng.uniform() * total;
    int pick = n - 1;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (r < acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(values[pick]);
  }

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = std::abs(values[i] - centroids[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    for (int c = 0; c < k; ++c) {
      double acc = 0.0;
      int cnt = 0;
      for (int i = 0; i < n; ++i) {
        if (assign[i] == c) {
          acc += values[i];
          ++cnt;
        }
      }
      if (cnt > 0) centroids[c] = acc / cnt;  // empty clusters keep their centroid
    }
    if (!changed && iter > 0) break;
  }

  KmeansResult r;
  r.assignments = std::move(assign);
  r.centroids = std::move(centroids);
  r.sse = kmeans_sse(values, r.assignments, r.centroids);
  return r;
}

void canonicalize(KmeansResult& r) {
  const int k = static_cast<int>(r.centroids.size());
  std::vector<int> order(k);
  for (int i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return r.centroids[a] < r.centroids[b]; });
  std::vector<int> rank(k);
  for (int i = 0; i < k; ++i) rank[order[i]] = i;
  std::vector<double> sorted(k);
  for (int i = 0; i < k; ++i) sorted[rank[i]] = r.centroids[i];
  r.centroids = std::move(sorted);
  for (int& a : r.assignments) a = rank[a];
}

}  // namespace

KmeansResult kmeans_1d(const std::vector<double>& values, int k, int max_iters,
                       uint64_t seed, int restarts) {
  const int n = static_cast<int>(values.size());
  require(k >= 1 && k <= n, Err::InvalidK, "need 1 <= k <= n");
  require(max_iters >= 1 && restarts >= 1, Err::InvalidK, "need positive iteration counts");

  KmeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(r)));
    KmeansResult cur = kmeans_once(values, k, max_iters, rng);
    if (cur.sse < best.sse) best = std::move(cur);
  }
  canonicalize(best);
  return best;
}

ClassWeights reweight_classes(const std::array<int64_t, kNumClasses>& freqs, int k,
                              uint64_t seed) {
  std::vector<int> present;
  for (int c = 0; c < kNumClasses; ++c)
    if (freqs[c] > 0) present.push_back(c);
  require(!present.empty(), Err::AllZeroFrequencies, "all class frequencies are zero");

  // Cluster sorted log-frequencies: the result then depends only on the
  // frequency multiset, which makes the rule permutation-equivariant.
  std::vector<int> by_freq = present;
  std::stable_sort(by_freq.begin(), by_freq.end(),
                   [&](int a, int b) { return freqs[a] < freqs[b]; });
  std::vector<double> logf(by_freq.size());
  for (size_t i = 0; i < by_freq.size(); ++i)
    logf[i] = std::log(static_cast<double>(freqs[by_freq[i]]));

  const int kk = std::min<int>(k, static_cast<int>(logf.size()));
  require(k >= 1, Err::InvalidK, "k must be >= 1");
  KmeansResult km = kmeans_1d(logf, kk, 100, seed, 10);

  // median raw frequency per cluster
  std::vector<double> medians(kk, 1.0);
  for (int c = 0; c < kk; ++c) {
    std::vector<double> member;
    for (size_t i = 0; i < by_freq.size(); ++i)
      if (km.assignments[i] == c) member.push_back(static_cast<double>(freqs[by_freq[i]]));
    if (member.empty()) continue;
    std::sort(member.begin(), member.end());
    size_t m = member.size();
    medians[c] = (m % 2 == 1) ? member[m / 2] : 0.5 * (member[m / 2 - 1] + member[m / 2]);
  }

  ClassWeights out = ClassWeights::uniform();
  double mean = 0.0;
  for (size_t i = 0; i < by_freq.size(); ++i) {
    out.weights[by_freq[i]] = 1.0 / medians[km.assignments[i]];
    mean += out.weights[by_freq[i]];
  }
  mean /= static_cast<double>(present.size());
  for (int c : present) out.weights[c] /= mean;
  for (double& w : out.weights) w = std::clamp(w, 0.01, 100.0);
  out.validate();
  return out;
}

namespace {

// Unbatched logits are [12, ...spatial] of the given rank; one rank higher
// prepends the batch dimension.
template <typename T>
void check_logits(const Tensor<T>& logits, size_t labels, size_t mask, int unbatched_rank,
                  int64_t& batch, int64_t& spatial) {
  require(logits.rank() == unbatched_rank || logits.rank() == unbatched_rank + 1,
          Err::ShapeMismatch, "logits must be [12,...spatial] or [N,12,...spatial]");
  int cdim = logits.rank() == unbatched_rank ? 0 : 1;
  require(logits.dim(cdim) == kNumClasses, Err::ShapeMismatch,
          "logits must carry 12 class channels");
  batch = cdim == 1 ? logits.dim(0) : 1;
  spatial = 1;
  for (int i = cdim + 1; i < logits.rank(); ++i) spatial *= logits.dim(i);
  require(static_cast<int64_t>(labels) == batch * spatial, Err::ShapeMismatch,
          "label count does not match logits");
  if (mask != 0)
    require(static_cast<int64_t>(mask) == batch * spatial, Err::ShapeMismatch,
            "mask size does not match logits");
}

}  // namespace

template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& logits, const std::vector<uint8_t>& labels,
                      const ClassWeights& weights, const VoxelMask& mask) {
  int64_t N = 0, S = 0;
  check_logits(logits, labels.size(), mask.size(), 4, N, S);
  weights.validate();

  Tensor<T> out = Tensor<T>::make_result({1}, {logits});
  // probabilities are reused by the backward pass
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * kNumClasses * S);
  auto wsum = std::make_shared<std::vector<double>>(N, 0.0);

  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const T* lg = logits.data() + n * kNumClasses * S;
    double* pr = probs->data() + n * kNumClasses * S;
    double scene = 0.0, wacc = 0.0;
    bool any = false;
    for (int64_t s = 0; s < S; ++s) {
      if (!mask.empty() && !mask[n * S + s]) continue;
      any = true;
      uint8_t y = labels[n * S + s];
      require(y < kNumClasses, Err::LabelOutOfRange, "masked-in voxel with invalid label");
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < kNumClasses; ++c)
        mx = std::max(mx, static_cast<double>(lg[c * S + s]));
      double lse = 0.0;
      for (int c = 0; c < kNumClasses; ++c) lse += std::exp(lg[c * S + s] - mx);
      lse = mx + std::log(lse);
      for (int c = 0; c < kNumClasses; ++c)
        pr[c * S + s] = std::exp(lg[c * S + s] - lse);
      double w = weights.weights[y];
      scene += w * (lse - static_cast<double>(lg[y * S + s]));
      wacc += w;
    }
    require(any, Err::EmptyMask, "weighted_ce: no masked-in voxels");
    (*wsum)[n] = wacc;
    total += scene / wacc;
  }
  out.data()[0] = static_cast<T>(total / N);

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* ln = logits.node();
    auto labels_copy = std::make_shared<std::vector<uint8_t>>(labels);
    auto mask_copy = std::make_shared<VoxelMask>(mask);
    ClassWeights w = weights;
    out.node()->backward = [=]() {
      if (ln->grad.empty()) ln->grad.assign(ln->values.size(), T(0));
      const double g = on->grad[0];
      for (int64_t n = 0; n < N; ++n) {
        const double* pr = probs->data() + n * kNumClasses * S;
        T* gl = ln->grad.data() + n * kNumClasses * S;
        const double norm = g / (N * (*wsum)[n]);
        for (int64_t s = 0; s < S; ++s) {
          if (!mask_copy->empty() && !(*mask_copy)[n * S + s]) continue;
          uint8_t y = (*labels_copy)[n * S + s];
          const double wv = w.weights[y];
          for (int c = 0; c < kNumClasses; ++c) {
            double p = pr[c * S + s];
            double delta = (c == y) ? 1.0 : 0.0;
            gl[c * S + s] += static_cast<T>(norm * wv * (p - delta));
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> smooth_ce(const Tensor<T>& logits, const std::vector<uint8_t>& labels,
                    double smoothing, const std::vector<uint8_t>& ignore) {
  require(smoothing >= 0.0 && smoothing < 1.0, Err::InvalidSpec, "smoothing in [0,1)");
  int64_t N = 0, S = 0;
  check_logits(logits, labels.size(), ignore.size(), 3, N, S);

  Tensor<T> out = Tensor<T>::make_result({1}, {logits});
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * kNumClasses * S);

  const double unif = smoothing / kNumClasses;
  double total = 0.0;
  int64_t count = 0;
  for (int64_t n = 0; n < N; ++n) {
    const T* lg = logits.data() + n * kNumClasses * S;
    double* pr = probs->data() + n * kNumClasses * S;
    for (int64_t s = 0; s < S; ++s) {
      if (!ignore.empty() && ignore[n * S + s]) continue;
      uint8_t y = labels[n * S + s];
      require(y < kNumClasses, Err::LabelOutOfRange, "pixel label outside [0,11]");
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < kNumClasses; ++c)
        mx = std::max(mx, static_cast<double>(lg[c * S + s]));
      double lse = 0.0;
      for (int c = 0; c < kNumClasses; ++c) lse += std::exp(lg[c * S + s] - mx);
      lse = mx + std::log(lse);
      double dot = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        pr[c * S + s] = std::exp(lg[c * S + s] - lse);
        double t = unif + ((c == y) ? (1.0 - smoothing) : 0.0);
        dot += t * static_cast<double>(lg[c * S + s]);
      }
      total += lse - dot;
      ++count;
    }
  }
  require(count > 0, Err::EmptyMask, "smooth_ce: every pixel ignored");
  out.data()[0] = static_cast<T>(total / count);

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* ln = logits.node();
    auto labels_copy = std::make_shared<std::vector<uint8_t>>(labels);
    auto ignore_copy = std::make_shared<std::vector<uint8_t>>(ignore);
    const int64_t M = count;
    out.node()->backward = [=]() {
      if (ln->grad.empty()) ln->grad.assign(ln->values.size(), T(0));
      const double g = on->grad[0] / M;
      for (int64_t n = 0; n < N; ++n) {
        const double* pr = probs->data() + n * kNumClasses * S;
        T* gl = ln->grad.data() + n * kNumClasses * S;
        for (int64_t s = 0; s < S; ++s) {
          if (!ignore_copy->empty() && (*ignore_copy)[n * S + s]) continue;
          uint8_t y = (*labels_copy)[n * S + s];
          for (int c = 0; c < kNumClasses; ++c) {
            double t = unif + ((c == y) ? (1.0 - smoothing) : 0.0);
            gl[c * S + s] += static_cast<T>(g * (pr[c * S + s] - t));
          }
        }
      }
    };
  }
  return out;
}

VoxelMask resample_mask(const LabelVolume& labels, const std::vector<VoxelState>& states,
                        double ratio, uint64_t seed) {
  require(labels.size() == states.size(), Err::DimensionMismatch,
          "visibility does not match label volume");
  require(ratio > 0.0, Err::InvalidSpec, "resample ratio must be positive");

  VoxelMask mask(labels.size(), 0);
  std::vector<int64_t> empties;
  int64_t occupied = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (states[i] == VoxelState::OutsideFrustum || labels[i] == kUnannotated) continue;
    if (labels[i] == 0) {
      empties.push_back(static_cast<int64_t>(i));
    } else {
      require(labels[i] < kNumClasses, Err::LabelOutOfRange, "label outside [0,11]");
      mask[i] = 1;
      ++occupied;
    }
  }

  int64_t quota = static_cast<int64_t>(std::llround(ratio * static_cast<double>(occupied)));
  if (quota >= static_cast<int64_t>(empties.size())) {
    for (int64_t i : empties) mask[i] = 1;
    return mask;
  }
  // partial Fisher-Yates: the first `quota` entries are a uniform sample
  Rng rng(seed);
  for (int64_t i = 0; i < quota; ++i) {
    int64_t j = rng.uniform_int(i, static_cast<int64_t>(empties.size()) - 1);
    std::swap(empties[i], empties[j]);
    mask[empties[i]] = 1;
  }
  return mask;
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& l_ss, const Tensor<T>& l_ssc, double lambda) {
  require(l_ss.numel() == 1 && l_ssc.numel() == 1, Err::ShapeMismatch,
          "combined_loss expects scalar terms");
  require(lambda >= 0.0, Err::InvalidSpec, "lambda must be >= 0");
  require(std::isfinite(static_cast<double>(l_ss.item())) &&
              std::isfinite(static_cast<double>(l_ssc.item())),
          Err::NonFinite, "loss terms must be finite");
  return add(scale(l_ss, static_cast<T>(lambda)), l_ssc);
}

VoxelMask make_loss_mask(const LabelVolume& labels, const std::vector<VoxelState>& states,
                         WeightingMode mode, double resample_ratio, uint64_t seed) {
  if (mode == WeightingMode::Resample)
    return resample_mask(labels, states, resample_ratio, seed);
  require(labels.size() == states.size(), Err::DimensionMismatch,
          "visibility does not match label volume");
  VoxelMask mask(labels.size(), 0);
  for (size_t i = 0; i < labels.size(); ++i)
    mask[i] = (states[i] != VoxelState::OutsideFrustum && labels[i] != kUnannotated) ? 1 : 0;
  return mask;
}

#define MDB_INSTANTIATE_LOSSES(T)                                                      \
  template Tensor<T> weighted_ce(const Tensor<T>&, const std::vector<uint8_t>&,        \
                                 const ClassWeights&, const VoxelMask&);               \
  template Tensor<T> smooth_ce(const Tensor<T>&, const std::vector<uint8_t>&, double,  \
                               const std::vector<uint8_t>&);                           \
  template Tensor<T> combined_loss(const Tensor<T>&, const Tensor<T>&, double);

MDB_INSTANTIATE_LOSSES(float)
MDB_INSTANTIATE_LOSSES(double)
#undef MDB_INSTANTIATE_LOSSES

}  // namespace mdb

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdb/data.hpp"
#include "mdb/gradcheck.hpp"
#include "mdb/losses.hpp"
#include "mdb/ops.hpp"

using namespace mdb;

namespace {

// optimal 1-D k-means objective by dynamic programming over sorted values
double optimal_sse(std::vector<double> v, int k) {
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  std::vector<double> s1(n + 1, 0), s2(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + v[i];
    s2[i + 1] = s2[i] + v[i] * v[i];
  }
  auto cost = [&](int a, int b) {  // [a, b)
    double cnt = b - a;
    double sum = s1[b] - s1[a];
    return (s2[b] - s2[a]) - sum * sum / cnt;
  };
  std::vector<std::vector<double>> dp(k + 1,
                                      std::vector<double>(n + 1, 1e300));
  dp[0][0] = 0.0;
  for (int j = 1; j <= k; ++j)
    for (int i = 1; i <= n; ++i)
      for (int a = j - 1; a < i; ++a)
        dp[j][i] = std::min(dp[j][i], dp[j - 1][a] + cost(a, i));
  return dp[k][n];
}

double hand_lse(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double acc = 0;
  for (double l : logits) acc += std::exp(l - mx);
  return mx + std::log(acc);
}

}  // namespace

TEST_CASE("class_frequencies counts masked voxels exactly") {
  LabelVolume grid(50, 0);
  VoxelMask mask(50, 1);
  auto counts = class_frequencies({&grid}, {&mask});
  CHECK(counts[0] == 50);
  for (int c = 1; c < kNumClasses; ++c) CHECK(counts[c] == 0);

  SUBCASE("masked-out voxels are not counted") {
    mask[0] = mask[1] = 0;
    auto counts2 = class_frequencies({&grid}, {&mask});
    CHECK(counts2[0] == 48);
  }

  SUBCASE("out-of-range labels are rejected") {
    grid[3] = 12;
    CHECK_THROWS_AS(class_frequencies({&grid}, {&mask}), Error);
  }
}

TEST_CASE("class_frequencies agrees with the generator's bookkeeping") {
  for (uint64_t seed : {11ull, 12ull}) {
    GeneratedScene scene = generate_scene(SyntheticSceneSpec::skewed_tier(), seed);
    VoxelMask all(scene.sample.gt_labels.size(), 1);
    auto counts = class_frequencies({&scene.sample.gt_labels}, {&all});
    for (int c = 0; c < kNumClasses; ++c) REQUIRE(counts[c] == scene.class_counts[c]);
  }
}

TEST_CASE("kmeans_1d trivial configurations") {
  KmeansResult r = kmeans_1d({1.0, 2.0, 5.0}, 3, 50, 1);
  CHECK(r.sse == doctest::Approx(0.0));

  KmeansResult r2 = kmeans_1d({1.0, 1.1, 10.0, 10.2}, 2, 50, 1);
  REQUIRE(r2.centroids.size() == 2);
  CHECK(r2.centroids[0] == doctest::Approx(1.05).epsilon(1e-12));
  CHECK(r2.centroids[1] == doctest::Approx(10.1).epsilon(1e-12));
  CHECK(r2.assignments == std::vector<int>{0, 0, 1, 1});

  KmeansResult r3 = kmeans_1d({4.0, 4.0, 4.0, 4.0}, 2, 50, 1);
  for (double c : r3.centroids) CHECK(c == doctest::Approx(4.0));

  CHECK_THROWS_AS(kmeans_1d({1.0}, 2, 50, 1), Error);
  CHECK_THROWS_AS(kmeans_1d({1.0, 2.0}, 0, 50, 1), Error);
}

TEST_CASE("kmeans_1d with restarts matches the optimal DP partition") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    int n = static_cast<int>(rng.uniform_int(2, 8));
    int k = static_cast<int>(rng.uniform_int(1, std::min(n, 3)));
    std::vector<double> values(n);
    for (auto& v : values) v = rng.uniform(-5, 5);
    KmeansResult r = kmeans_1d(values, k, 100, trial, 12);
    double best = optimal_sse(values, k);
    REQUIRE(r.sse == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("reweight_classes fixed points") {
  std::array<int64_t, kNumClasses> uniform{};
  uniform.fill(500);
  ClassWeights w = reweight_classes(uniform, 3, 1);
  for (double x : w.weights) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));

  ClassWeights w1 = reweight_classes(uniform, 1, 1);
  for (double x : w1.weights) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));

  std::array<int64_t, kNumClasses> zeros{};
  CHECK_THROWS_AS(reweight_classes(zeros, 3, 1), Error);
}

TEST_CASE("reweight_classes follows the declared rule on two groups") {
  std::array<int64_t, kNumClasses> freqs{};
  for (int c = 0; c < 6; ++c) freqs[c] = 10000;
  for (int c = 6; c < 12; ++c) freqs[c] = 100;
  ClassWeights w = reweight_classes(freqs, 2, 9);

  // hand evaluation: cluster medians 10000 and 100, inverse, mean-normalized
  double w_common = 1.0 / 10000.0, w_rare = 1.0 / 100.0;
  double mean = (6 * w_common + 6 * w_rare) / 12.0;
  w_common /= mean;
  w_rare /= mean;
  for (int c = 0; c < 6; ++c) CHECK(w.weights[c] == doctest::Approx(w_common).epsilon(1e-12));
  for (int c = 6; c < 12; ++c) CHECK(w.weights[c] == doctest::Approx(w_rare).epsilon(1e-12));
  CHECK(w.weights[6] / w.weights[0] == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("reweight_classes is permutation-equivariant") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<int64_t, kNumClasses> freqs{};
    for (auto& f : freqs) f = rng.uniform_int(1, 100000);
    std::array<int, kNumClasses> perm{};
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = kNumClasses - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(0, i)]);

    std::array<int64_t, kNumClasses> permuted{};
    for (int c = 0; c < kNumClasses; ++c) permuted[perm[c]] = freqs[c];

    ClassWeights a = reweight_classes(freqs, 3, 42);
    ClassWeights b = reweight_classes(permuted, 3, 42);
    for (int c = 0; c < kNumClasses; ++c)
      REQUIRE(b.weights[perm[c]] == doctest::Approx(a.weights[c]).epsilon(1e-12));
  }
}

TEST_CASE("rarer frequency group gets the strictly larger weight") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<int64_t, kNumClasses> freqs{};
    int64_t common = rng.uniform_int(50000, 200000);
    int64_t rare = rng.uniform_int(10, 200);
    for (int c = 0; c < kNumClasses; ++c) freqs[c] = (c < 9) ? common : rare;
    ClassWeights w = reweight_classes(freqs, 2, trial);
    CHECK(w.weights[10] > w.weights[0]);
  }
}

TEST_CASE("weighted_ce equals smooth_ce with unit weights and zero smoothing") {
  Rng rng(7);
  Tensor<double> logits = Tensor<double>::randn({kNumClasses, 2, 3, 2}, rng);
  std::vector<uint8_t> labels(12);
  for (size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<uint8_t>(rng.uniform_int(0, 11));
  VoxelMask mask(12, 1);

  double a = weighted_ce(logits, labels, ClassWeights::uniform(), mask).item();
  Tensor<double> logits2d = reshape(logits, {kNumClasses, 6, 2});
  double b = smooth_ce(logits2d, labels, 0.0, {}).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("weighted_ce spec examples") {
  SUBCASE("confident correct predictions drive the loss to zero") {
    std::vector<double> lv(kNumClasses * 1 * 1 * 1, 0.0);
    lv[4] = 40.0;  // huge margin for class 4
    Tensor<double> logits = Tensor<double>::from({kNumClasses, 1, 1, 1}, lv);
    std::vector<uint8_t> labels{4};
    double loss = weighted_ce(logits, labels, ClassWeights::uniform(), {1}).item();
    CHECK(loss < 1e-12);
  }

  SUBCASE("two-voxel hand computation") {
    Rng rng(8);
    std::vector<double> lv(kNumClasses * 2);
    for (auto& v : lv) v = rng.normal();
    Tensor<double> logits = Tensor<double>::from({kNumClasses, 1, 1, 2}, lv);
    std::vector<uint8_t> labels{3, 7};
    ClassWeights w = ClassWeights::uniform();
    w.weights[3] = 2.0;
    w.weights[7] = 0.5;
    double got = weighted_ce(logits, labels, w, {1, 1}).item();

    std::vector<double> v0(kNumClasses), v1(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      v0[c] = lv[c * 2 + 0];
      v1[c] = lv[c * 2 + 1];
    }
    double expect = (2.0 * (hand_lse(v0) - v0[3]) + 0.5 * (hand_lse(v1) - v1[7])) / 2.5;
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("empty mask is an error") {
    Tensor<double> logits = Tensor<double>::zeros({kNumClasses, 1, 1, 2});
    CHECK_THROWS_AS(weighted_ce(logits, {0, 0}, ClassWeights::uniform(), {0, 0}), Error);
  }

  SUBCASE("gradient passes finite differences") {
    Rng rng(9);
    Tensor<double> x = Tensor<double>::randn({kNumClasses, 2, 2, 1}, rng);
    std::vector<uint8_t> labels{1, 5, 0, 11};
    ClassWeights w = ClassWeights::uniform();
    w.weights[5] = 3.0;
    double err = grad_check(
        [&](const Tensor<double>& t) { return weighted_ce(t, labels, w, {1, 1, 0, 1}); },
        x);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("smooth_ce spec examples") {
  SUBCASE("zero smoothing reduces to standard cross-entropy") {
    Rng rng(10);
    std::vector<double> lv(kNumClasses * 4);
    for (auto& v : lv) v = rng.normal();
    Tensor<double> logits = Tensor<double>::from({kNumClasses, 2, 2}, lv);
    std::vector<uint8_t> labels{0, 3, 6, 9};
    double got = smooth_ce(logits, labels, 0.0, {}).item();
    double expect = 0;
    for (int s = 0; s < 4; ++s) {
      std::vector<double> col(kNumClasses);
      for (int c = 0; c < kNumClasses; ++c) col[c] = lv[c * 4 + s];
      expect += hand_lse(col) - col[labels[s]];
    }
    expect /= 4;
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("uniform logits cost log 12 regardless of labels and smoothing") {
    Tensor<double> logits = Tensor<double>::full({kNumClasses, 1, 3}, 2.5);
    for (double s : {0.0, 0.1, 0.5}) {
      double loss = smooth_ce(logits, {0, 5, 11}, s, {}).item();
      CHECK(loss == doctest::Approx(std::log(12.0)).epsilon(1e-12));
    }
  }

  SUBCASE("single-pixel hand computation with smoothing 0.1") {
    Rng rng(11);
    std::vector<double> lv(kNumClasses);
    for (auto& v : lv) v = rng.normal();
    Tensor<double> logits = Tensor<double>::from({kNumClasses, 1, 1}, lv);
    double got = smooth_ce(logits, {7}, 0.1, {}).item();
    double lse = hand_lse(lv);
    double dot = 0;
    for (int c = 0; c < kNumClasses; ++c)
      dot += (0.1 / 12 + (c == 7 ? 0.9 : 0.0)) * lv[c];
    CHECK(got == doctest::Approx(lse - dot).epsilon(1e-12));
  }

  SUBCASE("invalid smoothing is rejected") {
    Tensor<double> logits = Tensor<double>::zeros({kNumClasses, 1, 1});
    CHECK_THROWS_AS(smooth_ce(logits, {0}, 1.0, {}), Error);
  }
}

TEST_CASE("resample_mask obeys quota, determinism, and exclusions") {
  const int64_t occupied = 100, empty = 1000;
  LabelVolume labels(occupied + empty + 50, 0);
  std::vector<VoxelState> states(labels.size(), VoxelState::Occluded);
  for (int64_t i = 0; i < occupied; ++i) labels[i] = 5;
  for (size_t i = labels.size() - 50; i < labels.size(); ++i)
    states[i] = VoxelState::OutsideFrustum;  // never selectable

  VoxelMask mask = resample_mask(labels, states, 2.0, 17);
  int64_t occ_in = 0, empty_in = 0, outside_in = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    if (states[i] == VoxelState::OutsideFrustum) ++outside_in;
    else if (labels[i] > 0) ++occ_in;
    else ++empty_in;
  }
  CHECK(occ_in == occupied);
  CHECK(empty_in == 200);
  CHECK(outside_in == 0);

  SUBCASE("same seed gives the identical mask") {
    VoxelMask again = resample_mask(labels, states, 2.0, 17);
    CHECK(mask == again);
  }

  SUBCASE("quota beyond supply includes every empty voxel") {
    LabelVolume small(150, 0);
    std::vector<VoxelState> st(150, VoxelState::Occluded);
    for (int i = 0; i < 100; ++i) small[i] = 3;
    VoxelMask m = resample_mask(small, st, 2.0, 1);
    int64_t total = 0;
    for (uint8_t x : m) total += x;
    CHECK(total == 150);
  }
}

TEST_CASE("combined loss arithmetic and gradient flow") {
  Tensor<double> l_ss = Tensor<double>::scalar(0.7, true);
  Tensor<double> l_ssc = Tensor<double>::scalar(1.3, true);
  CHECK(combined_loss(l_ss, l_ssc, 0.0).item() == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(combined_loss(l_ss, l_ssc, 1.0).item() == doctest::Approx(2.0).epsilon(1e-15));

  Tensor<double> a = Tensor<double>::scalar(2.0, true);
  Tensor<double> b = Tensor<double>::scalar(1.0, true);
  Tensor<double> c = combined_loss(a, b, 0.5);
  CHECK(c.item() == doctest::Approx(2.0).epsilon(1e-15));
  backward(c);
  CHECK(a.grad()[0] == doctest::Approx(0.5));
  CHECK(b.grad()[0] == doctest::Approx(1.0));

  Tensor<double> bad = Tensor<double>::scalar(std::nan(""));
  CHECK_THROWS_AS(combined_loss(bad, b, 1.0), Error);
}

TEST_CASE("make_loss_mask excludes outside-frustum and sentinel voxels") {
  LabelVolume labels{1, 0, 255, 4};
  std::vector<VoxelState> states{VoxelState::Surface, VoxelState::VisibleEmpty,
                                 VoxelState::Occluded, VoxelState::OutsideFrustum};
  VoxelMask m = make_loss_mask(labels, states, WeightingMode::KMeansReweight, 2.0, 1);
  CHECK(m == VoxelMask{1, 1, 0, 0});
}

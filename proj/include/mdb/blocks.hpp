#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdb/geometry.hpp"
#include "mdb/ops.hpp"
#include "mdb/optim.hpp"

namespace mdb {

/// Convolution layer: He fan-in normal init for weights, zero biases. PCR and
/// downsampling convolutions run bias-free (their blocks normalize first).
template <typename T>
struct Conv3dLayer {
  Tensor<T> w;  // [K,C,kd,kh,kw]
  Tensor<T> b;  // [K] or undefined
  Conv3dSpec spec;

  static Conv3dLayer create(int in_ch, int out_ch, std::array<int, 3> kernel,
                            std::array<int, 3> stride, std::array<int, 3> pad, bool bias,
                            Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, w, b, spec); }
  void collect(const std::string& prefix, std::vector<Param<T>>& params) const;
  int64_t weight_count() const { return w.numel(); }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;

  static BatchNormLayer create(int channels);
  Tensor<T> forward(const Tensor<T>& x, bool training) const;
  void collect(const std::string& prefix, std::vector<Param<T>>& params,
               std::vector<std::pair<std::string, Tensor<T>>>& buffers) const;
};

enum class BlockVariant { PreAct, Itrm };

/// Full pre-activation residual block of two 3x3x3 convolutions:
///   x_out = identity(x) + conv2(relu(bn2(conv1(relu(bn1(x))))))
/// The identity path is x itself (PreAct) or tanh(x) (Itrm). Input and output
/// channel counts are equal.
template <typename T>
struct ResidualBlock {
  BatchNormLayer<T> bn1, bn2;
  Conv3dLayer<T> conv1, conv2;
  int channels = 0;

  static ResidualBlock create(int channels, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, BlockVariant variant, bool training) const;
  Tensor<T> residual_path(const Tensor<T>& x, bool training) const;
  void collect(const std::string& prefix, std::vector<Param<T>>& params,
               std::vector<std::pair<std::string, Tensor<T>>>& buffers) const;
  int64_t conv_weight_count() const;
};

/// Planar convolution residual block: three sequential pre-activated planar
/// convolutions with kernels (1,3,3), (3,1,3), (3,3,1); the first carries the
/// stride. Projection shortcut (1x1x1) when the stride or channel count
/// changes. Strictly fewer convolution weights than a dense residual block of
/// equal width.
template <typename T>
struct PcrBlock {
  int in_channels = 0, out_channels = 0, stride = 1;
  BatchNormLayer<T> bn1, bn2, bn3;
  Conv3dLayer<T> conv_a, conv_b, conv_c;
  std::optional<Conv3dLayer<T>> shortcut;

  static PcrBlock create(int in_ch, int out_ch, int stride, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) const;
  void collect(const std::string& prefix, std::vector<Param<T>>& params,
               std::vector<std::pair<std::string, Tensor<T>>>& buffers) const;
  int64_t planar_weight_count() const;
};

enum class FusionStrategy { Early, Mid, Late };

const char* fusion_name(FusionStrategy f);
FusionStrategy fusion_from_name(const std::string& name);
const char* block_variant_name(BlockVariant v);
BlockVariant block_variant_from_name(const std::string& name);

/// Run the projected feature volume through the strategy's PCR chain and add
/// it elementwise to the stream. Throws ShapeMismatch when the downsampled
/// features do not match the stream.
template <typename T>
Tensor<T> fuse(const Tensor<T>& stream, const Tensor<T>& features,
               const std::vector<PcrBlock<T>>& pcr, bool training);

template <typename T>
Tensor<T> fuse(const Tensor<T>& stream, const VoxelGrid& features,
               const std::vector<PcrBlock<T>>& pcr, bool training);

struct MdbNetConfig {
  std::array<int, 3> grid_dims{24, 16, 24};
  int class_count = 12;
  FusionStrategy fusion = FusionStrategy::Late;
  BlockVariant block_variant = BlockVariant::Itrm;
  std::array<int, 3> widths{16, 32, 64};
  int feature_channels = 16;
  int image_width = 64, image_height = 48;
  static constexpr int scale_factor = 4;  // input-to-output spatial ratio

  std::array<int, 3> output_dims() const;
  void validate() const;
};

/// Same-resolution 2D stand-in for a pretrained segmentation backbone: three
/// 3x3 conv+relu layers and a 1x1 logits head over the shared trunk.
template <typename T>
struct SemanticHead {
  Conv3dLayer<T> c1, c2, c3, head;
  int feature_channels = 16;

  static SemanticHead create(int feature_channels, Rng& rng);
  // rgb [N,3,H,W] in [0,1] -> features [N,C,H,W], logits [N,12,H,W]
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& rgb) const;
  void collect(const std::string& prefix, std::vector<Param<T>>& params) const;
};

/// Loads precomputed 2D feature/logit maps instead of running the trainable
/// head; throws ProviderFileMissing when a map file is absent.
struct FileFeatureProvider {
  std::string directory;
  std::pair<Image, Image> load(const std::string& sample_id) const;
};

/// Dual-head completion network. The 3D branch reduces the grid by 4 with two
/// strided stem convolutions, runs a two-stage encoder to the bottleneck,
/// decodes back to the 1/4 grid with additive skips, and classifies per
/// voxel. Projected RGB features join the stream at the input (early), the
/// bottleneck (mid), or ahead of the classifier (late).
template <typename T>
class MdbNet {
 public:
  MdbNet(const MdbNetConfig& cfg, uint64_t seed);

  struct Output {
    Tensor<T> logits3d;  // [N,12,X/4,Y/4,Z/4]
    Tensor<T> logits2d;  // [N,12,H,W]
  };

  Output forward(const Tensor<T>& ftsdf, const Tensor<T>& rgb,
                 const std::vector<const ProjectionMap*>& maps, bool training);

  // File-provider path: 2D maps arrive precomputed and constant.
  Output forward_precomputed(const Tensor<T>& ftsdf, const Tensor<T>& features2d,
                             const Tensor<T>& logits2d,
                             const std::vector<const ProjectionMap*>& maps, bool training);

  std::vector<Param<T>> params_3d() const;  // 3D branch including fusion PCRs
  std::vector<Param<T>> params_2d() const;  // semantic head
  std::vector<Param<T>> params_all() const;
  std::vector<std::pair<std::string, Tensor<T>>> buffers() const;
  std::vector<std::pair<std::string, Tensor<T>>> state_dict() const;  // params + buffers

  const MdbNetConfig& config() const { return cfg_; }
  std::array<int, 3> bottleneck_dims() const { return bottleneck_dims_; }
  const std::vector<PcrBlock<T>>& fusion_chain() const { return fusion_pcr_; }
  const SemanticHead<T>& semantic_head() const { return head2d_; }

 private:
  Tensor<T> run_3d(const Tensor<T>& ftsdf, const Tensor<T>& features3d, bool training);

  MdbNetConfig cfg_;
  SemanticHead<T> head2d_;
  Conv3dLayer<T> stem_, pre1_, pre2_;
  ResidualBlock<T> enc1_, enc2_, bottleneck_, dec1_, dec2_, post_;
  Conv3dLayer<T> down1_, down2_, up1_, up2_;
  Conv3dLayer<T> classifier_;
  std::vector<PcrBlock<T>> fusion_pcr_;
  std::array<int, 3> quarter_dims_{}, eighth_dims_{}, bottleneck_dims_{};
};

/// Builds the PCR chain a fusion strategy needs to bring full-resolution
/// features to the target dims/channels (stride-2 stages; early fusion uses a
/// single stride-1 stage).
template <typename T>
std::vector<PcrBlock<T>> make_fusion_chain(int feature_channels, int target_channels,
                                           std::array<int, 3> full_dims,
                                           std::array<int, 3> target_dims, Rng& rng);

/// Majority-vote pooling of a full-resolution label volume into factor^3
/// cells; ties go to the smallest label value.
std::vector<uint8_t> pool_labels(const std::vector<uint8_t>& labels,
                                 std::array<int, 3> dims, int factor);

/// Majority-vote pooling of visibility states; ties go to the smallest state.
std::vector<VoxelState> pool_visibility(const std::vector<VoxelState>& states,
                                        std::array<int, 3> dims, int factor);

#define MDB_EXTERN_BLOCKS(T)                                                        \
  extern template struct Conv3dLayer<T>;                                            \
  extern template struct BatchNormLayer<T>;                                         \
  extern template struct ResidualBlock<T>;                                          \
  extern template struct PcrBlock<T>;                                               \
  extern template struct SemanticHead<T>;                                           \
  extern template class MdbNet<T>;                                                  \
  extern template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&,                \
                                 const std::vector<PcrBlock<T>>&, bool);            \
  extern template Tensor<T> fuse(const Tensor<T>&, const VoxelGrid&,                \
                                 const std::vector<PcrBlock<T>>&, bool);            \
  extern template std::vector<PcrBlock<T>> make_fusion_chain(int, int,              \
                                                             std::array<int, 3>,    \
                                                             std::array<int, 3>, Rng&);

MDB_EXTERN_BLOCKS(float)
MDB_EXTERN_BLOCKS(double)
#undef MDB_EXTERN_BLOCKS

}  // namespace mdb

#include "mdb/blocks.hpp"

#include <cmath>
#include <filesystem>

#include "mdb/io.hpp"

namespace mdb {

template <typename T>
Conv3dLayer<T> Conv3dLayer<T>::create(int in_ch, int out_ch, std::array<int, 3> kernel,
                                      std::array<int, 3> stride, std::array<int, 3> pad,
                                      bool bias, Rng& rng) {
  Conv3dLayer layer;
  int64_t fan_in = static_cast<int64_t>(in_ch) * kernel[0] * kernel[1] * kernel[2];
  T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  layer.w = Tensor<T>::randn({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, rng, stddev,
                             true);
  if (bias) layer.b = Tensor<T>::zeros({out_ch}, true);
  layer.spec.stride = stride;
  layer.spec.pad = pad;
  return layer;
}

template <typename T>
void Conv3dLayer<T>::collect(const std::string& prefix, std::vector<Param<T>>& params) const {
  params.push_back({w, prefix + ".w", false});
  if (b.defined()) params.push_back({b, prefix + ".b", true});  // biases skip weight decay
}

template <typename T>
BatchNormLayer<T> BatchNormLayer<T>::create(int channels) {
  BatchNormLayer layer;
  layer.gamma = Tensor<T>::full({channels}, T(1), true);
  layer.beta = Tensor<T>::zeros({channels}, true);
  layer.running_mean = Tensor<T>::zeros({channels});
  layer.running_var = Tensor<T>::full({channels}, T(1));
  return layer;
}

template <typename T>
Tensor<T> BatchNormLayer<T>::forward(const Tensor<T>& x, bool training) const {
  Tensor<T> rm = running_mean, rv = running_var;  // handles share storage
  return batch_norm(x, gamma, beta, rm, rv, training);
}

template <typename T>
void BatchNormLayer<T>::collect(const std::string& prefix, std::vector<Param<T>>& params,
                                std::vector<std::pair<std::string, Tensor<T>>>& buffers) const {
  params.push_back({gamma, prefix + ".gamma", true});
  params.push_back({beta, prefix + ".beta", true});
  buffers.emplace_back(prefix + ".running_mean", running_mean);
  buffers.emplace_back(prefix + ".running_var", running_var);
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(int channels, Rng& rng) {
  ResidualBlock block;
  block.channels = channels;
  block.bn1 = BatchNormLayer<T>::create(channels);
  block.bn2 = BatchNormLayer<T>::create(channels);
  block.conv1 =
      Conv3dLayer<T>::create(channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  block.conv2 =
      Conv3dLayer<T>::create(channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  return block;
}

template <typename T>
Tensor<T> ResidualBlock<T>::residual_path(const Tensor<T>& x, bool training) const {
  Tensor<T> h = conv1.forward(relu(bn1.forward(x, training)));
  return conv2.forward(relu(bn2.forward(h, training)));
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, BlockVariant variant,
                                    bool training) const {
  require(x.rank() == 5 && x.dim(1) == channels, Err::ShapeMismatch,
          "residual block channel mismatch");
  Tensor<T> identity = (variant == BlockVariant::Itrm) ? mdb::tanh(x) : x;
  return add(identity, residual_path(x, training));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, std::vector<Param<T>>& params,
                               std::vector<std::pair<std::string, Tensor<T>>>& buffers) const {
  bn1.collect(prefix + ".bn1", params, buffers);
  bn2.collect(prefix + ".bn2", params, buffers);
  conv1.collect(prefix + ".conv1", params);
  conv2.collect(prefix + ".conv2", params);
}

template <typename T>
int64_t ResidualBlock<T>::conv_weight_count() const {
  return conv1.weight_count() + conv2.weight_count();
}

template <typename T>
PcrBlock<T> PcrBlock<T>::create(int in_ch, int out_ch, int stride, Rng& rng) {
  PcrBlock block;
  block.in_channels = in_ch;
  block.out_channels = out_ch;
  block.stride = stride;
  block.bn1 = BatchNormLayer<T>::create(in_ch);
  block.bn2 = BatchNormLayer<T>::create(out_ch);
  block.bn3 = BatchNormLayer<T>::create(out_ch);
  // one unit kernel dimension per planar convolution
  block.conv_a = Conv3dLayer<T>::create(in_ch, out_ch, {1, 3, 3}, {stride, stride, stride},
                                        {0, 1, 1}, false, rng);
  block.conv_b =
      Conv3dLayer<T>::create(out_ch, out_ch, {3, 1, 3}, {1, 1, 1}, {1, 0, 1}, false, rng);
  block.conv_c =
      Conv3dLayer<T>::create(out_ch, out_ch, {3, 3, 1}, {1, 1, 1}, {1, 1, 0}, false, rng);
  if (stride != 1 || in_ch != out_ch) {
    block.shortcut = Conv3dLayer<T>::create(in_ch, out_ch, {1, 1, 1},
                                            {stride, stride, stride}, {0, 0, 0}, false, rng);
  }
  return block;
}

template <typename T>
Tensor<T> PcrBlock<T>::forward(const Tensor<T>& x, bool training) const {
  require(x.rank() == 5 && x.dim(1) == in_channels, Err::ShapeMismatch,
          "PCR block channel mismatch");
  Tensor<T> h = conv_a.forward(relu(bn1.forward(x, training)));
  h = conv_b.forward(relu(bn2.forward(h, training)));
  h = conv_c.forward(relu(bn3.forward(h, training)));
  Tensor<T> s = shortcut ? shortcut->forward(x) : x;
  return add(s, h);
}

template <typename T>
void PcrBlock<T>::collect(const std::string& prefix, std::vector<Param<T>>& params,
                          std::vector<std::pair<std::string, Tensor<T>>>& buffers) const {
  bn1.collect(prefix + ".bn1", params, buffers);
  bn2.collect(prefix + ".bn2", params, buffers);
  bn3.collect(prefix + ".bn3", params, buffers);
  conv_a.collect(prefix + ".conv_a", params);
  conv_b.collect(prefix + ".conv_b", params);
  conv_c.collect(prefix + ".conv_c", params);
  if (shortcut) shortcut->collect(prefix + ".shortcut", params);
}

template <typename T>
int64_t PcrBlock<T>::planar_weight_count() const {
  return conv_a.weight_count() + conv_b.weight_count() + conv_c.weight_count();
}

const char* fusion_name(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::Early: return "early";
    case FusionStrategy::Mid: return "mid";
    case FusionStrategy::Late: return "late";
  }
  return "?";
}

FusionStrategy fusion_from_name(const std::string& name) {
  if (name == "early") return FusionStrategy::Early;
  if (name == "mid") return FusionStrategy::Mid;
  if (name == "late") return FusionStrategy::Late;
  fail(Err::InvalidSpec, "unknown fusion strategy: " + name);
}

const char* block_variant_name(BlockVariant v) {
  return v == BlockVariant::PreAct ? "preact" : "itrm";
}

BlockVariant block_variant_from_name(const std::string& name) {
  if (name == "preact") return BlockVariant::PreAct;
  if (name == "itrm") return BlockVariant::Itrm;
  fail(Err::InvalidSpec, "unknown block variant: " + name);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& stream, const Tensor<T>& features,
               const std::vector<PcrBlock<T>>& pcr, bool training) {
  Tensor<T> f = features;
  for (const auto& block : pcr) f = block.forward(f, training);
  require(f.shape() == stream.shape(), Err::ShapeMismatch,
          "fused features " + shape_str(f.shape()) + " do not match stream " +
              shape_str(stream.shape()));
  return add(stream, f);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& stream, const VoxelGrid& features,
               const std::vector<PcrBlock<T>>& pcr, bool training) {
  Shape shape{1, features.channels, features.spec.dims[0], features.spec.dims[1],
              features.spec.dims[2]};
  std::vector<T> values(features.values.begin(), features.values.end());
  return fuse(stream, Tensor<T>::from(std::move(shape), std::move(values)), pcr, training);
}

std::array<int, 3> MdbNetConfig::output_dims() const {
  return {grid_dims[0] / scale_factor, grid_dims[1] / scale_factor,
          grid_dims[2] / scale_factor};
}

void MdbNetConfig::validate() const {
  require(class_count == 12, Err::InvalidSpec, "class count is fixed at 12");
  for (int a = 0; a < 3; ++a)
    require(grid_dims[a] % scale_factor == 0 && grid_dims[a] >= 16, Err::InvalidSpec,
            "grid dims must be multiples of 4 and at least 16");
  require(widths[0] >= 1 && widths[1] >= 1 && widths[2] >= 1, Err::InvalidSpec,
          "channel widths must be positive");
  require(feature_channels >= 1, Err::InvalidSpec, "feature channels must be positive");
  require(image_width > 0 && image_height > 0, Err::InvalidSpec,
          "image dimensions must be positive");
}

template <typename T>
SemanticHead<T> SemanticHead<T>::create(int feature_channels, Rng& rng) {
  SemanticHead head;
  head.feature_channels = feature_channels;
  head.c1 = Conv3dLayer<T>::create(3, feature_channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1},
                                   true, rng);
  head.c2 = Conv3dLayer<T>::create(feature_channels, feature_channels, {1, 3, 3}, {1, 1, 1},
                                   {0, 1, 1}, true, rng);
  head.c3 = Conv3dLayer<T>::create(feature_channels, feature_channels, {1, 3, 3}, {1, 1, 1},
                                   {0, 1, 1}, true, rng);
  head.head = Conv3dLayer<T>::create(feature_channels, 12, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                                     true, rng);
  return head;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> SemanticHead<T>::forward(const Tensor<T>& rgb) const {
  require(rgb.rank() == 4 && rgb.dim(1) == 3, Err::ShapeMismatch,
          "semantic head expects rgb [N,3,H,W]");
  const int64_t N = rgb.dim(0), H = rgb.dim(2), W = rgb.dim(3);
  Tensor<T> x = reshape(rgb, {N, 3, 1, H, W});
  x = relu(c1.forward(x));
  x = relu(c2.forward(x));
  Tensor<T> trunk = relu(c3.forward(x));
  Tensor<T> logits = head.forward(trunk);
  return {reshape(trunk, {N, feature_channels, H, W}), reshape(logits, {N, 12, H, W})};
}

template <typename T>
void SemanticHead<T>::collect(const std::string& prefix, std::vector<Param<T>>& params) const {
  c1.collect(prefix + ".c1", params);
  c2.collect(prefix + ".c2", params);
  c3.collect(prefix + ".c3", params);
  head.collect(prefix + ".head", params);
}

std::pair<Image, Image> FileFeatureProvider::load(const std::string& sample_id) const {
  namespace fs = std::filesystem;
  fs::path feat = fs::path(directory) / (sample_id + "_features.vxg");
  fs::path logit = fs::path(directory) / (sample_id + "_logits.vxg");
  require(fs::exists(feat), Err::ProviderFileMissing, "missing feature map " + feat.string());
  require(fs::exists(logit), Err::ProviderFileMissing, "missing logit map " + logit.string());
  return {load_image_vxg(feat.string()), load_image_vxg(logit.string())};
}

namespace {

std::array<int, 3> strided_dims(std::array<int, 3> dims) {
  std::array<int, 3> out;
  for (int a = 0; a < 3; ++a)
    out[a] = static_cast<int>(conv_out_dim(dims[a], 3, 2, 1));
  return out;
}

}  // namespace

template <typename T>
std::vector<PcrBlock<T>> make_fusion_chain(int feature_channels, int target_channels,
                                           std::array<int, 3> full_dims,
                                           std::array<int, 3> target_dims, Rng& rng) {
  std::vector<PcrBlock<T>> chain;
  if (full_dims == target_dims) {
    chain.push_back(PcrBlock<T>::create(feature_channels, target_channels, 1, rng));
    return chain;
  }
  std::vector<std::array<int, 3>> steps;
  std::array<int, 3> dims = full_dims;
  while (dims != target_dims) {
    require(dims[0] > target_dims[0] && dims[1] >= target_dims[1] &&
                dims[2] > target_dims[2],
            Err::ShapeMismatch, "fusion target dims unreachable by stride-2 stages");
    dims = strided_dims(dims);
    steps.push_back(dims);
  }
  for (size_t i = 0; i < steps.size(); ++i) {
    int in_ch = feature_channels;
    int out_ch = (i + 1 == steps.size()) ? target_channels : feature_channels;
    chain.push_back(PcrBlock<T>::create(in_ch, out_ch, 2, rng));
    // intermediate stages keep the feature width; only the last one maps to
    // the stream width
    if (i + 1 < steps.size()) feature_channels = out_ch;
  }
  return chain;
}

template <typename T>
MdbNet<T>::MdbNet(const MdbNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];

  head2d_ = SemanticHead<T>::create(cfg.feature_channels, rng);

  const int in_ch = 1;
  stem_ = Conv3dLayer<T>::create(in_ch, w0, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  pre1_ = Conv3dLayer<T>::create(w0, w0, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true, rng);
  pre2_ = Conv3dLayer<T>::create(w0, w0, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true, rng);

  enc1_ = ResidualBlock<T>::create(w0, rng);
  down1_ = Conv3dLayer<T>::create(w0, w1, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true, rng);
  enc2_ = ResidualBlock<T>::create(w1, rng);
  down2_ = Conv3dLayer<T>::create(w1, w2, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true, rng);
  bottleneck_ = ResidualBlock<T>::create(w2, rng);

  up1_ = Conv3dLayer<T>::create(w2, w1, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  dec1_ = ResidualBlock<T>::create(w1, rng);
  up2_ = Conv3dLayer<T>::create(w1, w0, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  dec2_ = ResidualBlock<T>::create(w0, rng);
  post_ = ResidualBlock<T>::create(w0, rng);  // processes the stream after late fusion

  classifier_ =
      Conv3dLayer<T>::create(w0, cfg.class_count, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true, rng);

  quarter_dims_ = cfg_.output_dims();
  eighth_dims_ = strided_dims(quarter_dims_);
  bottleneck_dims_ = strided_dims(eighth_dims_);

  // fusion chain from full-resolution features to the strategy's entry point
  Rng frng(derive_seed(seed, 17));
  switch (cfg_.fusion) {
    case FusionStrategy::Early:
      fusion_pcr_ = make_fusion_chain<T>(cfg.feature_channels, in_ch, cfg.grid_dims,
                                         cfg.grid_dims, frng);
      break;
    case FusionStrategy::Mid:
      fusion_pcr_ = make_fusion_chain<T>(cfg.feature_channels, w2, cfg.grid_dims,
                                         bottleneck_dims_, frng);
      break;
    case FusionStrategy::Late:
      fusion_pcr_ = make_fusion_chain<T>(cfg.feature_channels, w0, cfg.grid_dims,
                                         quarter_dims_, frng);
      break;
  }
}

template <typename T>
Tensor<T> MdbNet<T>::run_3d(const Tensor<T>& ftsdf, const Tensor<T>& features3d,
                            bool training) {
  require(ftsdf.rank() == 5 && ftsdf.dim(1) == 1, Err::ShapeMismatch,
          "model input must be [N,1,X,Y,Z]");
  require(ftsdf.dim(2) == cfg_.grid_dims[0] && ftsdf.dim(3) == cfg_.grid_dims[1] &&
              ftsdf.dim(4) == cfg_.grid_dims[2],
          Err::ShapeMismatch, "model input grid dims disagree with config");
  const BlockVariant variant = cfg_.block_variant;

  Tensor<T> x = ftsdf;
  if (cfg_.fusion == FusionStrategy::Early)
    x = fuse(x, features3d, fusion_pcr_, training);

  x = stem_.forward(x);
  x = relu(x);
  x = pre1_.forward(x);
  x = relu(x);
  x = pre2_.forward(x);  // [N,w0] at 1/4 grid

  Tensor<T> e1 = enc1_.forward(x, variant, training);
  Tensor<T> d1 = down1_.forward(e1);
  Tensor<T> e2 = enc2_.forward(d1, variant, training);
  Tensor<T> d2 = down2_.forward(e2);

  Tensor<T> bin = d2;
  if (cfg_.fusion == FusionStrategy::Mid)
    bin = fuse(bin, features3d, fusion_pcr_, training);
  Tensor<T> bott = bottleneck_.forward(bin, variant, training);

  Tensor<T> u1 = resample_volume(bott, {e2.dim(2), e2.dim(3), e2.dim(4)},
                                 ResampleMode::Trilinear);
  u1 = add(up1_.forward(u1), e2);
  u1 = dec1_.forward(u1, variant, training);

  Tensor<T> u2 = resample_volume(u1, {e1.dim(2), e1.dim(3), e1.dim(4)},
                                 ResampleMode::Trilinear);
  u2 = add(up2_.forward(u2), e1);
  u2 = dec2_.forward(u2, variant, training);

  if (cfg_.fusion == FusionStrategy::Late)
    u2 = fuse(u2, features3d, fusion_pcr_, training);
  u2 = post_.forward(u2, variant, training);
  return classifier_.forward(u2);
}

template <typename T>
typename MdbNet<T>::Output MdbNet<T>::forward(const Tensor<T>& ftsdf, const Tensor<T>& rgb,
                                              const std::vector<const ProjectionMap*>& maps,
                                              bool training) {
  auto [features2d, logits2d] = head2d_.forward(rgb);
  Tensor<T> features3d = scatter_project(features2d, maps);
  return {run_3d(ftsdf, features3d, training), logits2d};
}

template <typename T>
typename MdbNet<T>::Output MdbNet<T>::forward_precomputed(
    const Tensor<T>& ftsdf, const Tensor<T>& features2d, const Tensor<T>& logits2d,
    const std::vector<const ProjectionMap*>& maps, bool training) {
  require(features2d.rank() == 4 && features2d.dim(1) == cfg_.feature_channels,
          Err::ShapeMismatch, "precomputed features must be [N,C,H,W]");
  Tensor<T> features3d = scatter_project(features2d, maps);
  return {run_3d(ftsdf, features3d, training), logits2d};
}

template <typename T>
std::vector<Param<T>> MdbNet<T>::params_3d() const {
  std::vector<Param<T>> params;
  std::vector<std::pair<std::string, Tensor<T>>> buffers;
  stem_.collect("stem", params);
  pre1_.collect("pre1", params);
  pre2_.collect("pre2", params);
  enc1_.collect("enc1", params, buffers);
  down1_.collect("down1", params);
  enc2_.collect("enc2", params, buffers);
  down2_.collect("down2", params);
  bottleneck_.collect("bottleneck", params, buffers);
  up1_.collect("up1", params);
  dec1_.collect("dec1", params, buffers);
  up2_.collect("up2", params);
  dec2_.collect("dec2", params, buffers);
  post_.collect("post", params, buffers);
  classifier_.collect("classifier", params);
  for (size_t i = 0; i < fusion_pcr_.size(); ++i)
    fusion_pcr_[i].collect("fusion.pcr" + std::to_string(i), params, buffers);
  return params;
}

template <typename T>
std::vector<Param<T>> MdbNet<T>::params_2d() const {
  std::vector<Param<T>> params;
  head2d_.collect("head2d", params);
  return params;
}

template <typename T>
std::vector<Param<T>> MdbNet<T>::params_all() const {
  std::vector<Param<T>> params = params_3d();
  std::vector<Param<T>> p2 = params_2d();
  params.insert(params.end(), p2.begin(), p2.end());
  return params;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> MdbNet<T>::buffers() const {
  std::vector<Param<T>> params;
  std::vector<std::pair<std::string, Tensor<T>>> buffers;
  enc1_.collect("enc1", params, buffers);
  enc2_.collect("enc2", params, buffers);
  bottleneck_.collect("bottleneck", params, buffers);
  dec1_.collect("dec1", params, buffers);
  dec2_.collect("dec2", params, buffers);
  post_.collect("post", params, buffers);
  for (size_t i = 0; i < fusion_pcr_.size(); ++i) {
    std::vector<Param<T>> tmp;
    fusion_pcr_[i].collect("fusion.pcr" + std::to_string(i), tmp, buffers);
  }
  return buffers;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> MdbNet<T>::state_dict() const {
  std::vector<std::pair<std::string, Tensor<T>>> entries;
  for (const auto& p : params_all()) entries.emplace_back(p.name, p.tensor);
  for (const auto& b : buffers()) entries.push_back(b);
  return entries;
}

namespace {

template <typename Vote>
uint8_t majority_u8(const Vote& counts) {
  int best = 0;
  int64_t best_count = -1;
  for (int v = 0; v < static_cast<int>(counts.size()); ++v) {
    if (counts[v] > best_count) {  // ties keep the smallest value
      best_count = counts[v];
      best = v;
    }
  }
  return static_cast<uint8_t>(best);
}

}  // namespace

std::vector<uint8_t> pool_labels(const std::vector<uint8_t>& labels,
                                 std::array<int, 3> dims, int factor) {
  require(static_cast<int64_t>(labels.size()) ==
              static_cast<int64_t>(dims[0]) * dims[1] * dims[2],
          Err::DimensionMismatch, "label volume does not match dims");
  for (int a = 0; a < 3; ++a)
    require(dims[a] % factor == 0, Err::DimensionMismatch, "dims must divide by factor");
  const int nx = dims[0] / factor, ny = dims[1] / factor, nz = dims[2] / factor;
  std::vector<uint8_t> out(static_cast<size_t>(nx) * ny * nz);
  std::array<int64_t, 256> votes;
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      for (int z = 0; z < nz; ++z) {
        votes.fill(0);
        for (int dx = 0; dx < factor; ++dx)
          for (int dy = 0; dy < factor; ++dy)
            for (int dz = 0; dz < factor; ++dz) {
              int64_t i = (static_cast<int64_t>(x * factor + dx) * dims[1] +
                           (y * factor + dy)) *
                              dims[2] +
                          (z * factor + dz);
              ++votes[labels[i]];
            }
        out[(static_cast<int64_t>(x) * ny + y) * nz + z] = majority_u8(votes);
      }
    }
  }
  return out;
}

std::vector<VoxelState> pool_visibility(const std::vector<VoxelState>& states,
                                        std::array<int, 3> dims, int factor) {
  require(static_cast<int64_t>(states.size()) ==
              static_cast<int64_t>(dims[0]) * dims[1] * dims[2],
          Err::DimensionMismatch, "visibility volume does not match dims");
  const int nx = dims[0] / factor, ny = dims[1] / factor, nz = dims[2] / factor;
  std::vector<VoxelState> out(static_cast<size_t>(nx) * ny * nz);
  std::array<int64_t, 4> votes;
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      for (int z = 0; z < nz; ++z) {
        votes.fill(0);
        for (int dx = 0; dx < factor; ++dx)
          for (int dy = 0; dy < factor; ++dy)
            for (int dz = 0; dz < factor; ++dz) {
              int64_t i = (static_cast<int64_t>(x * factor + dx) * dims[1] +
                           (y * factor + dy)) *
                              dims[2] +
                          (z * factor + dz);
              ++votes[static_cast<int>(states[i])];
            }
        out[(static_cast<int64_t>(x) * ny + y) * nz + z] =
            static_cast<VoxelState>(majority_u8(votes));
      }
    }
  }
  return out;
}

#define MDB_INSTANTIATE_BLOCKS(T)                                                   \
  template struct Conv3dLayer<T>;                                                   \
  template struct BatchNormLayer<T>;                                                \
  template struct ResidualBlock<T>;                                                 \
  template struct PcrBlock<T>;                                                      \
  template struct SemanticHead<T>;                                                  \
  template class MdbNet<T>;                                                         \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&,                       \
                          const std::vector<PcrBlock<T>>&, bool);                   \
  template Tensor<T> fuse(const Tensor<T>&, const VoxelGrid&,                       \
                          const std::vector<PcrBlock<T>>&, bool);                   \
  template std::vector<PcrBlock<T>> make_fusion_chain(int, int, std::array<int, 3>, \
                                                      std::array<int, 3>, Rng&);

MDB_INSTANTIATE_BLOCKS(float)
MDB_INSTANTIATE_BLOCKS(double)
#undef MDB_INSTANTIATE_BLOCKS

}  // namespace mdb

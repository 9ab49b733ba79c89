#include "mdb/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mdb {

int64_t conv_out_dim(int64_t in, int64_t kernel, int stride, int pad) {
  int64_t span = in + 2 * pad - kernel;
  require(span >= 0, Err::ShapeMismatch, "kernel larger than padded input");
  require(stride >= 1, Err::ShapeMismatch, "stride must be >= 1");
  return span / stride + 1;
}

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.shape() == b.shape(), Err::ShapeMismatch, std::string(what) + ": shapes differ");
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv3dSpec& spec) {
  require(x.rank() == 5, Err::ShapeMismatch, "conv3d input must be [N,C,D,H,W]");
  require(w.rank() == 5, Err::ShapeMismatch, "conv3d weights must be [K,C,kd,kh,kw]");
  require(x.dim(1) == w.dim(1), Err::ShapeMismatch, "conv3d channel counts disagree");
  const bool has_bias = b.defined();
  if (has_bias) {
    require(b.rank() == 1 && b.dim(0) == w.dim(0), Err::ShapeMismatch,
            "conv3d bias must be [K]");
  }

  const int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t K = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int64_t OD = conv_out_dim(D, kd, spec.stride[0], spec.pad[0]);
  const int64_t OH = conv_out_dim(H, kh, spec.stride[1], spec.pad[1]);
  const int64_t OW = conv_out_dim(W, kw, spec.stride[2], spec.pad[2]);

  std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, b}
                                            : std::vector<Tensor<T>>{x, w};
  Tensor<T> out = Tensor<T>::make_result({N, K, OD, OH, OW}, std::move(parents));

  const T* xv = x.data();
  const T* wv = w.data();
  T* ov = out.data();

  const int64_t x_n = C * D * H * W, x_c = D * H * W, x_d = H * W;
  const int64_t w_k = C * kd * kh * kw, w_c = kd * kh * kw, w_d = kh * kw;
  const int64_t o_n = K * OD * OH * OW, o_k = OD * OH * OW, o_d = OH * OW;

  for (int64_t n = 0; n < N; ++n) {
    for (int64_t k = 0; k < K; ++k) {
      const T bias = has_bias ? b.data()[k] : T(0);
      for (int64_t od = 0; od < OD; ++od) {
        const int64_t d0 = od * spec.stride[0] - spec.pad[0];
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h0 = oh * spec.stride[1] - spec.pad[1];
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w0 = ow * spec.stride[2] - spec.pad[2];
            T acc = bias;
            for (int64_t c = 0; c < C; ++c) {
              const T* xc = xv + n * x_n + c * x_c;
              const T* wc = wv + k * w_k + c * w_c;
              for (int64_t fd = 0; fd < kd; ++fd) {
                const int64_t id = d0 + fd;
                if (id < 0 || id >= D) continue;
                for (int64_t fh = 0; fh < kh; ++fh) {
                  const int64_t ih = h0 + fh;
                  if (ih < 0 || ih >= H) continue;
                  const T* xrow = xc + id * x_d + ih * W;
                  const T* wrow = wc + fd * w_d + fh * kw;
                  for (int64_t fw = 0; fw < kw; ++fw) {
                    const int64_t iw = w0 + fw;
                    if (iw < 0 || iw >= W) continue;
                    acc += xrow[iw] * wrow[fw];
                  }
                }
              }
            }
            ov[n * o_n + k * o_k + od * o_d + oh * OW + ow] = acc;
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    TensorNode<T>* wn = w.node();
    TensorNode<T>* bn = has_bias ? b.node() : nullptr;
    bool need_x = x.requires_grad(), need_w = w.requires_grad();
    bool need_b = has_bias && b.requires_grad();
    Conv3dSpec sp = spec;
    out.node()->backward = [=]() {
      const T* go = on->grad.data();
      T* gx = nullptr;
      T* gw = nullptr;
      T* gb = nullptr;
      if (need_x) {
        if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
        gx = xn->grad.data();
      }
      if (need_w) {
        if (wn->grad.empty()) wn->grad.assign(wn->values.size(), T(0));
        gw = wn->grad.data();
      }
      if (need_b) {
        if (bn->grad.empty()) bn->grad.assign(bn->values.size(), T(0));
        gb = bn->grad.data();
      }
      const T* xvv = xn->values.data();
      const T* wvv = wn->values.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t k = 0; k < K; ++k) {
          for (int64_t od = 0; od < OD; ++od) {
            const int64_t d0 = od * sp.stride[0] - sp.pad[0];
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t h0 = oh * sp.stride[1] - sp.pad[1];
              for (int64_t ow = 0; ow < OW; ++ow) {
                const int64_t w0 = ow * sp.stride[2] - sp.pad[2];
                const T g = go[n * o_n + k * o_k + od * o_d + oh * OW + ow];
                if (g == T(0)) continue;
                if (gb) gb[k] += g;
                for (int64_t c = 0; c < C; ++c) {
                  const int64_t xb = n * x_n + c * x_c;
                  const int64_t wb = k * w_k + c * w_c;
                  for (int64_t fd = 0; fd < kd; ++fd) {
                    const int64_t id = d0 + fd;
                    if (id < 0 || id >= D) continue;
                    for (int64_t fh = 0; fh < kh; ++fh) {
                      const int64_t ih = h0 + fh;
                      if (ih < 0 || ih >= H) continue;
                      const int64_t xrow = xb + id * x_d + ih * W;
                      const int64_t wrow = wb + fd * w_d + fh * kw;
                      for (int64_t fw = 0; fw < kw; ++fw) {
                        const int64_t iw = w0 + fw;
                        if (iw < 0 || iw >= W) continue;
                        if (gx) gx[xrow + iw] += wvv[wrow + fw] * g;
                        if (gw) gw[wrow + fw] += xvv[xrow + iw] * g;
                      }
                    }
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum, T eps) {
  require(x.rank() >= 2, Err::ShapeMismatch, "batch_norm input must be [N,C,...]");
  const int64_t C = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          Err::ShapeMismatch, "batch_norm scale/shift must have channel length");
  require(running_mean.dim(0) == C && running_var.dim(0) == C, Err::ShapeMismatch,
          "batch_norm running stats must have channel length");

  const int64_t N = x.dim(0);
  int64_t spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int64_t m = N * spatial;  // elements per channel
  const int64_t x_n = C * spatial;

  std::vector<T> mean(C, T(0)), var(C, T(0));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + n * x_n + c * spatial;
        for (int64_t s = 0; s < spatial; ++s) acc += p[s];
      }
      mean[c] = static_cast<T>(acc / m);
      double vacc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + n * x_n + c * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          double d = p[s] - mean[c];
          vacc += d * d;
        }
      }
      var[c] = static_cast<T>(vacc / m);  // biased, used for normalization
    }
    // running stats keep the unbiased variance
    for (int64_t c = 0; c < C; ++c) {
      T uv = (m > 1) ? var[c] * static_cast<T>(m) / static_cast<T>(m - 1) : var[c];
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mean[c];
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * uv;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      var[c] = running_var.data()[c];
    }
  }

  Tensor<T> out = Tensor<T>::make_result(x.shape(), {x, gamma, beta});
  std::vector<T> inv_std(C);
  for (int64_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);

  std::vector<T> xhat(x.numel());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + n * x_n + c * spatial;
      T* xh = xhat.data() + n * x_n + c * spatial;
      T* o = out.data() + n * x_n + c * spatial;
      const T g = gamma.data()[c], bta = beta.data()[c];
      for (int64_t s = 0; s < spatial; ++s) {
        xh[s] = (p[s] - mean[c]) * inv_std[c];
        o[s] = g * xh[s] + bta;
      }
    }
  }

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    TensorNode<T>* gn = gamma.node();
    TensorNode<T>* btn = beta.node();
    bool need_x = x.requires_grad(), need_g = gamma.requires_grad(),
         need_b = beta.requires_grad();
    auto saved_xhat = std::make_shared<std::vector<T>>(std::move(xhat));
    auto saved_inv = std::make_shared<std::vector<T>>(std::move(inv_std));
    out.node()->backward = [=]() {
      const T* go = on->grad.data();
      const std::vector<T>& xh = *saved_xhat;
      const std::vector<T>& inv = *saved_inv;
      for (int64_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const T* g = go + n * x_n + c * spatial;
          const T* h = xh.data() + n * x_n + c * spatial;
          for (int64_t s = 0; s < spatial; ++s) {
            sum_dy += g[s];
            sum_dy_xhat += static_cast<double>(g[s]) * h[s];
          }
        }
        if (need_g) {
          if (gn->grad.empty()) gn->grad.assign(gn->values.size(), T(0));
          gn->grad[c] += static_cast<T>(sum_dy_xhat);
        }
        if (need_b) {
          if (btn->grad.empty()) btn->grad.assign(btn->values.size(), T(0));
          btn->grad[c] += static_cast<T>(sum_dy);
        }
        if (need_x) {
          if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
          const T gm = gn->values[c];
          for (int64_t n = 0; n < N; ++n) {
            const T* g = go + n * x_n + c * spatial;
            const T* h = xh.data() + n * x_n + c * spatial;
            T* gx = xn->grad.data() + n * x_n + c * spatial;
            if (training) {
              for (int64_t s = 0; s < spatial; ++s) {
                double t = g[s] - sum_dy / m - static_cast<double>(h[s]) * sum_dy_xhat / m;
                gx[s] += static_cast<T>(gm * inv[c] * t);
              }
            } else {
              for (int64_t s = 0; s < spatial; ++s) gx[s] += gm * inv[c] * g[s];
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::make_result(x.shape(), {x});
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    out.node()->backward = [=]() {
      if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
      for (size_t i = 0; i < xn->values.size(); ++i)
        if (xn->values[i] > T(0)) xn->grad[i] += on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::make_result(x.shape(), {x});
  for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    out.node()->backward = [=]() {
      if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
      for (size_t i = 0; i < xn->values.size(); ++i) {
        T y = on->values[i];
        xn->grad[i] += (T(1) - y * y) * on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  return kind == Act::Relu ? relu(x) : tanh(x);
}

namespace {

struct Tap {
  int64_t i0, i1;
  double w0, w1;  // w0 + w1 = 1; w1 = 0 for single-tap
};

// Sampling position for output index i: (i+0.5)*in/out - 0.5, taps clamped.
Tap axis_tap(int64_t i, int64_t in, int64_t out, bool nearest) {
  double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / out - 0.5;
  Tap t{0, 0, 1.0, 0.0};
  if (nearest) {
    int64_t p = static_cast<int64_t>(std::lround(pos));
    t.i0 = std::clamp<int64_t>(p, 0, in - 1);
    return t;
  }
  double f = std::floor(pos);
  int64_t i0 = static_cast<int64_t>(f);
  double frac = pos - f;
  if (i0 < 0) {
    t.i0 = 0;
    return t;
  }
  if (i0 >= in - 1) {
    t.i0 = in - 1;
    return t;
  }
  if (frac == 0.0) {
    t.i0 = i0;
    return t;
  }
  t.i0 = i0;
  t.i1 = i0 + 1;
  t.w0 = 1.0 - frac;
  t.w1 = frac;
  return t;
}

}  // namespace

template <typename T>
Tensor<T> resample_volume(const Tensor<T>& x, std::array<int64_t, 3> target,
                          ResampleMode mode) {
  require(x.rank() == 5, Err::ShapeMismatch, "resample_volume input must be [N,C,D,H,W]");
  require(target[0] >= 1 && target[1] >= 1 && target[2] >= 1, Err::ShapeMismatch,
          "resample_volume target dims must be >= 1");
  const int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t TD = target[0], TH = target[1], TW = target[2];
  const bool nearest = (mode == ResampleMode::Nearest);

  std::vector<Tap> td(TD), th(TH), tw(TW);
  for (int64_t i = 0; i < TD; ++i) td[i] = axis_tap(i, D, TD, nearest);
  for (int64_t i = 0; i < TH; ++i) th[i] = axis_tap(i, H, TH, nearest);
  for (int64_t i = 0; i < TW; ++i) tw[i] = axis_tap(i, W, TW, nearest);

  Tensor<T> out = Tensor<T>::make_result({N, C, TD, TH, TW}, {x});
  const int64_t x_c = D * H * W, o_c = TD * TH * TW;

  auto for_each_tap = [N, C, TD, TH, TW, H, W, x_c, o_c](
                          const std::vector<Tap>& td, const std::vector<Tap>& th,
                          const std::vector<Tap>& tw, auto&& emit) {
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const int64_t xb = nc * x_c, ob = nc * o_c;
      for (int64_t zd = 0; zd < TD; ++zd) {
        for (int64_t zh = 0; zh < TH; ++zh) {
          for (int64_t zw = 0; zw < TW; ++zw) {
            const int64_t oi = ob + (zd * TH + zh) * TW + zw;
            const Tap &a = td[zd], &b = th[zh], &c = tw[zw];
            const int64_t dd[2] = {a.i0, a.i1};
            const double dw[2] = {a.w0, a.w1};
            const int64_t hh[2] = {b.i0, b.i1};
            const double hw[2] = {b.w0, b.w1};
            const int64_t ww[2] = {c.i0, c.i1};
            const double wwt[2] = {c.w0, c.w1};
            for (int di = 0; di < 2; ++di) {
              if (dw[di] == 0.0) continue;
              for (int hi = 0; hi < 2; ++hi) {
                if (hw[hi] == 0.0) continue;
                for (int wi = 0; wi < 2; ++wi) {
                  if (wwt[wi] == 0.0) continue;
                  const double wgt = dw[di] * hw[hi] * wwt[wi];
                  const int64_t xi = xb + (dd[di] * H + hh[hi]) * W + ww[wi];
                  emit(oi, xi, wgt);
                }
              }
            }
          }
        }
      }
    }
  };

  // Single-tap outputs copy bit-exactly (identity resample stays identical).
  for_each_tap(td, th, tw, [&](int64_t oi, int64_t xi, double wgt) {
    if (wgt == 1.0)
      out.data()[oi] = x.data()[xi];
    else
      out.data()[oi] += static_cast<T>(wgt * x.data()[xi]);
  });

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    out.node()->backward = [=]() {
      if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
      for_each_tap(td, th, tw, [&](int64_t oi, int64_t xi, double wgt) {
        xn->grad[xi] += static_cast<T>(wgt * on->grad[oi]);
      });
    };
  }
  return out;
}

template <typename T>
Tensor<T> scatter_project(const Tensor<T>& x, const std::vector<const ProjectionMap*>& maps) {
  require(x.rank() == 4, Err::ShapeMismatch, "scatter_project input must be [N,C,H,W]");
  require(static_cast<int64_t>(maps.size()) == x.dim(0), Err::ShapeMismatch,
          "scatter_project needs one projection map per sample");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const ProjectionMap* m : maps) {
    require(m->image_height == H && m->image_width == W, Err::DimensionMismatch,
            "projection map image dims disagree with features");
    require(m->grid_dims == maps[0]->grid_dims, Err::DimensionMismatch,
            "projection maps target different grids");
  }
  const int64_t X = maps[0]->grid_dims[0], Y = maps[0]->grid_dims[1],
                Z = maps[0]->grid_dims[2];
  const int64_t vox = X * Y * Z, pix = H * W;

  Tensor<T> out = Tensor<T>::make_result({N, C, X, Y, Z}, {x});
  for (int64_t n = 0; n < N; ++n) {
    const ProjectionMap& m = *maps[n];
    for (size_t s = 0; s < m.voxel_index.size(); ++s) {
      const int32_t begin = m.pixel_offset[s], end = m.pixel_offset[s + 1];
      const T inv = T(1) / static_cast<T>(end - begin);
      for (int64_t c = 0; c < C; ++c) {
        const T* xp = x.data() + (n * C + c) * pix;
        T acc = T(0);
        for (int32_t i = begin; i < end; ++i) acc += xp[m.pixel_list[i]];
        out.data()[(n * C + c) * vox + m.voxel_index[s]] = acc * inv;
      }
    }
  }

  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* xn = x.node();
    auto maps_copy = maps;
    out.node()->backward = [=]() {
      if (xn->grad.empty()) xn->grad.assign(xn->values.size(), T(0));
      for (int64_t n = 0; n < N; ++n) {
        const ProjectionMap& m = *maps_copy[n];
        for (size_t s = 0; s < m.voxel_index.size(); ++s) {
          const int32_t begin = m.pixel_offset[s], end = m.pixel_offset[s + 1];
          const T inv = T(1) / static_cast<T>(end - begin);
          for (int64_t c = 0; c < C; ++c) {
            const T g = on->grad[(n * C + c) * vox + m.voxel_index[s]] * inv;
            T* gx = xn->grad.data() + (n * C + c) * pix;
            for (int32_t i = begin; i < end; ++i) gx[m.pixel_list[i]] += g;
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::make_result(a.shape(), {a, b});
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* an = a.node();
    TensorNode<T>* bn = b.node();
    bool na = a.requires_grad(), nb = b.requires_grad();
    out.node()->backward = [=]() {
      if (na) {
        if (an->grad.empty()) an->grad.assign(an->values.size(), T(0));
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (nb) {
        if (bn->grad.empty()) bn->grad.assign(bn->values.size(), T(0));
        for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::make_result(a.shape(), {a, b});
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* an = a.node();
    TensorNode<T>* bn = b.node();
    bool na = a.requires_grad(), nb = b.requires_grad();
    out.node()->backward = [=]() {
      if (na) {
        if (an->grad.empty()) an->grad.assign(an->values.size(), T(0));
        for (size_t i = 0; i < an->grad.size(); ++i)
          an->grad[i] += bn->values[i] * on->grad[i];
      }
      if (nb) {
        if (bn->grad.empty()) bn->grad.assign(bn->values.size(), T(0));
        for (size_t i = 0; i < bn->grad.size(); ++i)
          bn->grad[i] += an->values[i] * on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::make_result(a.shape(), {a});
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* an = a.node();
    out.node()->backward = [=]() {
      if (an->grad.empty()) an->grad.assign(an->values.size(), T(0));
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += c * on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::make_result({1}, {a});
  T acc = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* an = a.node();
    out.node()->backward = [=]() {
      if (an->grad.empty()) an->grad.assign(an->values.size(), T(0));
      const T g = on->grad[0];
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), Err::ShapeMismatch,
          "reshape must preserve element count");
  Tensor<T> out = Tensor<T>::make_result(std::move(shape), {a});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (out.requires_grad()) {
    TensorNode<T>* on = out.node();
    TensorNode<T>* an = a.node();
    out.node()->backward = [=]() {
      if (an->grad.empty()) an->grad.assign(an->values.size(), T(0));
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    };
  }
  return out;
}

#define MDB_INSTANTIATE_OPS(T)                                                         \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                            const Conv3dSpec&);                                        \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                Tensor<T>&, Tensor<T>&, bool, T, T);                   \
  template Tensor<T> relu(const Tensor<T>&);                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                           \
  template Tensor<T> activation(const Tensor<T>&, Act);                                \
  template Tensor<T> resample_volume(const Tensor<T>&, std::array<int64_t, 3>,         \
                                     ResampleMode);                                    \
  template Tensor<T> scatter_project(const Tensor<T>&,                                 \
                                     const std::vector<const ProjectionMap*>&);        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);

MDB_INSTANTIATE_OPS(float)
MDB_INSTANTIATE_OPS(double)
#undef MDB_INSTANTIATE_OPS

}  // namespace mdb

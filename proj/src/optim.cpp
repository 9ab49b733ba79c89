#include "mdb/optim.hpp"

#include <cmath>

namespace mdb {

double LrSchedule::at(int64_t step) const {
  require(total_steps >= 1, Err::InvalidSpec, "schedule needs total_steps >= 1");
  if (kind == ScheduleKind::CosineDecay) {
    if (step >= total_steps) return min_lr;
    double t = static_cast<double>(step) / total_steps;
    return min_lr + (initial_lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
  }
  // OneCycle
  int64_t warm = static_cast<int64_t>(std::llround(warmup_frac * total_steps));
  if (step <= warm) {
    if (warm == 0) return max_lr;
    double t = static_cast<double>(step) / warm;
    return initial_lr + (max_lr - initial_lr) * t;
  }
  if (step >= total_steps) return min_lr;
  double t = static_cast<double>(step - warm) / (total_steps - warm);
  return min_lr + (max_lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
}

LrSchedule LrSchedule::one_cycle(double max_lr, int64_t total_steps, double warmup_frac) {
  LrSchedule s;
  s.kind = ScheduleKind::OneCycle;
  s.max_lr = max_lr;
  s.initial_lr = max_lr / 25.0;
  s.min_lr = max_lr / 1e4;
  s.total_steps = total_steps;
  s.warmup_frac = warmup_frac;
  return s;
}

LrSchedule LrSchedule::cosine_decay(double initial_lr, double min_lr, int64_t total_steps) {
  LrSchedule s;
  s.kind = ScheduleKind::CosineDecay;
  s.initial_lr = initial_lr;
  s.max_lr = initial_lr;
  s.min_lr = min_lr;
  s.total_steps = total_steps;
  return s;
}

template <typename T>
Optimizer<T>::Optimizer(OptKind kind, std::vector<Param<T>> params)
    : kind_(kind), params_(std::move(params)) {
  for (auto& p : params_) {
    require(p.tensor.requires_grad(), Err::InvalidSpec,
            "optimizer parameter must require gradients: " + p.name);
    m1_.push_back(Tensor<T>::zeros(p.tensor.shape()));
    if (kind_ == OptKind::AdamW) m2_.push_back(Tensor<T>::zeros(p.tensor.shape()));
  }
}

template <typename T>
Optimizer<T> Optimizer<T>::sgd_momentum(std::vector<Param<T>> params, T momentum,
                                        T weight_decay) {
  Optimizer o(OptKind::SgdMomentum, std::move(params));
  o.momentum_ = momentum;
  o.weight_decay_ = weight_decay;
  return o;
}

template <typename T>
Optimizer<T> Optimizer<T>::adamw(std::vector<Param<T>> params, T weight_decay, T beta1,
                                 T beta2, T eps) {
  Optimizer o(OptKind::AdamW, std::move(params));
  o.weight_decay_ = weight_decay;
  o.beta1_ = beta1;
  o.beta2_ = beta2;
  o.eps_ = eps;
  return o;
}

template <typename T>
void Optimizer<T>::step(double lr) {
  ++steps_;
  const T lrt = static_cast<T>(lr);
  for (size_t i = 0; i < params_.size(); ++i) {
    Param<T>& p = params_[i];
    require(p.tensor.has_grad(), Err::MissingGradient,
            "no gradient for parameter " + p.name);
    const std::vector<T>& g = p.tensor.grad();
    T* theta = p.tensor.data();
    const T wd = p.decay_exempt ? T(0) : weight_decay_;

    if (kind_ == OptKind::SgdMomentum) {
      T* v = m1_[i].data();
      for (size_t j = 0; j < g.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j] + wd * theta[j];
        theta[j] -= lrt * v[j];
      }
    } else {
      T* m = m1_[i].data();
      T* v = m2_[i].data();
      const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(steps_));
      const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(steps_));
      for (size_t j = 0; j < g.size(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mh = m[j] / bc1;
        const T vh = v[j] / bc2;
        theta[j] -= lrt * (mh / (std::sqrt(vh) + eps_) + wd * theta[j]);
      }
    }
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Optimizer<T>::state_buffers() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("opt.m1." + params_[i].name, m1_[i]);
    if (kind_ == OptKind::AdamW) out.emplace_back("opt.m2." + params_[i].name, m2_[i]);
  }
  return out;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace mdb

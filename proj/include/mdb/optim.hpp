#pragma once

#include <string>
#include <vector>

#include "mdb/tensor.hpp"

namespace mdb {

/// Named trainable tensor; norm scales/shifts and biases are weight-decay
/// exempt.
template <typename T>
struct Param {
  Tensor<T> tensor;
  std::string name;
  bool decay_exempt = false;
};

enum class ScheduleKind { OneCycle, CosineDecay };

/// OneCycle: linear warm-up initial->max over warmup_frac of the run, then
/// cosine anneal max->min. CosineDecay: cosine from initial to min over the
/// whole run. Emitted lr is positive at every step.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::OneCycle;
  double initial_lr = 4e-4;
  double max_lr = 1e-2;
  double min_lr = 1e-6;
  int64_t total_steps = 1;
  double warmup_frac = 0.3;

  double at(int64_t step) const;

  static LrSchedule one_cycle(double max_lr, int64_t total_steps, double warmup_frac = 0.3);
  static LrSchedule cosine_decay(double initial_lr, double min_lr, int64_t total_steps);
};

enum class OptKind { SgdMomentum, AdamW };

/// SGD with momentum: v <- momentum*v + g + wd*theta; theta <- theta - lr*v.
/// AdamW: moment estimates with bias correction, decoupled weight decay.
/// Throws MissingGradient when stepping a parameter with no gradient.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptKind kind, std::vector<Param<T>> params);

  static Optimizer sgd_momentum(std::vector<Param<T>> params, T momentum = T(0.9),
                                T weight_decay = T(5e-4));
  static Optimizer adamw(std::vector<Param<T>> params, T weight_decay = T(0.05),
                         T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8));

  void step(double lr);
  void step(const LrSchedule& schedule, int64_t step_index) { step(schedule.at(step_index)); }
  void zero_grad();

  const std::vector<Param<T>>& params() const { return params_; }
  int64_t steps_taken() const { return steps_; }

  // Moment buffers exposed for checkpointing, keyed by slot name.
  std::vector<std::pair<std::string, Tensor<T>>> state_buffers();

  OptKind kind() const { return kind_; }

 private:
  OptKind kind_;
  std::vector<Param<T>> params_;
  std::vector<Tensor<T>> m1_;  // momentum / first moment
  std::vector<Tensor<T>> m2_;  // second moment (AdamW)
  T momentum_ = T(0.9);
  T weight_decay_ = T(0);
  T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
  int64_t steps_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace mdb

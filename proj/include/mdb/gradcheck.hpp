#pragma once

#include <functional>

#include "mdb/tensor.hpp"

namespace mdb {

/// Central-difference check of reverse-mode gradients for a scalar-valued
/// builder f over the coordinates of `input`. Relative error uses denominator
/// max(|analytic|, |numeric|, 1e-12); returns the maximum over coordinates.
/// Run at f64 with eps around 1e-5.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& input, double eps = 1e-5);

}  // namespace mdb

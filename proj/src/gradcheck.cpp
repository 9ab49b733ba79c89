#include "mdb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdb {

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& input, double eps) {
  Tensor<double> x = Tensor<double>::from(input.shape(), input.values(), true);
  Tensor<double> out = f(x);
  require(out.numel() == 1, Err::NonScalarLoss, "grad_check builder must emit a scalar");
  backward(out);
  std::vector<double> analytic = x.grad();

  double max_rel = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor<double> xp = Tensor<double>::from(input.shape(), input.values());
    xp.data()[i] += eps;
    Tensor<double> xm = Tensor<double>::from(input.shape(), input.values());
    xm.data()[i] -= eps;
    double numeric = (f(xp).item() - f(xm).item()) / (2.0 * eps);
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace mdb

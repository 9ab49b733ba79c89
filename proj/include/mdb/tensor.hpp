#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mdb/common.hpp"

namespace mdb {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
class Tensor;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<Tensor<T>> parents;
  std::function<void()> backward;  // adds contributions into parent grads
};

/// Value-semantic handle onto a node of the reverse-mode graph. Leaves with
/// requires_grad are parameters; ops link results to their inputs.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
  int64_t dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }
  T* data() { return node_->values.data(); }
  const T* data() const { return node_->values.data(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad();              // allocates zeros on first use
  const std::vector<T>& grad() const;  // throws MissingGradient if absent
  void zero_grad();

  double grad_norm() const;

  TensorNode<T>* node() const { return node_.get(); }

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<Tensor> parents);

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Reverse topological traversal from a scalar loss; accumulates gradients on
/// every reachable tensor that requires them. Deterministic for a fixed graph.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward(const Tensor<float>&);
extern template void backward(const Tensor<double>&);

}  // namespace mdb

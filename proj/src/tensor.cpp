#include "mdb/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mdb {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return from(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  require(static_cast<int64_t>(values.size()) == shape_numel(shape), Err::ShapeMismatch,
          "value count does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<TensorNode<T>>();
  t.node_->shape = std::move(shape);
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev, bool requires_grad) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal()) * stddev;
  return from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, Err::ShapeMismatch, "item() needs a single-element tensor");
  return node_->values[0];
}

template <typename T>
std::vector<T>& Tensor<T>::grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), T(0));
  return node_->grad;
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  require(!node_->grad.empty(), Err::MissingGradient, "gradient has not been populated");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), T(0));
}

template <typename T>
double Tensor<T>::grad_norm() const {
  if (node_->grad.empty()) return 0.0;
  double s = 0.0;
  for (T g : node_->grad) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<Tensor> parents) {
  Tensor t = zeros(std::move(shape));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  t.node_->requires_grad = needs;
  if (needs) t.node_->parents = std::move(parents);
  return t;
}

namespace {

template <typename T>
void topo_visit(TensorNode<T>* node, std::unordered_set<TensorNode<T>*>& seen,
                std::vector<TensorNode<T>*>& order) {
  if (!node->requires_grad || seen.count(node)) return;
  seen.insert(node);
  for (auto& p : node->parents) topo_visit(p.node(), seen, order);
  order.push_back(node);
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1, Err::NonScalarLoss,
          "backward requires a scalar loss");
  if (!loss.requires_grad()) return;

  std::unordered_set<TensorNode<T>*> seen;
  std::vector<TensorNode<T>*> order;
  topo_visit(loss.node(), seen, order);

  // Interior gradients are per-call scratch; only leaves accumulate across
  // calls, so a second backward doubles parameter gradients exactly.
  for (TensorNode<T>* node : order)
    if (node->backward) node->grad.assign(node->values.size(), T(0));

  if (loss.node()->grad.empty()) loss.node()->grad.assign(1, T(0));
  loss.node()->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace mdb

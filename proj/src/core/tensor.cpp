#include "poco/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "poco/error.hpp"

namespace poco::nn {

namespace {
constexpr const char* kModule = "neural_core";
thread_local KinkTrace* g_current_trace = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorKind::Shape, kModule,
         "shape " + shape_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
             " values but " + std::to_string(values.size()) + " were given");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                                 BackwardFn backward_fn) {
  Tensor out = from(std::move(shape), std::move(values), false);
  bool needs = false;
  for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  out.node_->leaf = false;
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->backward_fn = std::move(backward_fn);
    for (auto& p : parents) {
      if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
    }
  }
  return out;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) fail(ErrorKind::InvalidArgument, kModule, "use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorKind::Shape, kModule,
         "axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  shape();
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  shape();
  if (!node_->leaf) fail(ErrorKind::InvalidArgument, kModule, "op outputs are immutable");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    fail(ErrorKind::Shape, kModule, "item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  shape();
  return node_->requires_grad;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  shape();
  return node_->leaf;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size() && !node_->value.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  shape();
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  shape();
  return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  shape();
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() {
  if (numel() != 1) {
    fail(ErrorKind::Shape, kModule,
         "backward() needs a scalar loss, got shape " + shape_string(shape()));
  }
  if (node_->consumed) {
    fail(ErrorKind::Runtime, kModule, "backward() called twice on the same graph; re-run forward");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  // `order` keeps every node alive while closures and parent links are released.
  std::vector<std::shared_ptr<detail::Node<T>>> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node<T>>, std::size_t>> stack{{node_, 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto p = n->parents[next++];
      if (visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (const auto& n : order) {
    if (!n->leaf && n->consumed) {
      fail(ErrorKind::Runtime, kModule,
           "graph segment reused after backward(); re-run forward");
    }
  }

  node_->ensure_grad().assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = it->get();
    if (n->leaf) continue;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(n->grad);
    n->backward_fn = nullptr;
    n->parents.clear();
    n->consumed = true;
    if (n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

void KinkTrace::record(std::uint64_t value) {
  // FNV-1a over the 8 bytes of value.
  for (int i = 0; i < 8; ++i) {
    digest_ ^= (value >> (8 * i)) & 0xffU;
    digest_ *= 1099511628211ULL;
  }
  ++events_;
}

void KinkTrace::record_bits(std::span<const std::uint8_t> bits) {
  for (auto b : bits) {
    digest_ ^= b;
    digest_ *= 1099511628211ULL;
  }
  ++events_;
}

KinkTrace* KinkTrace::current() noexcept { return g_current_trace; }

ScopedKinkTrace::ScopedKinkTrace(KinkTrace& trace) : previous_(g_current_trace) {
  g_current_trace = &trace;
}

ScopedKinkTrace::~ScopedKinkTrace() { g_current_trace = previous_; }

template class Tensor<float>;
template class Tensor<double>;

}  // namespace poco::nn

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace poco::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Set once backward() has walked through this node; its saved buffers are gone.
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const std::vector<T>&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with an optional gradient, forming a node of the
/// reverse-mode autodiff graph. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(const std::vector<T>&)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  /// Builds an op output. requires_grad is inherited from the parents; when
  /// none of them needs a gradient the backward closure is dropped.
  static Tensor make_result(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                            BackwardFn backward_fn);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const T> data() const;
  /// Writable view of the values; only allowed on leaves.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf with requires_grad.
  /// Only valid on a scalar, and only once per forward pass.
  void backward();

  Tensor detach() const;

  detail::Node<T>* node() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node<T>> node_;
};

/// Named trainable tensor.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Records discrete decisions taken during a forward pass (activation signs,
/// pooling argmax, top-k memberships). Two forward passes that produce the same
/// digest followed the same piecewise-smooth branch of the function.
class KinkTrace {
 public:
  void record(std::uint64_t value);
  void record_bits(std::span<const std::uint8_t> bits);
  std::uint64_t digest() const noexcept { return digest_; }
  std::size_t events() const noexcept { return events_; }

  static KinkTrace* current() noexcept;

 private:
  friend class ScopedKinkTrace;
  std::uint64_t digest_ = 1469598103934665603ULL;
  std::size_t events_ = 0;
};

class ScopedKinkTrace {
 public:
  explicit ScopedKinkTrace(KinkTrace& trace);
  ~ScopedKinkTrace();
  ScopedKinkTrace(const ScopedKinkTrace&) = delete;
  ScopedKinkTrace& operator=(const ScopedKinkTrace&) = delete;

 private:
  KinkTrace* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace poco::nn

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "poco/tensor.hpp"

namespace poco::nn {

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Pool2dAttrs {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

struct BatchNormAttrs {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Running statistics of a batch-norm layer; updated in training mode only.
template <typename T>
struct BatchNormBuffers {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormBuffers(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// floor((in + 2*pad - kernel) / stride) + 1; throws when the window does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

// x: (N, C, H, W); weight: (F, C, kh, kw); bias: (F) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dAttrs attrs);

// x: (N, in); weight: (out, in); bias: (out) or undefined.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, Pool2dAttrs attrs);

// (N, C, H, W) -> (N, C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormBuffers<T>& buffers, BatchNormAttrs attrs);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Rows of x in [begin, end) along axis 0.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

enum class OpKind {
  Conv2d,
  FullyConnected,
  Relu,
  MaxPool2d,
  GlobalAvgPool,
  BatchNorm2d,
  Add,
  Mul,
  Reshape,
  Sum,
};

/// Throws for names not in the op table.
OpKind parse_op_kind(std::string_view name);
std::string_view op_kind_name(OpKind kind);

template <typename T>
struct OpAttrs {
  Conv2dAttrs conv;
  Pool2dAttrs pool;
  BatchNormAttrs batch_norm;
  BatchNormBuffers<T>* batch_norm_buffers = nullptr;
  Shape shape;
};

/// Uniform entry point over the op table. Input arity per kind:
/// conv2d (x, w[, b]), fully_connected (x, w[, b]), batch_norm2d (x, gamma, beta),
/// add/mul (a, b), everything else (x).
template <typename T>
Tensor<T> forward_op(OpKind kind, std::span<const Tensor<T>> inputs, const OpAttrs<T>& attrs);

}  // namespace poco::nn

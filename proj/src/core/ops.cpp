#include "poco/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

#include "poco/error.hpp"

namespace poco::nn {

namespace {

constexpr const char* kModule = "neural_core";

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const MatRM<T>>;
template <typename T>
using MutMap = Eigen::Map<MatRM<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::Shape, kModule, what);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* arg) {
  require(t.defined(), std::string(op) + ": " + arg + " is undefined");
  require(t.rank() == rank, std::string(op) + ": " + arg + " must have rank " +
                                std::to_string(rank) + ", got shape " + shape_string(t.shape()));
}

// Weight-gradient reductions over the batch are split into this many fixed
// chunks and reduced in chunk order, so results do not depend on thread count.
constexpr std::size_t kReductionChunks = 8;

template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            T* col) {
  const auto P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = img + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            T* img) {
  const auto P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          T* dst = img + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  require(stride > 0, "stride must be positive");
  require(in + 2 * padding >= kernel, "kernel " + std::to_string(kernel) +
                                          " does not fit input extent " + std::to_string(in) +
                                          " with padding " + std::to_string(padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dAttrs attrs) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == C, "conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                  " input channels, input has " + std::to_string(C));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == F,
            "conv2d: bias shape " + shape_string(bias.shape()) + " does not match " +
                std::to_string(F) + " filters");
  }
  const auto Ho = conv_output_extent(H, kh, attrs.stride, attrs.padding);
  const auto Wo = conv_output_extent(W, kw, attrs.stride, attrs.padding);
  const auto K = C * kh * kw;
  const auto P = Ho * Wo;

  auto cols = std::make_shared<std::vector<T>>(N * K * P);
  std::vector<T> out(N * F * P);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  const T* bd = bias.defined() ? bias.data().data() : nullptr;
  const ConstMap<T> wmat(wd, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(K));

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(N); ++ni) {
    const auto n = static_cast<std::size_t>(ni);
    T* col = cols->data() + n * K * P;
    im2col(xd + n * C * H * W, C, H, W, kh, kw, attrs.stride, attrs.padding, Ho, Wo, col);
    MutMap<T> o(out.data() + n * F * P, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(P));
    o.noalias() = wmat * ConstMap<T>(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    if (bd) {
      for (std::size_t f = 0; f < F; ++f) o.row(static_cast<Eigen::Index>(f)).array() += bd[f];
    }
  }

  Tensor<T> xc = x, wc = weight, bc = bias;
  return Tensor<T>::make_result(
      Shape{N, F, Ho, Wo}, std::move(out), {x, weight, bias},
      [=](const std::vector<T>& g) mutable {
        if (wc.requires_grad()) {
          const auto chunks = std::min(N, kReductionChunks);
          std::vector<T> partial(chunks * F * K, T(0));
#pragma omp parallel for schedule(static)
          for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(chunks); ++ci) {
            const auto c = static_cast<std::size_t>(ci);
            MutMap<T> acc(partial.data() + c * F * K, static_cast<Eigen::Index>(F),
                          static_cast<Eigen::Index>(K));
            for (std::size_t n = c * N / chunks; n < (c + 1) * N / chunks; ++n) {
              acc.noalias() +=
                  ConstMap<T>(g.data() + n * F * P, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(P)) *
                  ConstMap<T>(cols->data() + n * K * P, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P))
                      .transpose();
            }
          }
          auto gw = wc.mutable_grad();
          for (std::size_t c = 0; c < chunks; ++c) {
            for (std::size_t i = 0; i < F * K; ++i) gw[i] += partial[c * F * K + i];
          }
        }
        if (bc.defined() && bc.requires_grad()) {
          auto gb = bc.mutable_grad();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t f = 0; f < F; ++f) {
              const T* row = g.data() + (n * F + f) * P;
              T s = 0;
              for (std::size_t p = 0; p < P; ++p) s += row[p];
              gb[f] += s;
            }
          }
        }
        if (xc.requires_grad()) {
          auto gx = xc.mutable_grad();
          const ConstMap<T> wm(wc.data().data(), static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(K));
#pragma omp parallel for schedule(static)
          for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(N); ++ni) {
            const auto n = static_cast<std::size_t>(ni);
            MatRM<T> dcol = wm.transpose() *
                            ConstMap<T>(g.data() + n * F * P, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(P));
            col2im(dcol.data(), C, H, W, kh, kw, attrs.stride, attrs.padding, Ho, Wo,
                   gx.data() + n * C * H * W);
          }
        }
      });
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "fully_connected", "input");
  require_rank(weight, 2, "fully_connected", "weight");
  const auto N = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  require(weight.dim(1) == in, "fully_connected: weight expects " + std::to_string(weight.dim(1)) +
                                   " inputs, got " + std::to_string(in));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_dim,
            "fully_connected: bias shape " + shape_string(bias.shape()) + " does not match " +
                std::to_string(out_dim) + " outputs");
  }
  std::vector<T> out(N * out_dim);
  const auto n_ = static_cast<Eigen::Index>(N), in_ = static_cast<Eigen::Index>(in),
             o_ = static_cast<Eigen::Index>(out_dim);
  MutMap<T> y(out.data(), n_, o_);
  y.noalias() = ConstMap<T>(x.data().data(), n_, in_) * ConstMap<T>(weight.data().data(), o_, in_).transpose();
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += b[c];
    }
  }
  Tensor<T> xc = x, wc = weight, bc = bias;
  return Tensor<T>::make_result(
      Shape{N, out_dim}, std::move(out), {x, weight, bias},
      [=](const std::vector<T>& g) mutable {
        const ConstMap<T> gy(g.data(), n_, o_);
        if (wc.requires_grad()) {
          MutMap<T>(wc.mutable_grad().data(), o_, in_).noalias() +=
              gy.transpose() * ConstMap<T>(xc.data().data(), n_, in_);
        }
        if (bc.defined() && bc.requires_grad()) {
          auto gb = bc.mutable_grad();
          for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
          }
        }
        if (xc.requires_grad()) {
          MutMap<T>(xc.mutable_grad().data(), n_, in_).noalias() +=
              gy * ConstMap<T>(wc.data().data(), o_, in_);
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  require(x.defined(), "relu: input is undefined");
  const auto v = x.data();
  std::vector<T> out(v.size());
  auto mask = std::make_shared<std::vector<std::uint8_t>>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool on = v[i] > T(0);
    (*mask)[i] = on;
    out[i] = on ? v[i] : T(0);
  }
  if (auto* trace = KinkTrace::current()) trace->record_bits(*mask);
  Tensor<T> xc = x;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [=](const std::vector<T>& g) mutable {
    auto gx = xc.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*mask)[i]) gx[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, Pool2dAttrs attrs) {
  require_rank(x, 4, "max_pool2d", "input");
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ho = conv_output_extent(H, attrs.kernel, attrs.stride, 0);
  const auto Wo = conv_output_extent(W, attrs.kernel, attrs.stride, 0);
  const auto v = x.data();
  std::vector<T> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = v.data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * attrs.stride) * W + ox * attrs.stride;
        for (std::size_t ky = 0; ky < attrs.kernel; ++ky) {
          for (std::size_t kx = 0; kx < attrs.kernel; ++kx) {
            const auto idx = (oy * attrs.stride + ky) * W + ox * attrs.stride + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const auto o = (nc * Ho + oy) * Wo + ox;
        out[o] = plane[best];
        (*argmax)[o] = nc * H * W + best;
      }
    }
  }
  if (auto* trace = KinkTrace::current()) {
    for (auto a : *argmax) trace->record(a);
  }
  Tensor<T> xc = x;
  return Tensor<T>::make_result(Shape{N, C, Ho, Wo}, std::move(out), {x},
                                [=](const std::vector<T>& g) mutable {
                                  auto gx = xc.mutable_grad();
                                  for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                                });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const auto N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  const auto v = x.data();
  std::vector<T> out(N * C);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    T s = 0;
    for (std::size_t p = 0; p < P; ++p) s += v[nc * P + p];
    out[nc] = s / static_cast<T>(P);
  }
  Tensor<T> xc = x;
  return Tensor<T>::make_result(Shape{N, C}, std::move(out), {x}, [=](const std::vector<T>& g) mutable {
    auto gx = xc.mutable_grad();
    const T inv = T(1) / static_cast<T>(P);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      for (std::size_t p = 0; p < P; ++p) gx[nc * P + p] += g[nc] * inv;
    }
  });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormBuffers<T>& buffers, BatchNormAttrs attrs) {
  require_rank(x, 4, "batch_norm2d", "input");
  const auto N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  require(gamma.defined() && gamma.numel() == C && beta.defined() && beta.numel() == C,
          "batch_norm2d: scale/shift must have " + std::to_string(C) + " entries");
  require(buffers.running_mean.size() == C && buffers.running_var.size() == C,
          "batch_norm2d: running statistics sized for " +
              std::to_string(buffers.running_mean.size()) + " channels, input has " +
              std::to_string(C));
  const auto M = N * P;
  const auto v = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(v.size());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  std::vector<T> out(v.size());

  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (attrs.training) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t p = 0; p < P; ++p) s += v[(n * C + c) * P + p];
      }
      mean = s / static_cast<double>(M);
      double ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t p = 0; p < P; ++p) {
          const double d = v[(n * C + c) * P + p] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(M);
      const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
      buffers.running_mean[c] =
          static_cast<T>((1.0 - attrs.momentum) * buffers.running_mean[c] + attrs.momentum * mean);
      buffers.running_var[c] =
          static_cast<T>((1.0 - attrs.momentum) * buffers.running_var[c] + attrs.momentum * unbiased);
    } else {
      mean = buffers.running_mean[c];
      var = buffers.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + attrs.eps);
    (*inv_std)[c] = static_cast<T>(is);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t p = 0; p < P; ++p) {
        const auto i = (n * C + c) * P + p;
        const T xh = static_cast<T>((v[i] - mean) * is);
        (*xhat)[i] = xh;
        out[i] = gm[c] * xh + bt[c];
      }
    }
  }

  Tensor<T> xc = x, gc = gamma, bc = beta;
  const bool training = attrs.training;
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, [=](const std::vector<T>& g) mutable {
        const auto gmv = gc.data();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t p = 0; p < P; ++p) {
              const auto i = (n * C + c) * P + p;
              sum_dy[c] += g[i];
              sum_dy_xhat[c] += static_cast<double>(g[i]) * (*xhat)[i];
            }
          }
        }
        if (gc.requires_grad()) {
          auto gg = gc.mutable_grad();
          for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (bc.requires_grad()) {
          auto gb = bc.mutable_grad();
          for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_dy[c]);
        }
        if (xc.requires_grad()) {
          auto gx = xc.mutable_grad();
          const double m = static_cast<double>(M);
          for (std::size_t c = 0; c < C; ++c) {
            const double scale = static_cast<double>(gmv[c]) * (*inv_std)[c];
            for (std::size_t n = 0; n < N; ++n) {
              for (std::size_t p = 0; p < P; ++p) {
                const auto i = (n * C + c) * P + p;
                if (training) {
                  gx[i] += static_cast<T>(scale / m *
                                          (m * g[i] - sum_dy[c] - (*xhat)[i] * sum_dy_xhat[c]));
                } else {
                  gx[i] += static_cast<T>(scale * g[i]);
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), "add: undefined operand");
  require(a.shape() == b.shape(),
          "add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  Tensor<T> ac = a, bc = b;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](const std::vector<T>& g) mutable {
    if (ac.requires_grad()) {
      auto ga = ac.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bc.requires_grad()) {
      auto gb = bc.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), "mul: undefined operand");
  require(a.shape() == b.shape(),
          "mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  Tensor<T> ac = a, bc = b;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](const std::vector<T>& g) mutable {
    const auto avv = ac.data(), bvv = bc.data();
    if (ac.requires_grad()) {
      auto ga = ac.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
    }
    if (bc.requires_grad()) {
      auto gb = bc.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avv[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(x.defined(), "reshape: input is undefined");
  require(shape_numel(shape) == x.numel(), "reshape: cannot view " + shape_string(x.shape()) +
                                               " as " + shape_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  Tensor<T> xc = x;
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x},
                                [=](const std::vector<T>& g) mutable {
                                  auto gx = xc.mutable_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require(x.defined(), "sum: input is undefined");
  T s = 0;
  for (auto v : x.data()) s += v;
  Tensor<T> xc = x;
  return Tensor<T>::make_result(Shape{}, {s}, {x}, [=](const std::vector<T>& g) mutable {
    auto gx = xc.mutable_grad();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.defined() && x.rank() >= 1, "slice_rows: input needs rank >= 1");
  require(begin <= end && end <= x.dim(0), "slice_rows: range [" + std::to_string(begin) + ", " +
                                               std::to_string(end) + ") out of bounds for " +
                                               shape_string(x.shape()));
  const auto row = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                     x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  Tensor<T> xc = x;
  return Tensor<T>::make_result(std::move(s), std::move(out), {x}, [=](const std::vector<T>& g) mutable {
    auto gx = xc.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row + i] += g[i];
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const auto N = logits.dim(0), K = logits.dim(1);
  if (N == 0) fail(ErrorKind::InvalidArgument, kModule, "cross_entropy: empty batch");
  require(labels.size() == N, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(N) + " rows");
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) {
      fail(ErrorKind::InvalidArgument, kModule,
           "cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
               " outside [0, " + std::to_string(K) + ")");
    }
  }
  const auto v = logits.data();
  auto probs = std::make_shared<std::vector<double>>(N * K);
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = v.data() + i * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t k = 0; k < K; ++k) (*probs)[i * K + k] = std::exp(row[k] - log_z);
    total += log_z - row[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor<T> lc = logits;
  return Tensor<T>::make_result(Shape{}, {static_cast<T>(total / static_cast<double>(N))}, {logits},
                                [=](const std::vector<T>& g) mutable {
                                  auto gl = lc.mutable_grad();
                                  const double scale = static_cast<double>(g[0]) / static_cast<double>(N);
                                  for (std::size_t i = 0; i < N; ++i) {
                                    for (std::size_t k = 0; k < K; ++k) {
                                      const double target = static_cast<int>(k) == lab[i] ? 1.0 : 0.0;
                                      gl[i * K + k] += static_cast<T>(scale * ((*probs)[i * K + k] - target));
                                    }
                                  }
                                });
}

namespace {
struct OpName {
  OpKind kind;
  std::string_view name;
};
constexpr OpName kOpNames[] = {
    {OpKind::Conv2d, "conv2d"},
    {OpKind::FullyConnected, "fully_connected"},
    {OpKind::Relu, "relu"},
    {OpKind::MaxPool2d, "max_pool2d"},
    {OpKind::GlobalAvgPool, "global_avg_pool"},
    {OpKind::BatchNorm2d, "batch_norm2d"},
    {OpKind::Add, "add"},
    {OpKind::Mul, "mul"},
    {OpKind::Reshape, "reshape"},
    {OpKind::Sum, "sum"},
};
}  // namespace

OpKind parse_op_kind(std::string_view name) {
  for (const auto& e : kOpNames) {
    if (e.name == name) return e.kind;
  }
  fail(ErrorKind::InvalidArgument, kModule, "unknown op kind '" + std::string(name) + "'");
}

std::string_view op_kind_name(OpKind kind) {
  for (const auto& e : kOpNames) {
    if (e.kind == kind) return e.name;
  }
  return "?";
}

template <typename T>
Tensor<T> forward_op(OpKind kind, std::span<const Tensor<T>> inputs, const OpAttrs<T>& attrs) {
  const auto arity = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      fail(ErrorKind::InvalidArgument, kModule,
           std::string(op_kind_name(kind)) + " takes " + std::to_string(lo) +
               (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
               std::to_string(inputs.size()));
    }
  };
  const Tensor<T> none;
  switch (kind) {
    case OpKind::Conv2d:
      arity(2, 3);
      return conv2d(inputs[0], inputs[1], inputs.size() > 2 ? inputs[2] : none, attrs.conv);
    case OpKind::FullyConnected:
      arity(2, 3);
      return fully_connected(inputs[0], inputs[1], inputs.size() > 2 ? inputs[2] : none);
    case OpKind::Relu:
      arity(1, 1);
      return relu(inputs[0]);
    case OpKind::MaxPool2d:
      arity(1, 1);
      return max_pool2d(inputs[0], attrs.pool);
    case OpKind::GlobalAvgPool:
      arity(1, 1);
      return global_avg_pool(inputs[0]);
    case OpKind::BatchNorm2d:
      arity(3, 3);
      if (!attrs.batch_norm_buffers) {
        fail(ErrorKind::InvalidArgument, kModule, "batch_norm2d needs running-statistics buffers");
      }
      return batch_norm2d(inputs[0], inputs[1], inputs[2], *attrs.batch_norm_buffers, attrs.batch_norm);
    case OpKind::Add:
      arity(2, 2);
      return add(inputs[0], inputs[1]);
    case OpKind::Mul:
      arity(2, 2);
      return mul(inputs[0], inputs[1]);
    case OpKind::Reshape:
      arity(1, 1);
      return reshape(inputs[0], attrs.shape);
    case OpKind::Sum:
      arity(1, 1);
      return sum(inputs[0]);
  }
  fail(ErrorKind::InvalidArgument, kModule, "unhandled op kind");
}

#define POCO_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dAttrs);  \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> max_pool2d(const Tensor<T>&, Pool2dAttrs);                                  \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                  BatchNormBuffers<T>&, BatchNormAttrs);                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                      \
  template Tensor<T> forward_op(OpKind, std::span<const Tensor<T>>, const OpAttrs<T>&);

POCO_INSTANTIATE_OPS(float)
POCO_INSTANTIATE_OPS(double)

#undef POCO_INSTANTIATE_OPS

}  // namespace poco::nn

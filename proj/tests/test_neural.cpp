#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "poco/error.hpp"
#include "poco/ops.hpp"
#include "poco/optim.hpp"
#include "poco/rng.hpp"

using namespace poco;
using namespace poco::nn;

namespace {

Tensor<double> randn(Shape shape, RngStream& rng, bool grad = false, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero so that ReLU and max-pool never sit on a kink.
Tensor<double> away_from_zero(Shape shape, RngStream& rng, bool grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = 0.1 + rng.uniform();
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  RngStream rng(seed, 99);
  auto w = randn(y.shape(), rng);
  return sum(mul(y, w));
}

double check(const std::function<Tensor<double>()>& fn, std::vector<Parameter<double>*> params) {
  GradcheckOptions opt;
  opt.step = 1e-6;
  return finite_difference_gradcheck(fn, params, opt).max_relative_error;
}

}  // namespace

TEST_CASE("relu clamps negatives") {
  const auto y = relu(Tensor<double>::from({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 0, 2});
}

TEST_CASE("1x1 identity convolution and identity fully connected") {
  RngStream rng(1, 1);
  const auto x = randn({2, 3, 5, 4}, rng);
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1;
  const auto y = conv2d(x, Tensor<double>::from({3, 3, 1, 1}, w), Tensor<double>::zeros({3}), {1, 0});
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  const auto v = randn({4, 3}, rng);
  const auto fc = fully_connected(v, Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}),
                                  Tensor<double>::zeros({3}));
  for (std::size_t i = 0; i < v.numel(); ++i) CHECK(fc.data()[i] == v.data()[i]);
}

TEST_CASE("backward of sum and sum of squares") {
  auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  auto z = Tensor<double>::from({2}, {1, 2}, true);
  sum(mul(z, z)).backward();
  CHECK(z.grad()[0] == 2.0);
  CHECK(z.grad()[1] == 4.0);
}

TEST_CASE("backward rejects non-scalars and a second pass") {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), Error);
  auto s = sum(y);
  s.backward();
  CHECK_THROWS_AS(s.backward(), Error);
}

TEST_CASE("conv output extent formula") {
  for (std::size_t in = 3; in <= 20; ++in) {
    for (std::size_t k = 1; k <= 3; ++k) {
      for (std::size_t s = 1; s <= 3; ++s) {
        for (std::size_t p = 0; p <= 2; ++p) {
          if (in + 2 * p < k) continue;
          CHECK(conv_output_extent(in, k, s, p) == (in + 2 * p - k) / s + 1);
        }
      }
    }
  }
  CHECK_THROWS(conv_output_extent(2, 5, 1, 0));
}

TEST_CASE("two-layer network gradients match central differences") {
  RngStream rng(5, 2);
  const auto x = randn({3, 4}, rng);
  Parameter<double> w1{"w1", randn({2, 4}, rng, true)};
  Parameter<double> b1{"b1", Tensor<double>::from({2}, {0.3, -0.2}, true)};
  Parameter<double> w2{"w2", randn({1, 2}, rng, true)};
  Parameter<double> b2{"b2", Tensor<double>::from({1}, {0.1}, true)};
  const auto fn = [&] {
    const auto h = relu(fully_connected(x, w1.tensor, b1.tensor));
    const auto y = fully_connected(h, w2.tensor, b2.tensor);
    return sum(mul(y, y));
  };
  CHECK(check(fn, {&w1, &b1, &w2, &b2}) < 1e-5);
}

TEST_CASE("every differentiable op passes a 64-bit gradient check") {
  RngStream rng(11, 3);
  SUBCASE("conv2d") {
    Parameter<double> x{"x", randn({2, 2, 5, 5}, rng, true)};
    Parameter<double> w{"w", randn({3, 2, 3, 3}, rng, true)};
    Parameter<double> b{"b", randn({3}, rng, true)};
    CHECK(check([&] { return weighted_sum(conv2d(x.tensor, w.tensor, b.tensor, {2, 1}), 1); }, {&x, &w, &b}) <
          1e-5);
  }
  SUBCASE("fully_connected") {
    Parameter<double> x{"x", randn({3, 4}, rng, true)};
    Parameter<double> w{"w", randn({2, 4}, rng, true)};
    Parameter<double> b{"b", randn({2}, rng, true)};
    CHECK(check([&] { return weighted_sum(fully_connected(x.tensor, w.tensor, b.tensor), 2); }, {&x, &w, &b}) <
          1e-5);
  }
  SUBCASE("relu") {
    Parameter<double> x{"x", away_from_zero({4, 5}, rng, true)};
    CHECK(check([&] { return weighted_sum(relu(x.tensor), 3); }, {&x}) < 1e-5);
  }
  SUBCASE("max_pool2d") {
    Parameter<double> x{"x", randn({1, 2, 4, 4}, rng, true)};
    CHECK(check([&] { return weighted_sum(max_pool2d(x.tensor, {2, 2}), 4); }, {&x}) < 1e-5);
  }
  SUBCASE("global_avg_pool") {
    Parameter<double> x{"x", randn({2, 3, 3, 3}, rng, true)};
    CHECK(check([&] { return weighted_sum(global_avg_pool(x.tensor), 5); }, {&x}) < 1e-5);
  }
  SUBCASE("batch_norm2d") {
    Parameter<double> x{"x", randn({3, 2, 3, 3}, rng, true)};
    Parameter<double> g{"g", Tensor<double>::from({2}, {1.2, 0.7}, true)};
    Parameter<double> b{"b", Tensor<double>::from({2}, {0.1, -0.3}, true)};
    CHECK(check(
              [&] {
                BatchNormBuffers<double> buf(2);
                return weighted_sum(batch_norm2d(x.tensor, g.tensor, b.tensor, buf, {}), 6);
              },
              {&x, &g, &b}) < 1e-5);
  }
  SUBCASE("add, mul, reshape, slice_rows") {
    Parameter<double> a{"a", randn({4, 3}, rng, true)};
    Parameter<double> b{"b", randn({4, 3}, rng, true)};
    CHECK(check(
              [&] {
                const auto y = reshape(mul(add(a.tensor, b.tensor), a.tensor), {3, 4});
                return weighted_sum(slice_rows(y, 1, 3), 7);
              },
              {&a, &b}) < 1e-5);
  }
  SUBCASE("cross_entropy") {
    Parameter<double> z{"z", randn({4, 3}, rng, true)};
    const std::vector<int> labels{0, 2, 1, 2};
    CHECK(check([&] { return cross_entropy(z.tensor, labels); }, {&z}) < 1e-5);
  }
}

TEST_CASE("32-bit gradients agree with 32-bit central differences within 1e-2") {
  RngStream rng(12, 4);
  std::vector<float> xv(12), wv(6);
  for (auto& v : xv) v = static_cast<float>(rng.normal());
  for (auto& v : wv) v = static_cast<float>(rng.normal());
  const auto x = Tensor<float>::from({4, 3}, xv);
  const auto loss = [&](const std::vector<float>& w, bool grad) {
    auto wt = Tensor<float>::from({2, 3}, w, grad);
    const auto y = fully_connected(x, wt, Tensor<float>());
    return std::make_pair(sum(mul(y, y)), wt);
  };
  auto [l, wt] = loss(wv, true);
  l.backward();
  const float h = 1e-2f;
  for (std::size_t i = 0; i < wv.size(); ++i) {
    auto plus = wv, minus = wv;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (loss(plus, false).first.item() - loss(minus, false).first.item()) / (2.0 * h);
    const double analytic = wt.grad()[i];
    CHECK(std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-3}) < 1e-2);
  }
}

TEST_CASE("batch norm in training mode normalizes each channel") {
  RngStream rng(13, 5);
  const auto x = randn({4, 3, 5, 5}, rng, false, 3.0);
  BatchNormBuffers<double> buf(3);
  const auto y = batch_norm2d(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), buf, {});
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t k = 0; k < 25; ++k) {
        const double v = y.data()[(n * 3 + c) * 25 + k];
        mean += v;
        sq += v * v;
        ++count;
      }
    }
    mean /= count;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sq / count - mean * mean - 1.0) < 1e-5);
  }
}

TEST_CASE("forward passes are bit-identical") {
  RngStream rng(14, 6);
  const auto x = randn({2, 3, 8, 8}, rng);
  const auto w = randn({4, 3, 3, 3}, rng);
  const auto a = conv2d(x, w, Tensor<double>(), {2, 1});
  const auto b = conv2d(x, w, Tensor<double>(), {2, 1});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("op table round-trips names and dispatches") {
  for (auto kind : {OpKind::Conv2d, OpKind::FullyConnected, OpKind::Relu, OpKind::MaxPool2d, OpKind::GlobalAvgPool,
                    OpKind::BatchNorm2d, OpKind::Add, OpKind::Mul, OpKind::Reshape, OpKind::Sum}) {
    CHECK(parse_op_kind(op_kind_name(kind)) == kind);
  }
  CHECK_THROWS(parse_op_kind("softmax"));
  const std::vector<Tensor<double>> in{Tensor<double>::from({3}, {-1, 0, 2})};
  const auto y = forward_op<double>(OpKind::Relu, in, {});
  CHECK(y.data()[2] == 2.0);
}

TEST_CASE("cross entropy values") {
  const std::vector<int> l0{0, 0}, l1{1};
  CHECK(cross_entropy(Tensor<double>::zeros({2, 4}), l0).item() == doctest::Approx(1.3862943611198906).epsilon(1e-12));
  CHECK(cross_entropy(Tensor<double>::from({1, 2}, {20, -20}), std::vector<int>{0}).item() < 1e-15);
  CHECK(cross_entropy(Tensor<double>::from({1, 2}, {1, 0}), l1).item() ==
        doctest::Approx(1.313261687518223).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(Tensor<double>::from({1, 2}, {1, 0}), std::vector<int>{2}), Error);
}

TEST_CASE("adam updates") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    Parameter<double> p{"p", Tensor<double>::from({2}, {0.5, -1.5}, true)};
    p.tensor.mutable_grad();
    std::vector<Parameter<double>*> ps{&p};
    AdamState<double> st;
    st.options.weight_decay = 0;
    adam_step<double>(ps, st);
    CHECK(p.tensor.data()[0] == 0.5);
    CHECK(p.tensor.data()[1] == -1.5);
  }
  SUBCASE("first step moves by about the learning rate against the gradient") {
    Parameter<double> p{"p", Tensor<double>::from({2}, {0.0, 0.0}, true)};
    p.tensor.mutable_grad()[0] = 3.0;
    p.tensor.mutable_grad()[1] = -0.01;
    std::vector<Parameter<double>*> ps{&p};
    AdamState<double> st;
    st.options.weight_decay = 0;
    adam_step<double>(ps, st);
    CHECK(p.tensor.data()[0] == doctest::Approx(-1e-4).epsilon(1e-6));
    CHECK(p.tensor.data()[1] == doctest::Approx(1e-4).epsilon(1e-5));
  }
  SUBCASE("decay alone shrinks the parameter") {
    Parameter<double> p{"p", Tensor<double>::from({1}, {1.0}, true)};
    p.tensor.mutable_grad();
    std::vector<Parameter<double>*> ps{&p};
    AdamState<double> st;
    st.options.learning_rate = 1e-4;
    st.options.weight_decay = 0.1;
    adam_step<double>(ps, st);
    // g = 0.1, m_hat = 0.1, v_hat = 0.01
    CHECK(p.tensor.data()[0] == doctest::Approx(1.0 - 1e-4 * 0.1 / (0.1 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient names the parameter") {
    Parameter<double> p{"layer.weight", Tensor<double>::from({1}, {1.0}, true)};
    p.tensor.mutable_grad()[0] = std::nan("");
    std::vector<Parameter<double>*> ps{&p};
    AdamState<double> st;
    CHECK_THROWS_WITH(adam_step<double>(ps, st), doctest::Contains("layer.weight"));
  }
}

TEST_CASE("gradcheck harness") {
  RngStream rng(15, 7);
  const auto x = randn({5, 1}, rng);
  Parameter<double> w{"w", Tensor<double>::from({1, 1}, {0.7}, true)};
  SUBCASE("linear model is exact") {
    GradcheckOptions opt;
    const auto rep =
        finite_difference_gradcheck([&] { return sum(fully_connected(x, w.tensor, Tensor<double>())); },
                                    std::vector<Parameter<double>*>{&w}, opt);
    CHECK(rep.max_relative_error < 1e-10);
  }
  SUBCASE("a large step is dominated by truncation error") {
    Parameter<double> v{"v", randn({3, 3}, rng, true)};
    const auto fn = [&] {
      const auto y = mul(v.tensor, v.tensor);
      return sum(mul(mul(y, y), v.tensor));  // fifth powers
    };
    std::vector<Parameter<double>*> ps{&v};
    GradcheckOptions coarse, fine;
    coarse.step = 1e-2;
    fine.step = 1e-5;
    CHECK(finite_difference_gradcheck(fn, ps, coarse).max_relative_error >
          finite_difference_gradcheck(fn, ps, fine).max_relative_error);
  }
  SUBCASE("a non-deterministic loss is rejected") {
    int calls = 0;
    const auto fn = [&] { return sum(mul(w.tensor, Tensor<double>::from({1, 1}, {1.0 + 1e-3 * ++calls}))); };
    CHECK_THROWS_AS(finite_difference_gradcheck(fn, std::vector<Parameter<double>*>{&w}, {}), Error);
  }
}

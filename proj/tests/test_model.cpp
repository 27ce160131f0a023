#include <doctest.h>

#include <numeric>

#include "poco/error.hpp"
#include "poco/model.hpp"
#include "poco/ops.hpp"
#include "poco/optim.hpp"
#include "poco/rng.hpp"

using namespace poco;
using namespace poco::model;

namespace {

nn::Tensor<double> random_images(std::size_t n, std::size_t s, std::uint64_t seed) {
  RngStream rng(seed, 1);
  std::vector<double> v(n * 3 * s * s);
  for (auto& x : v) x = rng.uniform();
  return nn::Tensor<double>::from({n, 3, s, s}, std::move(v));
}

ModelConfig small(std::size_t classes = 3) {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.dims = {32, 16, 8};
  cfg.num_classes = classes;
  return cfg;
}

template <typename T>
bool same_rows(const nn::Tensor<T>& t, std::size_t a, std::size_t b) {
  const auto d = t.dim(1);
  for (std::size_t k = 0; k < d; ++k) {
    if (t.data()[a * d + k] != t.data()[b * d + k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("feature shapes") {
  Model<float> desk(ModelConfig{}, 1);
  std::vector<float> v(4 * 3 * 64 * 64, 0.25f);
  const auto x = nn::Tensor<float>::from({4, 3, 64, 64}, v);
  const auto f = desk.forward_features(x, Mode::Train);
  CHECK(f.f.shape() == nn::Shape{4, 128});
  CHECK(f.h1.shape() == nn::Shape{4, 64});
  CHECK(f.h2.shape() == nn::Shape{4, 32});

  ModelConfig paper;
  paper.input_size = 16;
  paper.dims = {512, 256, 128};
  Model<float> big(paper, 1);
  const auto g = big.forward_features(nn::Tensor<float>::full({2, 3, 16, 16}, 0.5f), Mode::Eval);
  CHECK(g.f.shape() == nn::Shape{2, 512});
  CHECK(g.h1.shape() == nn::Shape{2, 256});
  CHECK(g.h2.shape() == nn::Shape{2, 128});
}

TEST_CASE("config validation and input checks") {
  auto cfg = small();
  cfg.dims = {32, 12, 8};
  CHECK_THROWS_AS(Model<double>(cfg, 0), Error);
  cfg = small();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(Model<double>(cfg, 0), Error);
  Model<double> m(small(), 0);
  CHECK_THROWS_AS(m.forward_features(random_images(2, 8, 1), Mode::Eval), Error);
}

TEST_CASE("identical images give identical feature rows") {
  Model<double> m(small(), 3);
  auto x = random_images(3, 16, 4);
  auto v = std::vector<double>(x.data().begin(), x.data().end());
  std::copy(v.begin(), v.begin() + 3 * 16 * 16, v.begin() + 2 * 3 * 16 * 16);
  const auto f = m.forward_features(nn::Tensor<double>::from(x.shape(), v), Mode::Train);
  CHECK(same_rows(f.f, 0, 2));
  CHECK(same_rows(f.h1, 0, 2));
  CHECK(same_rows(f.h2, 0, 2));
  CHECK_FALSE(same_rows(f.f, 0, 1));
}

TEST_CASE("forward is permutation-equivariant over the batch") {
  Model<double> m(small(), 5);
  const auto x = random_images(4, 16, 6);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const std::size_t per = 3 * 16 * 16;
  std::vector<double> pv(x.numel());
  for (std::size_t i = 0; i < 4; ++i) {
    std::copy_n(x.data().begin() + perm[i] * per, per, pv.begin() + i * per);
  }
  for (auto mode : {Mode::Train, Mode::Eval}) {
    const auto a = m.forward_features(x, mode);
    const auto b = m.forward_features(nn::Tensor<double>::from(x.shape(), pv), mode);
    for (auto s : {FeatureStage::F, FeatureStage::H1, FeatureStage::H2}) {
      const auto& ta = a.at(s);
      const auto& tb = b.at(s);
      const auto d = ta.dim(1);
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          CHECK(tb.data()[i * d + k] == doctest::Approx(ta.data()[perm[i] * d + k]).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("eval mode has no batch coupling") {
  Model<float> m(small(), 7);
  const auto xd = random_images(5, 16, 8);
  const auto x = nn::Tensor<float>::from(xd.shape(), std::vector<float>(xd.data().begin(), xd.data().end()));
  m.forward_features(x, Mode::Train);  // moves the running statistics off their init
  const auto batched = m.forward_features(x, Mode::Eval).f;
  const std::size_t per = 3 * 16 * 16;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<float> one(x.data().begin() + i * per, x.data().begin() + (i + 1) * per);
    const auto single = m.forward_features(nn::Tensor<float>::from({1, 3, 16, 16}, one), Mode::Eval).f;
    for (std::size_t k = 0; k < 32; ++k) CHECK(std::abs(single.data()[k] - batched.data()[i * 32 + k]) < 1e-6);
  }
}

TEST_CASE("classifier head") {
  for (std::size_t k : {2u, 5u}) {
    Model<double> m(small(k), 9);
    const auto f = m.forward_backbone(random_images(3, 16, 10), Mode::Eval);
    const auto logits = m.forward_classifier(f);
    CHECK(logits.shape() == nn::Shape{3, k});

    for (auto* p : m.classifier_parameters()) std::fill(p->tensor.mutable_data().begin(), p->tensor.mutable_data().end(), 0.0);
    const auto zero = m.forward_classifier(f);
    for (double v : zero.data()) CHECK(v == 0.0);

    // one-hot rows copy feature coordinates 3, 7, ...
    auto* w = m.classifier_parameters()[0];
    CHECK(w->tensor.shape() == nn::Shape{k, 32});
    for (std::size_t c = 0; c < k; ++c) w->tensor.mutable_data()[c * 32 + 3 + 4 * c] = 1.0;
    const auto copied = m.forward_classifier(f);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t c = 0; c < k; ++c) CHECK(copied.data()[i * k + c] == f.data()[i * 32 + 3 + 4 * c]);
    }
  }
}

TEST_CASE("frozen backbone is untouched by training steps") {
  Model<float> m(small(), 11);
  m.freeze_backbone();
  const auto before = m.backbone_checksum();
  auto params = m.trainable_parameters(FinetuneScope::AllHeads);
  CHECK(params.size() == m.classifier_parameters().size());
  nn::AdamState<float> st;
  st.options.learning_rate = 1e-2;
  const auto xd = random_images(4, 16, 12);
  const auto x = nn::Tensor<float>::from(xd.shape(), std::vector<float>(xd.data().begin(), xd.data().end()));
  const std::vector<int> labels{0, 1, 2, 1};
  const auto w0 = std::vector<float>(m.classifier_parameters()[0]->tensor.data().begin(),
                                     m.classifier_parameters()[0]->tensor.data().end());
  for (int step = 0; step < 10; ++step) {
    const auto f = m.forward_backbone(x, Mode::Train);
    auto loss = nn::cross_entropy(m.forward_classifier(f), labels);
    loss.backward();
    nn::adam_step<float>(params, st);
    nn::zero_grads<float>(params);
    if (step == 0) {
      const auto w1 = m.classifier_parameters()[0]->tensor.data();
      CHECK_FALSE(std::equal(w1.begin(), w1.end(), w0.begin()));
    }
  }
  CHECK(m.backbone_checksum() == before);

  m.freeze_backbone(false);
  CHECK(m.trainable_parameters(FinetuneScope::AllHeads).size() == m.parameters().size() - 4);
}

TEST_CASE("trainable scope follows the probe stage") {
  auto cfg = small();
  cfg.probe_on = FeatureStage::H2;
  Model<double> m(cfg, 13);
  m.freeze_backbone();
  CHECK(m.trainable_parameters(FinetuneScope::AllHeads).size() == 6);
  CHECK(m.trainable_parameters(FinetuneScope::ClassifierOnly).size() == 2);
  CHECK(m.classifier_input_dim() == 8);
}

TEST_CASE("state round trip") {
  Model<float> a(small(), 14), b(small(), 15);
  CHECK(a.backbone_checksum() != b.backbone_checksum());
  const auto s = a.state();
  b.load_state(s);
  CHECK(b.state() == s);
  CHECK(b.backbone_checksum() == a.backbone_checksum());
  CHECK(s.size() == a.state_size());
  std::size_t scalars = 0;
  for (auto* p : a.parameters()) scalars += p->tensor.numel();
  CHECK(scalars == a.parameter_count());
  auto broken = s;
  broken.pop_back();
  CHECK_THROWS_AS(b.load_state(broken), Error);
}

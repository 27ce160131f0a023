#include <doctest.h>

#include <set>

#include "poco/error.hpp"
#include "poco/pipeline.hpp"

using namespace poco;
using namespace poco::pipeline;

namespace {

TrainConfig tiny(std::size_t batch = 8, std::size_t epochs = 2) {
  TrainConfig cfg;
  cfg.batch_size = batch;
  cfg.epochs = epochs;
  cfg.seed = 21;
  cfg.model.input_size = 16;
  cfg.model.dims = {32, 16, 8};
  cfg.augment.out_size = 16;
  cfg.data.synth.image_size = 16;
  cfg.data.synth.counts = {64, 24, 12, 18};
  cfg.finetune.epochs = 3;
  cfg.finetune.batch_size = 8;
  return cfg;
}

const data::SyntheticDataset& tiny_data() {
  static const auto ds = data::generate_dataset(tiny().data.synth, 5);
  return ds;
}

}  // namespace

TEST_CASE("pretraining records one loss row per full batch") {
  const auto cfg = tiny(32, 2);
  const auto& ds = tiny_data();
  std::vector<std::string> messages;
  const auto r = pretrain(cfg, ds.pretrain, [&](const std::string& m) { messages.push_back(m); });
  CHECK(r.history.records.size() == 4);
  CHECK(r.history.batches_per_epoch == 2);
  CHECK(r.history.epochs() == 2);
  for (const auto& rec : r.history.records) {
    REQUIRE(rec.stages.size() == 3);
    CHECK(rec.total == doctest::Approx(rec.stages[0] + rec.stages[1] + rec.stages[2]).epsilon(1e-5));
  }
  CHECK(contrastive::stage_plan_string(r.plan) == "31/15/7");
  CHECK(messages.front() == "stage plan 31/15/7");
  CHECK(r.checkpoint.metadata.at("phase") == "pretrain");
  CHECK(r.checkpoint.metadata.at("stage_plan") == "31/15/7");
  CHECK(r.label_reads == 0);
  CHECK(r.history.csv().rfind("epoch,batch,l_total,l_stage1,l_stage2,l_stage3\n1,0,", 0) == 0);
}

TEST_CASE("pretraining is deterministic") {
  const auto cfg = tiny();
  const auto& ds = tiny_data();
  const auto a = pretrain(cfg, ds.pretrain), b = pretrain(cfg, ds.pretrain);
  CHECK(serialize(a.checkpoint) == serialize(b.checkpoint));
  CHECK(a.history.csv() == b.history.csv());
  auto other = cfg;
  other.seed = 22;
  CHECK(pretrain(other, ds.pretrain).history.csv() != a.history.csv());
}

TEST_CASE("pretraining never reads labels of a labeled dataset") {
  const auto& ds = tiny_data();
  const auto before = ds.finetune_train.label_reads();
  const auto r = pretrain(tiny(), ds.finetune_train);
  CHECK(r.label_reads == 0);
  CHECK(ds.finetune_train.label_reads() == before);
}

TEST_CASE("without progressive stages only the first stage is trained") {
  auto cfg = tiny();
  cfg.use_pcl = false;
  const auto r = pretrain(cfg, tiny_data().pretrain);
  for (const auto& rec : r.history.records) {
    REQUIRE(rec.stages.size() == 1);
    CHECK(rec.total == rec.stages[0]);
  }
  CHECK(r.history.csv().find(",\n") != std::string::npos);  // empty stage columns
}

TEST_CASE("too few images for a batch") {
  auto cfg = tiny(32);
  CHECK_THROWS_AS(pretrain(cfg, tiny_data().finetune_val), Error);
}

TEST_CASE("view preparation") {
  auto cfg = tiny();
  const auto& img = tiny_data().test.image(0);
  cfg.use_polar = false;
  CHECK_FALSE(make_grid(cfg).has_value());
  CHECK(prepare_input(img, 16, nullptr) == resize(img, 16, 16));
  cfg.use_polar = true;
  const auto grid = make_grid(cfg);
  REQUIRE(grid.has_value());
  CHECK_FALSE(prepare_input(img, 16, &*grid) == resize(img, 16, 16));

  const auto [q, k] = make_views(img, cfg.augment, nullptr, 1, 1, 0);
  const auto [q2, k2] = make_views(img, cfg.augment, nullptr, 1, 1, 0);
  CHECK(q == q2);
  CHECK(k == k2);
  CHECK_FALSE(q == k);
  const auto [q3, k3] = make_views(img, cfg.augment, nullptr, 1, 2, 0);
  CHECK_FALSE(q3 == q);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 1);
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 50);
  CHECK(*std::max_element(a.begin(), a.end()) == 49);
  CHECK(a == epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 3, 2));
  CHECK(a != epoch_order(50, 4, 1));
}

TEST_CASE("moving average") {
  LossHistory h;
  h.batches_per_epoch = 3;
  for (std::size_t e = 1; e <= 3; ++e) {
    for (std::size_t b = 0; b < 3; ++b) h.records.push_back({e, b, static_cast<double>(10 * e + b), {}});
  }
  CHECK(h.moving_average_at_epoch(1, 20) == doctest::Approx(11.0));
  CHECK(h.moving_average_at_epoch(3, 2) == doctest::Approx(31.5));
  CHECK(h.moving_average_at_epoch(2, 4) == doctest::Approx((12 + 20 + 21 + 22) / 4.0));
  CHECK_THROWS_AS(h.moving_average_at_epoch(4), Error);
}

TEST_CASE("fine-tuning keeps the backbone frozen") {
  const auto& ds = tiny_data();
  auto cfg = tiny();
  const auto pre = pretrain(cfg, ds.pretrain);
  const auto backbone = restore_model<float>(pre.checkpoint).backbone_checksum();

  const auto ft = finetune(&pre.checkpoint, cfg, ds.finetune_train, ds.finetune_val);
  CHECK(restore_model<float>(ft.checkpoint).backbone_checksum() == backbone);
  CHECK(ft.curve.size() == cfg.finetune.epochs + 1);
  CHECK(ft.curve.front().epoch == 0);
  CHECK(ft.checkpoint.metadata.at("phase") == "finetune");
  double best = 0;
  for (const auto& p : ft.curve) best = std::max(best, p.val_accuracy);
  CHECK(ft.best_val_accuracy == best);

  auto zero = cfg;
  zero.finetune.epochs = 0;
  const auto ft0 = finetune(&pre.checkpoint, zero, ds.finetune_train, ds.finetune_val);
  CHECK(ft0.curve.size() == 1);
  CHECK(ft0.best_epoch == 0);
  CHECK(restore_model<float>(ft0.checkpoint).backbone_checksum() == backbone);

  auto flipped = cfg;
  flipped.use_polar = false;
  CHECK_THROWS_WITH_AS(finetune(&pre.checkpoint, flipped, ds.finetune_train, ds.finetune_val),
                       doctest::Contains("polar"), Error);
  CHECK_THROWS_AS(finetune(&pre.checkpoint, cfg, ds.pretrain, ds.finetune_val), Error);
}

TEST_CASE("random-init baseline and evaluation") {
  const auto& ds = tiny_data();
  const auto cfg = tiny();
  const auto ft = finetune(nullptr, cfg, ds.finetune_train, ds.finetune_val);
  CHECK(restore_model<float>(ft.checkpoint).backbone_checksum() ==
        model::Model<float>(cfg.model, cfg.seed).backbone_checksum());

  const auto a = evaluate(ft.checkpoint, ds.test), b = evaluate(ft.checkpoint, ds.test);
  CHECK(a.n == ds.test.size());
  CHECK(metrics::to_json(a) == metrics::to_json(b));
  const auto probs = predict_probabilities(ft.checkpoint, ds.test);
  CHECK(probs.size() == ds.test.size() * 3);
  const auto j = evaluation_json(a, ft.checkpoint);
  CHECK(j.contains("config"));
  CHECK(j.at("checkpoint_hash") == checkpoint_hash(ft.checkpoint));

  const auto pre = pretrain(cfg, ds.pretrain);
  CHECK_THROWS_AS(evaluate(pre.checkpoint, ds.test), Error);
  CHECK_THROWS_AS(evaluate(ft.checkpoint, ds.pretrain), Error);

  const auto e = embed(ft.checkpoint, ds.test, model::FeatureStage::H1);
  CHECK(e.n == ds.test.size());
  CHECK(e.dim == 16);
  CHECK(e.features.size() == e.n * e.dim);
  CHECK(e.labels == ds.test.labels());
}

TEST_CASE("train/validation split is stratified and seeded") {
  const auto& src = tiny_data().finetune_train;
  const auto [tr, va] = split_train_val(src, 0.25, 9);
  CHECK(tr.size() + va.size() == src.size());
  CHECK(va.size() == 6);
  for (auto c : va.class_counts()) CHECK(c == 2);
  const auto [tr2, va2] = split_train_val(src, 0.25, 9);
  CHECK(va2.images() == va.images());
  CHECK_THROWS_AS(split_train_val(tiny_data().pretrain, 0.25, 9), Error);
  CHECK_THROWS_AS(split_train_val(src, 1.5, 9), Error);
}

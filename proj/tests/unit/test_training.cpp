#include "ktb/errors.hpp"
#include "ktb/training.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace ktb;

namespace {

struct Rig {
  std::shared_ptr<QMatrix> qmatrix;
  std::shared_ptr<TendencyEstimator> tendency;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<DiscriminationPredictor> predictor;
};

Rig make_rig(const ExperimentConfig& cfg, int nq = 8, int nc = 4) {
  Rig r;
  r.qmatrix = testing::small_qmatrix(nq, nc);
  r.tendency = std::make_shared<TendencyEstimator>(nq, r.qmatrix->num_concepts(), cfg.tendency, cfg.seed + 4);
  r.tendency->freeze();
  r.backbone = make_backbone(cfg.backbone, BackboneDims{cfg.model_dim, cfg.max_len, cfg.aggregation},
                             r.qmatrix, std::vector<bool>(static_cast<std::size_t>(nq), true), cfg.seed);
  r.predictor = std::make_unique<DiscriminationPredictor>(
      r.tendency, PredictorDims{cfg.model_dim, cfg.predictor_hidden_dim}, cfg.seed + 3);
  return r;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.model_dim = 8;
  c.tendency = TendencyDims{4, 3, 6, ConceptAggregation::Sum};
  c.predictor_hidden_dim = 6;
  c.stage2.batch_size = 4;
  c.stage2.max_epochs = 5;
  c.stage2.patience = 3;
  return c;
}

std::vector<const Sequence*> pointers(const std::vector<Sequence>& seqs) {
  std::vector<const Sequence*> out;
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

double max_abs_diff(const TensorSet& a, const TensorSet& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("discrimination MSE examples") {
  const std::vector<double> t{0.2, 0.9, 0.5};
  const std::vector<double> p{0.4, 0.6, 0.5};
  CHECK(disc_mse_loss(t, p) == doctest::Approx((0.04 + 0.09) / 3.0).epsilon(1e-14));
  const std::vector<std::uint8_t> mask{1, 0, 1};
  CHECK(disc_mse_loss(t, p, mask) == doctest::Approx(0.02).epsilon(1e-14));
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK(disc_mse_loss(t, p, none) == 0.0);
  CHECK(disc_mse_loss(t, t) == 0.0);
  CHECK_THROWS_AS(disc_mse_loss(t, std::vector<double>{0.1}), std::invalid_argument);
}

TEST_CASE("discrimination MSE matches a loop oracle") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(150), p(150);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = u(rng);
    p[i] = u(rng);
  }
  long double ref = 0.0L;
  for (std::size_t i = 0; i < t.size(); ++i) ref += (long double)(t[i] - p[i]) * (t[i] - p[i]);
  CHECK(std::abs(disc_mse_loss(t, p) - static_cast<double>(ref / 150.0L)) < 1e-12);
}

TEST_CASE("total loss combines terms with lambda") {
  CHECK(total_loss(0.7, 0.2, 0.0) == 0.7);
  CHECK(total_loss(0.7, 0.2, 1.0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(total_loss(0.7, 0.2, 2.5) == doctest::Approx(1.2).epsilon(1e-15));
}

TEST_CASE("early stopping follows a scripted metric") {
  EarlyStopper s(3);
  CHECK(s.best_epoch() == -1);
  CHECK(s.update(0.60));
  CHECK(s.update(0.65));
  CHECK_FALSE(s.update(0.65));
  CHECK_FALSE(s.update(0.64));
  CHECK_FALSE(s.should_stop());
  CHECK(s.update(0.70));
  CHECK_FALSE(s.update(std::nullopt));
  CHECK_FALSE(s.update(std::numeric_limits<double>::quiet_NaN()));
  CHECK_FALSE(s.update(0.69));
  CHECK(s.should_stop());
  CHECK(s.best_epoch() == 4);
  CHECK(*s.best() == 0.70);
  CHECK(s.epochs_seen() == 8);
  CHECK_THROWS_AS(EarlyStopper(0), ConfigError);
}

TEST_CASE("trainer requires a frozen tendency estimator") {
  auto cfg = small_config();
  auto rig = make_rig(cfg);
  auto live = std::make_shared<TendencyEstimator>(8, rig.qmatrix->num_concepts(), cfg.tendency, 1);
  DiscriminationPredictor pred(live, PredictorDims{cfg.model_dim, cfg.predictor_hidden_dim}, 2);
  CHECK_THROWS_AS(Stage2Trainer(cfg, rig.qmatrix, live, *rig.backbone, pred, {}), FrozenParameterError);
}

TEST_CASE("reference tendency per mode") {
  auto cfg = small_config();
  auto rig = make_rig(cfg, 4, 2);
  std::vector<Sequence> train{{"a", {0, 0, 1, 0}, {1, 1, 0, 0}}, {"b", {1, 2, 0}, {1, 1, 1}}};
  {
    Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
    for (int q = 0; q < 4; ++q) CHECK(tr.reference_tendency(q) == rig.tendency->forward(q, rig.qmatrix->concepts_of(q)));
    CHECK(tr.response_weight_for(0.25) == doctest::Approx(0.25).epsilon(1e-15));
  }
  cfg.mode = RebalanceMode::Freq;
  {
    Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
    CHECK(tr.reference_tendency(0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(tr.reference_tendency(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(tr.reference_tendency(2) == doctest::Approx(1.0 - 1e-6).epsilon(1e-15));
    CHECK(tr.reference_tendency(3) == doctest::Approx(5.0 / 7.0).epsilon(1e-15));
  }
  cfg.mode = RebalanceMode::None;
  {
    Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
    CHECK(tr.response_weight_for(0.01) == 1.0);
  }
}

TEST_CASE("the discrimination loss reaches the backbone through the state") {
  auto cfg = small_config();
  cfg.mode = RebalanceMode::None;
  Rng rng(3);
  const auto seqs = testing::random_sequences(4, 6, 8, rng);
  auto run = [&](double lambda) {
    auto c = cfg;
    c.lambda = lambda;
    c.predictor_dropout = 0.0;
    c.fusion = FusionMode::Adaptive;
    auto rig = make_rig(c);
    Stage2Trainer tr(c, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, seqs);
    const TensorSet before_pred = rig.predictor->params();
    tr.train_step(pointers(seqs));
    return std::make_pair(rig.backbone->params(), max_abs_diff(before_pred, rig.predictor->params()));
  };
  const auto [with, pred_moved] = run(1.0);
  const auto [without, pred_static] = run(0.0);
  CHECK(max_abs_diff(with, without) > 0.0);
  CHECK(pred_moved > 0.0);
  CHECK(pred_static == 0.0);
}

TEST_CASE("framework off reduces to plain backbone training") {
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto cfg = small_config();
    cfg.backbone = kind;
    cfg.mode = RebalanceMode::None;
    cfg.fusion = FusionMode::Kt;
    auto rig = make_rig(cfg);
    auto plain = rig.backbone->clone();
    Rng rng(11);
    const auto seqs = testing::random_sequences(6, 7, 8, rng);
    Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, seqs);
    testing::PlainAdam adam;
    for (int it = 0; it < 5; ++it) {
      const auto l = tr.train_step(pointers(seqs));
      const double ref = testing::plain_backbone_step(*plain, pointers(seqs), adam, cfg.stage2.clip_norm);
      CHECK(std::abs(l.weighted - ref) < 1e-9);
      CHECK(l.disc == 0.0);
    }
    CHECK(max_abs_diff(rig.backbone->params(), plain->params()) < 1e-9);
    const auto ev = tr.evaluate(seqs);
    for (const auto& s : ev.sequences) {
      for (const auto& st : s.steps) CHECK(st.fused == st.kt);
    }
  }
}

TEST_CASE("excluding the first step drops it from the loss") {
  auto cfg = small_config();
  cfg.mode = RebalanceMode::None;
  cfg.fusion = FusionMode::Kt;
  cfg.stage2.include_first_step = false;
  auto rig = make_rig(cfg);
  std::vector<Sequence> seqs{{"a", {0, 1, 2}, {1, 0, 1}}};
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, seqs);
  const auto out = rig.backbone->forward(seqs[0]);
  const double ref = (-std::log(1 - out[1].prob) - std::log(out[2].prob)) / 2.0;
  const auto l = tr.train_step(pointers(seqs));
  CHECK(l.count == 2);
  CHECK(l.weighted == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("joint training overfits a small deterministic corpus") {
  auto cfg = small_config();
  cfg.model_dim = 16;
  cfg.stage2.learning_rate = 1e-2;
  cfg.stage2.predictor_learning_rate = 1e-2;
  auto rig = make_rig(cfg, 6, 3);
  std::vector<Sequence> corpus;
  Rng rng(30);
  for (int i = 0; i < 20; ++i) {
    Sequence s = testing::random_sequence(10, 6, rng, "s" + std::to_string(i));
    for (std::size_t t = 0; t < s.size(); ++t) s.labels[t] = s.questions[t] % 2 == 0 ? 1 : 0;
    corpus.push_back(s);
  }
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, corpus);
  for (int it = 0; it < 200; ++it) tr.train_step(pointers(corpus));
  const auto ev = tr.evaluate(corpus);
  REQUIRE(ev.auc.has_value());
  CHECK(*ev.auc > 0.95);
}

TEST_CASE("training loss decreases over epochs") {
  auto cfg = small_config();
  cfg.stage2.max_epochs = 5;
  cfg.stage2.patience = 5;
  cfg.stage2.learning_rate = 5e-3;
  auto rig = make_rig(cfg);
  Rng rng(7);
  auto train = testing::random_sequences(24, 10, 8, rng);
  for (auto& s : train) {
    for (std::size_t t = 0; t < s.size(); ++t) s.labels[t] = s.questions[t] < 4 ? 1 : 0;
  }
  const auto valid = std::vector<Sequence>(train.begin(), train.begin() + 6);
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
  const auto report = tr.fit(train, valid);
  REQUIRE(report.epochs.size() == 5);
  CHECK(report.epochs.back().train.total < report.epochs.front().train.total);
}

TEST_CASE("fit is deterministic and leaves the tendency estimator untouched") {
  auto cfg = small_config();
  Rng rng(9);
  const auto train = testing::random_sequences(12, 8, 8, rng);
  const auto valid = testing::random_sequences(4, 8, 8, rng);
  auto once = [&] {
    auto rig = make_rig(cfg);
    const TensorSet tendency_before = rig.tendency->params();
    Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
    const auto report = tr.fit(train, valid);
    CHECK(max_abs_diff(tendency_before, rig.tendency->params()) == 0.0);
    CHECK(report.best_epoch >= 0);
    CHECK(report.best_epoch < static_cast<int>(report.epochs.size()));
    return std::make_pair(report.metrics_json(), rig.backbone->params());
  };
  const auto a = once();
  const auto b = once();
  CHECK(a.first == b.first);
  CHECK(max_abs_diff(a.second, b.second) == 0.0);
}

TEST_CASE("fit restores the best epoch") {
  auto cfg = small_config();
  cfg.stage2.max_epochs = 6;
  cfg.stage2.patience = 6;
  Rng rng(13);
  const auto train = testing::random_sequences(12, 8, 8, rng);
  const auto valid = testing::random_sequences(4, 8, 8, rng);
  auto rig = make_rig(cfg);
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
  const auto report = tr.fit(train, valid);
  const auto ev = tr.evaluate(valid);
  REQUIRE(ev.auc.has_value());
  CHECK(*ev.auc == doctest::Approx(*report.best_valid_auc).epsilon(1e-12));
  CHECK(*report.epochs[static_cast<std::size_t>(report.best_epoch)].valid_auc == *report.best_valid_auc);
}

TEST_CASE("non-finite loss aborts without an update") {
  auto cfg = small_config();
  Rng rng(2);
  const auto train = testing::random_sequences(8, 6, 8, rng);
  auto rig = make_rig(cfg);
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
  auto& bias = rig.backbone->params()[rig.backbone->params().size() - 1];
  bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const TensorSet poisoned = rig.backbone->params();
  CHECK_THROWS_AS(tr.train_step(pointers(train)), RuntimeFailure);
  CHECK(tr.steps() == 0);
  CHECK_THROWS_AS(tr.fit(train, train), RuntimeFailure);
  CHECK(tr.steps() == 0);
  for (std::size_t i = 0; i + 1 < poisoned.size(); ++i) CHECK(rig.backbone->params()[i] == poisoned[i]);
}

TEST_CASE("ipw mode weights rare levels up") {
  auto cfg = small_config();
  cfg.mode = RebalanceMode::Ipw;
  auto rig = make_rig(cfg);
  Rng rng(4);
  const auto train = testing::random_sequences(10, 8, 8, rng);
  Stage2Trainer tr(cfg, rig.qmatrix, rig.tendency, *rig.backbone, *rig.predictor, train);
  CHECK(cfg.resolved_fusion() == FusionMode::Kt);
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& s : train) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      mean += tr.response_weight_for(discrimination_score(tr.reference_tendency(s.questions[t]), s.labels[t]));
      ++n;
    }
  }
  CHECK(mean / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-12));
}

}

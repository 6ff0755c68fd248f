#include "ktb/backbone.hpp"
#include "ktb/dkt.hpp"
#include "ktb/errors.hpp"
#include "ktb/metrics.hpp"
#include "ktb/sakt.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <cmath>

using namespace ktb;

namespace {

BackboneDims dims(int d = 8, int max_len = 50) { return BackboneDims{d, max_len, ConceptAggregation::Sum}; }

// Scalar-loop LSTM mirroring the documented DKT layout.
std::vector<double> dkt_oracle(const DktBackbone& m, const QMatrix& qm, const Sequence& s, int d) {
  const auto& p = m.params();
  std::vector<double> h(static_cast<std::size_t>(d), 0.0), c(static_cast<std::size_t>(d), 0.0);
  std::vector<double> probs;
  auto sg = testing::plain_sigmoid;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const int q = s.questions[t];
    const int a = s.labels[t];
    double z = p[DktBackbone::kBias](0, 0) + p[DktBackbone::kQuestionBias](q, 0);
    for (int j = 0; j < d; ++j) {
      double y = p[DktBackbone::kOutputQuestion](q, j);
      for (int k : qm.concepts_of(q)) y += p[DktBackbone::kOutputConcept](k, j);
      z += h[static_cast<std::size_t>(j)] * y;
    }
    probs.push_back(sg(z));
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      double v = p[DktBackbone::kInputQuestion](2 * q + a, j);
      for (int k : qm.concepts_of(q)) v += p[DktBackbone::kInputConcept](2 * k + a, j);
      x[static_cast<std::size_t>(j)] = v;
    }
    std::vector<double> pre(static_cast<std::size_t>(4 * d));
    for (int r = 0; r < 4 * d; ++r) {
      double v = p[DktBackbone::kLstmBias](r, 0);
      for (int j = 0; j < d; ++j) {
        v += p[DktBackbone::kLstmWeight](r, j) * x[static_cast<std::size_t>(j)];
        v += p[DktBackbone::kLstmWeight](r, d + j) * h[static_cast<std::size_t>(j)];
      }
      pre[static_cast<std::size_t>(r)] = v;
    }
    for (int j = 0; j < d; ++j) {
      const auto u = static_cast<std::size_t>(j);
      const auto dd = static_cast<std::size_t>(d);
      const double i = sg(pre[u]);
      const double f = sg(pre[dd + u]);
      const double g = std::tanh(pre[2 * dd + u]);
      const double o = sg(pre[3 * dd + u]);
      c[u] = f * c[u] + i * g;
      h[u] = o * std::tanh(c[u]);
    }
  }
  return probs;
}

std::unique_ptr<Backbone> build(BackboneKind kind, std::shared_ptr<QMatrix> qm, int d = 8,
                                std::uint64_t seed = 5) {
  return make_backbone(kind, dims(d), qm, std::vector<bool>(qm->num_questions(), true), seed);
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("kind names round trip") {
  for (auto k : {BackboneKind::Dkt, BackboneKind::Sakt, BackboneKind::Akt, BackboneKind::Lpkt}) {
    CHECK(parse_backbone_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_backbone_kind("transformer"), ConfigError);
}

TEST_CASE("unprovided backbones are rejected") {
  auto qm = testing::small_qmatrix(5, 3);
  CHECK_THROWS_AS(build(BackboneKind::Akt, qm), ConfigError);
  CHECK_THROWS_AS(build(BackboneKind::Lpkt, qm), ConfigError);
}

TEST_CASE("DKT forward matches a scalar oracle") {
  auto qm = testing::small_qmatrix(7, 4);
  DktBackbone m(dims(6), qm, std::vector<bool>(7, true), 11);
  Rng rng(2);
  fill_normal(m.params()[DktBackbone::kQuestionBias], 0.5, rng);
  fill_normal(m.params()[DktBackbone::kLstmBias], 0.3, rng);
  const auto s = testing::random_sequence(12, 7, rng);
  const auto out = m.forward(s);
  const auto ref = dkt_oracle(m, *qm, s, 6);
  for (std::size_t t = 0; t < s.size(); ++t) CHECK(std::abs(out[t].prob - ref[t]) < 1e-10);
}

TEST_CASE("first step reads a zero state") {
  auto qm = testing::small_qmatrix(4, 2);
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto m = build(kind, qm);
    for (std::size_t i = 0; i < m->params().size(); ++i) {
      const auto& name = m->params().name(i);
      if (name == "bias" || name == "question_bias") m->params()[i].setZero();
    }
    Sequence s{"one", {2}, {1}};
    const auto out = m->forward(s);
    REQUIRE(out.size() == 1);
    CHECK(out[0].state.isZero(0.0));
    if (kind == BackboneKind::Dkt) CHECK(out[0].prob == 0.5);
    CHECK(static_cast<int>(out[0].state.size()) == m->state_dim());
  }
}

TEST_CASE("predictions are causal") {
  auto qm = testing::small_qmatrix(9, 4);
  Rng rng(8);
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto m = build(kind, qm);
    const auto s = testing::random_sequence(10, 9, rng);
    const auto base = m->forward(s);
    for (std::size_t k = 0; k < s.size(); ++k) {
      Sequence label_flip = s;
      label_flip.labels[k] = 1 - label_flip.labels[k];
      const auto out = m->forward(label_flip);
      for (std::size_t t = 0; t <= k; ++t) CHECK(out[t].prob == base[t].prob);
      if (k + 1 < s.size()) CHECK(out[k + 1].prob != base[k + 1].prob);
      Sequence q_change = s;
      q_change.questions[k] = (q_change.questions[k] + 1) % 9;
      const auto out2 = m->forward(q_change);
      for (std::size_t t = 0; t < k; ++t) CHECK(out2[t].prob == base[t].prob);
    }
  }
}

TEST_CASE("analytic gradients match finite differences") {
  auto qm = testing::small_qmatrix(6, 3, true);
  Rng rng(21);
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    for (std::size_t len : {2u, 5u}) {
      auto m = build(kind, qm, 5, 17);
      const auto s = testing::random_sequence(len, 6, rng);
      CHECK(backbone_gradient_check(*m, s) < 1e-3);
    }
  }
}

TEST_CASE("rows of questions absent from the sequence get zero gradient") {
  auto qm = testing::small_qmatrix(8, 8);
  Sequence s{"s", {0, 1, 0, 1}, {1, 0, 0, 1}};
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto m = build(kind, qm);
    TensorSet grads = m->params().zeros_like();
    backbone_bce(*m, s, &grads);
    const std::size_t id_rows = 0;
    const std::size_t concept_rows = 1;
    for (int q = 2; q < 8; ++q) {
      CHECK(grads[id_rows].row(2 * q).isZero(0.0));
      CHECK(grads[id_rows].row(2 * q + 1).isZero(0.0));
    }
    // Questions 0 and 1 cover concepts 0 and 1 only.
    for (int c = 2; c < 8; ++c) CHECK(grads[concept_rows].row(2 * c).isZero(0.0));
    CHECK_FALSE((grads[id_rows].row(0).isZero(0.0) && grads[id_rows].row(1).isZero(0.0)));
  }
}

TEST_CASE("questions without a trained id use only their concepts") {
  auto qm = testing::small_qmatrix(4, 2);
  std::vector<bool> known{true, true, true, false};
  auto m = make_backbone(BackboneKind::Dkt, dims(), qm, known, 3);
  CHECK(m->params()[DktBackbone::kOutputQuestion].row(3).isZero(0.0));
  Sequence s{"s", {3, 0, 3}, {1, 0, 1}};
  TensorSet grads = m->params().zeros_like();
  backbone_bce(*m, s, &grads);
  CHECK(grads[DktBackbone::kOutputQuestion].row(3).isZero(0.0));
  CHECK(grads[DktBackbone::kQuestionBias](3, 0) == 0.0);
  CHECK(m->known_questions() == known);
}

TEST_CASE("SAKT attention is a distribution over the past") {
  auto qm = testing::small_qmatrix(6, 3);
  SaktBackbone m(dims(), qm, std::vector<bool>(6, true), 4);
  Rng rng(9);
  const auto s = testing::random_sequence(9, 6, rng);
  const auto w = m.attention_weights(s);
  REQUIRE(w.size() == s.size());
  CHECK(w[0].empty());
  for (std::size_t t = 1; t < w.size(); ++t) {
    REQUIRE(w[t].size() == t);
    double sum = 0.0;
    for (double v : w[t]) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("SAKT rejects sequences beyond max_len") {
  auto qm = testing::small_qmatrix(3, 2);
  SaktBackbone m(dims(4, 3), qm, {}, 1);
  Sequence s{"s", {0, 1, 2, 0}, {0, 1, 1, 0}};
  CHECK_THROWS_AS(m.forward(s), std::invalid_argument);
}

TEST_CASE("empty sequences are rejected") {
  auto qm = testing::small_qmatrix(3, 2);
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto m = build(kind, qm);
    CHECK_THROWS_AS(m->forward(Sequence{}), std::invalid_argument);
  }
}

TEST_CASE("save and load reproduce predictions") {
  auto qm = testing::small_qmatrix(6, 3);
  Rng rng(4);
  const auto s = testing::random_sequence(8, 6, rng);
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    testing::TempDir tmp;
    std::vector<bool> known{true, false, true, true, false, true};
    auto m = make_backbone(kind, dims(), qm, known, 2);
    round_to_float32(m->params());
    m->save(tmp.path());
    auto loaded = load_backbone(tmp.path(), qm);
    CHECK(loaded->kind() == kind);
    CHECK(loaded->known_questions() == known);
    const auto a = m->forward(s);
    const auto b = loaded->forward(s);
    for (std::size_t t = 0; t < s.size(); ++t) CHECK(a[t].prob == b[t].prob);
  }
}

TEST_CASE("loading against a different Q-matrix fails") {
  testing::TempDir tmp;
  auto qm = testing::small_qmatrix(6, 3);
  build(BackboneKind::Dkt, qm)->save(tmp.path());
  CHECK_THROWS(load_backbone(tmp.path(), testing::small_qmatrix(7, 3)));
}

TEST_CASE("questions_seen marks answered questions") {
  std::vector<Sequence> seqs{{"a", {0, 2}, {1, 0}}, {"b", {2, 4}, {1, 1}}};
  CHECK(questions_seen(seqs, 6) == std::vector<bool>{true, false, true, false, true, false});
}

TEST_CASE("backbones overfit a small deterministic corpus") {
  // Question q is answered correctly iff q is even.
  auto qm = testing::small_qmatrix(6, 3);
  std::vector<Sequence> corpus;
  Rng rng(30);
  for (int i = 0; i < 20; ++i) {
    Sequence s = testing::random_sequence(10, 6, rng, "s" + std::to_string(i));
    for (std::size_t t = 0; t < s.size(); ++t) s.labels[t] = s.questions[t] % 2 == 0 ? 1 : 0;
    corpus.push_back(s);
  }
  for (auto kind : {BackboneKind::Dkt, BackboneKind::Sakt}) {
    auto m = build(kind, qm, 16, 9);
    testing::PlainAdam adam;
    adam.lr = 1e-2;
    std::vector<const Sequence*> batch;
    for (const auto& s : corpus) batch.push_back(&s);
    for (int it = 0; it < 200; ++it) testing::plain_backbone_step(*m, batch, adam, 5.0);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : corpus) {
      const auto out = m->forward(s);
      for (std::size_t t = 0; t < s.size(); ++t) {
        scores.push_back(out[t].prob);
        labels.push_back(s.labels[t]);
      }
    }
    const auto a = auc(scores, labels);
    REQUIRE(a.has_value());
    CHECK(*a > 0.95);
  }
}

TEST_CASE("backbone_bce matches mean cross-entropy") {
  auto qm = testing::small_qmatrix(5, 2);
  auto m = build(BackboneKind::Sakt, qm);
  Rng rng(6);
  const auto s = testing::random_sequence(7, 5, rng);
  const auto out = m->forward(s);
  double ref = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t) {
    ref -= s.labels[t] ? std::log(out[t].prob) : std::log(1 - out[t].prob);
  }
  CHECK(backbone_bce(*m, s, nullptr) == doctest::Approx(ref / 7.0).epsilon(1e-12));
}

}

#include "ktb/dkt.hpp"

#include "ktb/errors.hpp"

#include <cmath>

namespace ktb {

namespace {

struct DktTrace final : BackboneTrace {
  const Sequence* seq = nullptr;
  std::vector<Vector> x;        // input embeddings
  std::vector<Vector> y;        // output question embeddings
  std::vector<Vector> h;        // h[t] = state after consuming step t
  std::vector<Vector> c;        // cell state after step t
  std::vector<Vector> gates;    // activated [i; f; g; o]
  std::vector<Vector> tanh_c;
  std::vector<bool> clamped;    // prediction hit the probability clamp
};

Vector sigmoid_vec(const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

}  // namespace

DktBackbone::DktBackbone(const BackboneDims& dims, std::shared_ptr<const QMatrix> qmatrix,
                         std::vector<bool> known, std::uint64_t seed)
    : dims_(dims), qmatrix_(std::move(qmatrix)), known_(std::move(known)) {
  if (dims_.model_dim <= 0) throw ConfigError("model dimension must be positive");
  const auto nq = static_cast<Eigen::Index>(qmatrix_->num_questions());
  const auto nc = static_cast<Eigen::Index>(qmatrix_->num_concepts());
  if (known_.size() != qmatrix_->num_questions()) known_.assign(qmatrix_->num_questions(), true);
  const int d = dims_.model_dim;
  params_.add("input_question", 2 * nq, d);
  params_.add("input_concept", 2 * nc, d);
  params_.add("lstm_weight", 4 * d, 2 * d);
  params_.add("lstm_bias", 4 * d, 1);
  params_.add("output_question", nq, d);
  params_.add("output_concept", nc, d);
  params_.add("question_bias", nq, 1);
  params_.add("bias", 1, 1);
  Rng rng(seed);
  fill_normal(params_[kInputQuestion], 0.1, rng);
  fill_normal(params_[kInputConcept], 0.1, rng);
  fill_glorot(params_[kLstmWeight], rng);
  params_[kLstmBias].block(d, 0, d, 1).setOnes();  // forget gate
  fill_normal(params_[kOutputQuestion], 0.1, rng);
  fill_normal(params_[kOutputConcept], 0.1, rng);
  for (std::size_t q = 0; q < known_.size(); ++q) {
    if (!known_[q]) {
      const auto r = static_cast<Eigen::Index>(q);
      params_[kInputQuestion].row(2 * r).setZero();
      params_[kInputQuestion].row(2 * r + 1).setZero();
      params_[kOutputQuestion].row(r).setZero();
    }
  }
}

double DktBackbone::concept_scale(int question) const {
  if (dims_.aggregation == ConceptAggregation::Sum) return 1.0;
  return 1.0 / static_cast<double>(qmatrix_->concepts_of(question).size());
}

Vector DktBackbone::input_embedding(int question, int label) const {
  Vector x = Vector::Zero(dims_.model_dim);
  if (known_[static_cast<std::size_t>(question)]) {
    x = params_[kInputQuestion].row(2 * question + label).transpose();
  }
  const double s = concept_scale(question);
  for (int c : qmatrix_->concepts_of(question)) {
    x += s * params_[kInputConcept].row(2 * c + label).transpose();
  }
  return x;
}

Vector DktBackbone::output_embedding(int question) const {
  Vector y = Vector::Zero(dims_.model_dim);
  if (known_[static_cast<std::size_t>(question)]) {
    y = params_[kOutputQuestion].row(question).transpose();
  }
  const double s = concept_scale(question);
  for (int c : qmatrix_->concepts_of(question)) {
    y += s * params_[kOutputConcept].row(c).transpose();
  }
  return y;
}

std::vector<BackboneStepOutput> DktBackbone::forward(const Sequence& seq,
                                                     std::unique_ptr<BackboneTrace>* trace) const {
  const std::size_t n = seq.size();
  if (n == 0) throw std::invalid_argument("empty sequence");
  const int d = dims_.model_dim;
  const auto& w = params_[kLstmWeight];
  const auto wx = w.leftCols(d);
  const auto wh = w.rightCols(d);
  const Vector b = params_[kLstmBias].col(0);

  auto t_ptr = std::make_unique<DktTrace>();
  auto& tr = *t_ptr;
  tr.seq = &seq;
  tr.x.resize(n);
  tr.y.resize(n);
  tr.h.resize(n);
  tr.c.resize(n);
  tr.gates.resize(n);
  tr.tanh_c.resize(n);
  tr.clamped.resize(n);

  std::vector<BackboneStepOutput> out(n);
  Vector h = Vector::Zero(d);
  Vector c = Vector::Zero(d);
  for (std::size_t t = 0; t < n; ++t) {
    const int q = seq.questions[t];
    const int a = seq.labels[t];
    // Prediction for step t from the state before its response.
    tr.y[t] = output_embedding(q);
    double bias = params_[kBias](0, 0);
    if (known_[static_cast<std::size_t>(q)]) bias += params_[kQuestionBias](q, 0);
    const double z = h.dot(tr.y[t]) + bias;
    const double raw = sigmoid(z);
    out[t].logit = z;
    out[t].prob = clamp_probability(raw);
    out[t].state = h;
    tr.clamped[t] = raw != out[t].prob;

    // Consume response t.
    tr.x[t] = input_embedding(q, a);
    const Vector pre = wx * tr.x[t] + wh * h + b;
    Vector g(4 * d);
    g.segment(0, d) = sigmoid_vec(pre.segment(0, d));
    g.segment(d, d) = sigmoid_vec(pre.segment(d, d));
    g.segment(2 * d, d) = pre.segment(2 * d, d).array().tanh().matrix();
    g.segment(3 * d, d) = sigmoid_vec(pre.segment(3 * d, d));
    c = g.segment(d, d).cwiseProduct(c) + g.segment(0, d).cwiseProduct(g.segment(2 * d, d));
    tr.tanh_c[t] = c.array().tanh().matrix();
    h = g.segment(3 * d, d).cwiseProduct(tr.tanh_c[t]);
    tr.gates[t] = std::move(g);
    tr.c[t] = c;
    tr.h[t] = h;
  }
  if (trace != nullptr) *trace = std::move(t_ptr);
  return out;
}

void DktBackbone::backward(const BackboneTrace& trace_base, std::span<const double> dlogit,
                           std::span<const Vector> dstate, TensorSet& grads) const {
  const auto& tr = dynamic_cast<const DktTrace&>(trace_base);
  const Sequence& seq = *tr.seq;
  const std::size_t n = seq.size();
  if (dlogit.size() != n || (!dstate.empty() && dstate.size() != n)) {
    throw std::invalid_argument("DKT backward: gradient length mismatch");
  }
  const int d = dims_.model_dim;
  const auto& w = params_[kLstmWeight];
  Vector zero = Vector::Zero(d);

  Vector dh = Vector::Zero(d);  // dL/dh[t] flowing from later steps
  Vector dc = Vector::Zero(d);
  Vector xh(2 * d);
  for (std::size_t t = n; t-- > 0;) {
    const int q = seq.questions[t];
    const int a = seq.labels[t];
    const bool known = known_[static_cast<std::size_t>(q)];
    const double s = concept_scale(q);

    // LSTM step t: h[t], c[t] from x[t], h[t-1], c[t-1].
    const Vector& g = tr.gates[t];
    const Vector& h_prev = t > 0 ? tr.h[t - 1] : zero;
    const Vector& c_prev = t > 0 ? tr.c[t - 1] : zero;
    const auto gi = g.segment(0, d);
    const auto gf = g.segment(d, d);
    const auto gg = g.segment(2 * d, d);
    const auto go = g.segment(3 * d, d);
    const Vector& tc = tr.tanh_c[t];
    const Vector dc_total =
        dc + dh.cwiseProduct(go).cwiseProduct((1.0 - tc.array().square()).matrix());
    Vector dpre(4 * d);
    dpre.segment(0, d) = dc_total.cwiseProduct(gg).cwiseProduct(gi.cwiseProduct((1.0 - gi.array()).matrix()));
    dpre.segment(d, d) = dc_total.cwiseProduct(c_prev).cwiseProduct(gf.cwiseProduct((1.0 - gf.array()).matrix()));
    dpre.segment(2 * d, d) = dc_total.cwiseProduct(gi).cwiseProduct((1.0 - gg.array().square()).matrix());
    dpre.segment(3 * d, d) = dh.cwiseProduct(tc).cwiseProduct(go.cwiseProduct((1.0 - go.array()).matrix()));
    xh.head(d) = tr.x[t];
    xh.tail(d) = h_prev;
    grads[kLstmWeight].noalias() += dpre * xh.transpose();
    grads[kLstmBias].col(0) += dpre;
    const Vector dxh = w.transpose() * dpre;
    if (known) grads[kInputQuestion].row(2 * q + a) += dxh.head(d).transpose();
    for (int c : qmatrix_->concepts_of(q)) {
      grads[kInputConcept].row(2 * c + a) += s * dxh.head(d).transpose();
    }
    Vector dh_prev = dxh.tail(d);
    dc = dc_total.cwiseProduct(gf);

    // Readout of step t uses h[t-1].
    const double dz = tr.clamped[t] ? 0.0 : dlogit[t];
    if (dz != 0.0) {
      dh_prev += dz * tr.y[t];
      const Vector dy = dz * h_prev;
      if (known) {
        grads[kOutputQuestion].row(q) += dy.transpose();
        grads[kQuestionBias](q, 0) += dz;
      }
      for (int c : qmatrix_->concepts_of(q)) grads[kOutputConcept].row(c) += s * dy.transpose();
      grads[kBias](0, 0) += dz;
    }
    if (!dstate.empty()) dh_prev += dstate[t];
    dh = std::move(dh_prev);
  }
}

nlohmann::json DktBackbone::describe() const {
  return {{"model", "backbone"},
          {"backbone", "dkt"},
          {"model_dim", dims_.model_dim},
          {"state_dim", dims_.model_dim},
          {"max_len", dims_.max_len},
          {"aggregation", to_string(dims_.aggregation)},
          {"num_questions", qmatrix_->num_questions()},
          {"num_concepts", qmatrix_->num_concepts()}};
}

}  // namespace ktb

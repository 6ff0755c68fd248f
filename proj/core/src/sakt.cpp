#include "ktb/sakt.hpp"

#include "ktb/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ktb {

namespace {

struct SaktTrace final : BackboneTrace {
  const Sequence* seq = nullptr;
  Matrix x;      // d x n interaction embeddings
  Matrix u;      // d x n query embeddings
  Matrix keys;   // Wk x
  Matrix values; // Wv x
  Matrix query;  // Wq u
  std::vector<Vector> alpha;  // alpha[t] has t entries
  Matrix ctx;    // d x n
  Matrix h1;     // d x n
  Matrix ff_pre; // d x n
  Matrix h2;     // d x n
  std::vector<bool> clamped;
};

}  // namespace

SaktBackbone::SaktBackbone(const BackboneDims& dims, std::shared_ptr<const QMatrix> qmatrix,
                           std::vector<bool> known, std::uint64_t seed)
    : dims_(dims), qmatrix_(std::move(qmatrix)), known_(std::move(known)) {
  if (dims_.model_dim <= 0 || dims_.max_len <= 0) {
    throw ConfigError("SAKT dimensions must be positive");
  }
  const auto nq = static_cast<Eigen::Index>(qmatrix_->num_questions());
  const auto nc = static_cast<Eigen::Index>(qmatrix_->num_concepts());
  if (known_.size() != qmatrix_->num_questions()) known_.assign(qmatrix_->num_questions(), true);
  const int d = dims_.model_dim;
  params_.add("interaction_question", 2 * nq, d);
  params_.add("interaction_concept", 2 * nc, d);
  params_.add("position", dims_.max_len, d);
  params_.add("query_question", nq, d);
  params_.add("query_concept", nc, d);
  params_.add("wq", d, d);
  params_.add("wk", d, d);
  params_.add("wv", d, d);
  params_.add("wo", d, d);
  params_.add("bo", d, 1);
  params_.add("f1", d, d);
  params_.add("b1", d, 1);
  params_.add("f2", d, d);
  params_.add("b2", d, 1);
  params_.add("readout", 1, d);
  params_.add("question_bias", nq, 1);
  params_.add("bias", 1, 1);
  Rng rng(seed);
  fill_normal(params_[kInteractionQuestion], 0.1, rng);
  fill_normal(params_[kInteractionConcept], 0.1, rng);
  fill_normal(params_[kPosition], 0.1, rng);
  fill_normal(params_[kQueryQuestion], 0.1, rng);
  fill_normal(params_[kQueryConcept], 0.1, rng);
  for (auto t : {kWq, kWk, kWv, kWo, kF1, kF2, kReadout}) fill_glorot(params_[t], rng);
  for (std::size_t q = 0; q < known_.size(); ++q) {
    if (!known_[q]) {
      const auto r = static_cast<Eigen::Index>(q);
      params_[kInteractionQuestion].row(2 * r).setZero();
      params_[kInteractionQuestion].row(2 * r + 1).setZero();
      params_[kQueryQuestion].row(r).setZero();
    }
  }
}

double SaktBackbone::concept_scale(int question) const {
  if (dims_.aggregation == ConceptAggregation::Sum) return 1.0;
  return 1.0 / static_cast<double>(qmatrix_->concepts_of(question).size());
}

std::vector<BackboneStepOutput> SaktBackbone::forward(const Sequence& seq,
                                                      std::unique_ptr<BackboneTrace>* trace) const {
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (n == 0) throw std::invalid_argument("empty sequence");
  if (n > dims_.max_len) {
    throw std::invalid_argument(
        fmt::format("sequence of length {} exceeds SAKT max_len {}", n, dims_.max_len));
  }
  const int d = dims_.model_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  auto t_ptr = std::make_unique<SaktTrace>();
  auto& tr = *t_ptr;
  tr.seq = &seq;
  tr.x = Matrix::Zero(d, n);
  tr.u = Matrix::Zero(d, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const int q = seq.questions[static_cast<std::size_t>(t)];
    const int a = seq.labels[static_cast<std::size_t>(t)];
    const double s = concept_scale(q);
    if (known_[static_cast<std::size_t>(q)]) {
      tr.x.col(t) = params_[kInteractionQuestion].row(2 * q + a).transpose();
      tr.u.col(t) = params_[kQueryQuestion].row(q).transpose();
    }
    for (int c : qmatrix_->concepts_of(q)) {
      tr.x.col(t) += s * params_[kInteractionConcept].row(2 * c + a).transpose();
      tr.u.col(t) += s * params_[kQueryConcept].row(c).transpose();
    }
    tr.x.col(t) += params_[kPosition].row(t).transpose();
  }
  tr.keys = params_[kWk] * tr.x;
  tr.values = params_[kWv] * tr.x;
  tr.query = params_[kWq] * tr.u;
  tr.ctx = Matrix::Zero(d, n);
  tr.alpha.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 1; t < n; ++t) {
    Vector scores = tr.keys.leftCols(t).transpose() * tr.query.col(t) * inv_sqrt_d;
    const double mx = scores.maxCoeff();
    Vector e = (scores.array() - mx).exp().matrix();
    e /= e.sum();
    tr.ctx.col(t) = tr.values.leftCols(t) * e;
    tr.alpha[static_cast<std::size_t>(t)] = std::move(e);
  }
  tr.h1 = (params_[kWo] * tr.ctx).colwise() + params_[kBo].col(0);
  tr.h1 += tr.u;
  tr.ff_pre = (params_[kF1] * tr.h1).colwise() + params_[kB1].col(0);
  tr.h2 = (params_[kF2] * tr.ff_pre.cwiseMax(0.0)).colwise() + params_[kB2].col(0);
  tr.h2 += tr.h1;
  const Eigen::RowVectorXd logits = params_[kReadout] * tr.h2;

  std::vector<BackboneStepOutput> out(static_cast<std::size_t>(n));
  tr.clamped.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const int q = seq.questions[static_cast<std::size_t>(t)];
    double z = logits[t] + params_[kBias](0, 0);
    if (known_[static_cast<std::size_t>(q)]) z += params_[kQuestionBias](q, 0);
    const double raw = sigmoid(z);
    auto& o = out[static_cast<std::size_t>(t)];
    o.logit = z;
    o.prob = clamp_probability(raw);
    o.state = tr.ctx.col(t);
    tr.clamped[static_cast<std::size_t>(t)] = raw != o.prob;
  }
  if (trace != nullptr) *trace = std::move(t_ptr);
  return out;
}

void SaktBackbone::backward(const BackboneTrace& trace_base, std::span<const double> dlogit,
                            std::span<const Vector> dstate, TensorSet& grads) const {
  const auto& tr = dynamic_cast<const SaktTrace&>(trace_base);
  const Sequence& seq = *tr.seq;
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (static_cast<Eigen::Index>(dlogit.size()) != n ||
      (!dstate.empty() && static_cast<Eigen::Index>(dstate.size()) != n)) {
    throw std::invalid_argument("SAKT backward: gradient length mismatch");
  }
  const int d = dims_.model_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Eigen::RowVectorXd dz(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    dz[t] = tr.clamped[ts] ? 0.0 : dlogit[ts];
    const int q = seq.questions[ts];
    if (known_[static_cast<std::size_t>(q)]) grads[kQuestionBias](q, 0) += dz[t];
  }
  grads[kBias](0, 0) += dz.sum();
  grads[kReadout] += dz * tr.h2.transpose();
  // Readout -> h2 -> feed-forward -> h1.
  const Matrix dh2 = params_[kReadout].transpose() * dz;  // d x n
  const Matrix relu = tr.ff_pre.cwiseMax(0.0);
  grads[kF2] += dh2 * relu.transpose();
  grads[kB2].col(0) += dh2.rowwise().sum();
  const Matrix drelu = params_[kF2].transpose() * dh2;
  const Matrix dff = (tr.ff_pre.array() > 0.0).select(drelu, 0.0);
  grads[kF1] += dff * tr.h1.transpose();
  grads[kB1].col(0) += dff.rowwise().sum();
  const Matrix dh1 = dh2 + params_[kF1].transpose() * dff;
  // h1 = Wo ctx + bo + u.
  grads[kWo] += dh1 * tr.ctx.transpose();
  grads[kBo].col(0) += dh1.rowwise().sum();
  Matrix dctx = params_[kWo].transpose() * dh1;
  if (!dstate.empty()) {
    for (Eigen::Index t = 0; t < n; ++t) dctx.col(t) += dstate[static_cast<std::size_t>(t)];
  }
  Matrix du = dh1;

  // Attention.
  Matrix dkeys = Matrix::Zero(d, n);
  Matrix dvalues = Matrix::Zero(d, n);
  Matrix dquery = Matrix::Zero(d, n);
  for (Eigen::Index t = 1; t < n; ++t) {
    const Vector& alpha = tr.alpha[static_cast<std::size_t>(t)];
    const Vector dc = dctx.col(t);
    const Vector dalpha = tr.values.leftCols(t).transpose() * dc;
    dvalues.leftCols(t).noalias() += dc * alpha.transpose();
    const double mean = alpha.dot(dalpha);
    const Vector dscore = alpha.cwiseProduct((dalpha.array() - mean).matrix()) * inv_sqrt_d;
    dquery.col(t) = tr.keys.leftCols(t) * dscore;
    dkeys.leftCols(t).noalias() += tr.query.col(t) * dscore.transpose();
  }
  grads[kWq] += dquery * tr.u.transpose();
  grads[kWk] += dkeys * tr.x.transpose();
  grads[kWv] += dvalues * tr.x.transpose();
  du += params_[kWq].transpose() * dquery;
  const Matrix dx = params_[kWk].transpose() * dkeys + params_[kWv].transpose() * dvalues;

  for (Eigen::Index t = 0; t < n; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const int q = seq.questions[ts];
    const int a = seq.labels[ts];
    const double s = concept_scale(q);
    if (known_[static_cast<std::size_t>(q)]) {
      grads[kInteractionQuestion].row(2 * q + a) += dx.col(t).transpose();
      grads[kQueryQuestion].row(q) += du.col(t).transpose();
    }
    for (int c : qmatrix_->concepts_of(q)) {
      grads[kInteractionConcept].row(2 * c + a) += s * dx.col(t).transpose();
      grads[kQueryConcept].row(c) += s * du.col(t).transpose();
    }
    grads[kPosition].row(t) += dx.col(t).transpose();
  }
}

std::vector<std::vector<double>> SaktBackbone::attention_weights(const Sequence& seq) const {
  std::unique_ptr<BackboneTrace> trace;
  forward(seq, &trace);
  const auto& tr = dynamic_cast<const SaktTrace&>(*trace);
  std::vector<std::vector<double>> out;
  for (const auto& a : tr.alpha) out.emplace_back(a.data(), a.data() + a.size());
  return out;
}

nlohmann::json SaktBackbone::describe() const {
  return {{"model", "backbone"},
          {"backbone", "sakt"},
          {"model_dim", dims_.model_dim},
          {"state_dim", dims_.model_dim},
          {"heads", 1},
          {"max_len", dims_.max_len},
          {"aggregation", to_string(dims_.aggregation)},
          {"num_questions", qmatrix_->num_questions()},
          {"num_concepts", qmatrix_->num_concepts()}};
}

}  // namespace ktb

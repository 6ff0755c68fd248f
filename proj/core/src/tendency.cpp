#include "ktb/tendency.hpp"

#include "ktb/checkpoint.hpp"
#include "ktb/errors.hpp"
#include "ktb/gradcheck.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ktb {

ConceptAggregation parse_aggregation(const std::string& name) {
  if (name == "sum") return ConceptAggregation::Sum;
  if (name == "mean") return ConceptAggregation::Mean;
  throw ConfigError("concept aggregation must be 'sum' or 'mean', got '" + name + "'");
}

std::string to_string(ConceptAggregation aggregation) {
  return aggregation == ConceptAggregation::Sum ? "sum" : "mean";
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

TendencyEstimator::TendencyEstimator(std::size_t num_questions, std::size_t num_concepts,
                                     TendencyDims dims, std::uint64_t seed)
    : num_questions_(num_questions),
      num_concepts_(num_concepts),
      dims_(dims),
      known_(num_questions, true) {
  if (dims.question_dim <= 0 || dims.concept_dim <= 0 || dims.hidden_dim <= 0) {
    throw ConfigError("tendency estimator dimensions must be positive");
  }
  const auto nq = static_cast<Eigen::Index>(num_questions);
  const auto nc = static_cast<Eigen::Index>(num_concepts);
  params_.add("question_embedding", nq, dims.question_dim);
  params_.add("concept_embedding", nc, dims.concept_dim);
  params_.add("w1", dims.hidden_dim, dims.question_dim + dims.concept_dim);
  params_.add("b1", dims.hidden_dim, 1);
  params_.add("w2", 1, dims.hidden_dim);
  params_.add("b2", 1, 1);
  Rng rng(seed);
  fill_normal(params_[kQuestionEmbedding], 0.1, rng);
  fill_normal(params_[kConceptEmbedding], 0.1, rng);
  fill_glorot(params_[kW1], rng);
  fill_glorot(params_[kW2], rng);
}

bool TendencyEstimator::is_known(int question) const {
  return question >= 0 && static_cast<std::size_t>(question) < known_.size() &&
         known_[static_cast<std::size_t>(question)];
}

void TendencyEstimator::set_known_questions(std::vector<bool> known) {
  if (frozen_) throw FrozenParameterError("tendency estimator is frozen");
  if (known.size() != num_questions_) throw std::invalid_argument("known-question mask size");
  known_ = std::move(known);
}

TensorSet& TendencyEstimator::mutable_params() {
  if (frozen_) throw FrozenParameterError("tendency estimator is frozen; updates are not allowed");
  return params_;
}

void TendencyEstimator::freeze() { frozen_ = true; }

Vector TendencyEstimator::features(std::optional<int> question,
                                   std::span<const int> concepts) const {
  Vector x = Vector::Zero(feature_dim());
  if (question && is_known(*question)) {
    x.head(dims_.question_dim) = params_[kQuestionEmbedding].row(*question).transpose();
  }
  auto tail = x.tail(dims_.concept_dim);
  for (int c : concepts) tail += params_[kConceptEmbedding].row(c).transpose();
  if (dims_.aggregation == ConceptAggregation::Mean && !concepts.empty()) {
    tail /= static_cast<double>(concepts.size());
  }
  return x;
}

Vector TendencyEstimator::features(std::optional<int> question, const Vector& q_row) const {
  if (q_row.size() != static_cast<Eigen::Index>(num_concepts_)) {
    throw std::invalid_argument("Q-matrix row has the wrong length");
  }
  std::vector<int> concepts;
  for (Eigen::Index c = 0; c < q_row.size(); ++c) {
    if (q_row[c] != 0.0) concepts.push_back(static_cast<int>(c));
  }
  return features(question, concepts);
}

double TendencyEstimator::logit(std::optional<int> question, std::span<const int> concepts) const {
  const Vector x = features(question, concepts);
  const Vector hidden =
      (params_[kW1] * x + params_[kB1].col(0)).cwiseMax(0.0);
  return (params_[kW2] * hidden)(0, 0) + params_[kB2](0, 0);
}

double TendencyEstimator::forward(std::optional<int> question,
                                  std::span<const int> concepts) const {
  return clamp_probability(sigmoid(logit(question, concepts)));
}

double TendencyEstimator::forward(std::optional<int> question, const Vector& q_row) const {
  std::vector<int> concepts;
  for (Eigen::Index c = 0; c < q_row.size(); ++c) {
    if (q_row[c] != 0.0) concepts.push_back(static_cast<int>(c));
  }
  return forward(question, concepts);
}

double TendencyEstimator::objective(std::span<const int> questions,
                                    std::span<const double> targets, const QMatrix& qmatrix,
                                    double l2, double dropout, Rng* rng, TensorSet* grads) const {
  if (questions.size() != targets.size() || questions.empty()) {
    throw std::invalid_argument("tendency objective needs matching, non-empty targets");
  }
  const auto& w1 = params_[kW1];
  const auto& w2 = params_[kW2];
  const double inv_n = 1.0 / static_cast<double>(questions.size());
  const bool use_dropout = rng != nullptr && dropout > 0.0;
  std::bernoulli_distribution keep(1.0 - dropout);
  Vector mask(dims_.hidden_dim);
  double total = 0.0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const int q = questions[i];
    const auto& concepts = qmatrix.concepts_of(q);
    const Vector x = features(q, concepts);
    const Vector pre = w1 * x + params_[kB1].col(0);
    Vector hidden = pre.cwiseMax(0.0);
    if (use_dropout) {
      for (Eigen::Index k = 0; k < mask.size(); ++k) mask[k] = keep(*rng) ? 1.0 / (1.0 - dropout) : 0.0;
      hidden = hidden.cwiseProduct(mask);
    }
    const double z = (w2 * hidden)(0, 0) + params_[kB2](0, 0);
    const double raw = sigmoid(z);
    const double p = clamp_probability(raw);
    const double t = targets[i];
    total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    if (grads == nullptr) continue;
    // d/dz of the clamped cross-entropy; zero where the clamp is active.
    const double dz = (raw == p) ? (raw - t) * inv_n : 0.0;
    auto& g = *grads;
    g[kW2] += dz * hidden.transpose();
    g[kB2](0, 0) += dz;
    Vector dhidden = dz * w2.row(0).transpose();
    if (use_dropout) dhidden = dhidden.cwiseProduct(mask);
    const Vector dpre = (pre.array() > 0.0).select(dhidden, 0.0);
    g[kW1] += dpre * x.transpose();
    g[kB1].col(0) += dpre;
    const Vector dx = w1.transpose() * dpre;
    if (is_known(q)) g[kQuestionEmbedding].row(q) += dx.head(dims_.question_dim).transpose();
    double scale = 1.0;
    if (dims_.aggregation == ConceptAggregation::Mean) scale = 1.0 / static_cast<double>(concepts.size());
    for (int c : concepts) {
      g[kConceptEmbedding].row(c) += scale * dx.tail(dims_.concept_dim).transpose();
    }
  }
  double loss = total * inv_n;
  if (l2 > 0.0) {
    loss += l2 * (w1.squaredNorm() + w2.squaredNorm());
    if (grads != nullptr) {
      (*grads)[kW1] += 2.0 * l2 * w1;
      (*grads)[kW2] += 2.0 * l2 * w2;
    }
  }
  return loss;
}

void TendencyEstimator::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["model"] = "question_tendency_estimator";
  meta["num_questions"] = num_questions_;
  meta["num_concepts"] = num_concepts_;
  meta["question_dim"] = dims_.question_dim;
  meta["concept_dim"] = dims_.concept_dim;
  meta["hidden_dim"] = dims_.hidden_dim;
  meta["aggregation"] = to_string(dims_.aggregation);
  meta["frozen"] = frozen_;
  std::vector<int> cold;
  for (std::size_t q = 0; q < known_.size(); ++q) {
    if (!known_[q]) cold.push_back(static_cast<int>(q));
  }
  meta["cold_questions"] = cold;
  save_checkpoint(dir, params_, meta);
}

TendencyEstimator TendencyEstimator::load(const std::filesystem::path& dir) {
  auto ckpt = load_checkpoint(dir);
  const auto& meta = ckpt.metadata;
  if (meta.value("model", "") != "question_tendency_estimator") {
    throw DataError("not a tendency estimator checkpoint: " + dir.string());
  }
  TendencyDims dims;
  dims.question_dim = meta.at("question_dim").get<int>();
  dims.concept_dim = meta.at("concept_dim").get<int>();
  dims.hidden_dim = meta.at("hidden_dim").get<int>();
  dims.aggregation = parse_aggregation(meta.at("aggregation").get<std::string>());
  TendencyEstimator est(meta.at("num_questions").get<std::size_t>(),
                        meta.at("num_concepts").get<std::size_t>(), dims, 0);
  assign_tensors(est.params_, ckpt.tensors);
  std::vector<bool> known(est.num_questions_, true);
  for (int q : meta.value("cold_questions", std::vector<int>{})) {
    known.at(static_cast<std::size_t>(q)) = false;
  }
  est.known_ = std::move(known);
  est.frozen_ = meta.value("frozen", false);
  return est;
}

std::vector<QuestionTarget> tendency_targets(const ResponseStatistics& train_stats,
                                             const QMatrix& qmatrix) {
  std::vector<QuestionTarget> out;
  for (std::size_t q = 0; q < qmatrix.num_questions(); ++q) {
    if (auto rate = train_stats.pass_rate(qmatrix.question_ids()[q])) {
      out.push_back({static_cast<int>(q), *rate});
    }
  }
  return out;
}

TendencyTrainReport pretrain_tendency(TendencyEstimator& estimator, const QMatrix& qmatrix,
                                      const std::vector<QuestionTarget>& targets,
                                      const TendencyTrainOptions& options) {
  if (estimator.frozen()) throw FrozenParameterError("tendency estimator is already frozen");
  if (targets.empty()) throw DataError("no pass-rate targets for pretraining");
  if (options.batch_size <= 0 || options.epochs <= 0) {
    throw ConfigError("pretraining needs positive batch size and epoch budget");
  }

  std::vector<bool> known(estimator.num_questions(), false);
  for (const auto& t : targets) known.at(static_cast<std::size_t>(t.question)) = true;
  estimator.set_known_questions(known);
  // Rows of cold questions are never read; zero them so checkpoints are clean.
  {
    auto& e = estimator.mutable_params()[TendencyEstimator::kQuestionEmbedding];
    for (std::size_t q = 0; q < known.size(); ++q) {
      if (!known[q]) e.row(static_cast<Eigen::Index>(q)).setZero();
    }
  }

  std::vector<int> all_q;
  std::vector<double> all_t;
  for (const auto& t : targets) {
    all_q.push_back(t.question);
    all_t.push_back(t.pass_rate);
  }
  auto full_loss = [&] {
    return estimator.objective(all_q, all_t, qmatrix, 0.0, 0.0, nullptr, nullptr);
  };

  Rng rng(options.seed);
  Adam adam(estimator.params(), AdamOptions{options.learning_rate});
  TensorSet grads = estimator.params().zeros_like();
  TendencyTrainReport report;
  report.initial_loss = full_loss();
  double best = report.initial_loss;
  int stale = 0;

  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> bq;
  std::vector<double> bt;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      bq.clear();
      bt.clear();
      for (std::size_t i = start; i < stop; ++i) {
        bq.push_back(all_q[order[i]]);
        bt.push_back(all_t[order[i]]);
      }
      grads.set_zero();
      const double loss =
          estimator.objective(bq, bt, qmatrix, options.l2, options.dropout, &rng, &grads);
      if (!std::isfinite(loss)) {
        throw RuntimeFailure(fmt::format("tendency pretraining diverged at epoch {}", epoch + 1));
      }
      adam.step(estimator.mutable_params(), grads);
    }
    const double epoch_loss = full_loss();
    if (!std::isfinite(epoch_loss)) {
      throw RuntimeFailure(fmt::format("tendency pretraining diverged at epoch {}", epoch + 1));
    }
    report.epoch_loss.push_back(epoch_loss);
    report.epochs_run = epoch + 1;
    if (epoch_loss < best * (1.0 - options.min_improvement)) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= options.patience) {
      break;
    }
  }
  round_to_float32(estimator.mutable_params());
  report.final_loss = full_loss();
  estimator.freeze();
  return report;
}

double tendency_gradient_check(TendencyEstimator& estimator, const QMatrix& qmatrix,
                               const std::vector<QuestionTarget>& batch, double l2) {
  auto& params = estimator.mutable_params();
  std::vector<int> qs;
  std::vector<double> ts;
  for (const auto& t : batch) {
    qs.push_back(t.question);
    ts.push_back(t.pass_rate);
  }
  TensorSet grads = params.zeros_like();
  estimator.objective(qs, ts, qmatrix, l2, 0.0, nullptr, &grads);
  auto loss = [&] { return estimator.objective(qs, ts, qmatrix, l2, 0.0, nullptr, nullptr); };
  return check_gradients(params, grads, loss).max_relative_error;
}

}  // namespace ktb

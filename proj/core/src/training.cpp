#include "ktb/training.hpp"

#include "ktb/errors.hpp"
#include "ktb/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace ktb {

double disc_mse_loss(std::span<const double> targets, std::span<const double> predictions,
                     std::span<const std::uint8_t> mask) {
  if (targets.size() != predictions.size() || (!mask.empty() && mask.size() != targets.size())) {
    throw std::invalid_argument("disc_mse_loss: length mismatch");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    const double e = targets[i] - predictions[i];
    sum += e * e;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double total_loss(double lr_loss, double disc_loss, double lambda) {
  return lr_loss + lambda * disc_loss;
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool EarlyStopper::update(std::optional<double> metric) {
  const int epoch = seen_++;
  if (metric && !std::isnan(*metric) && (!best_ || *metric > *best_)) {
    best_ = metric;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json loss_json(const LossBreakdown& l) {
  return {{"total", l.total}, {"weighted_bce", l.weighted}, {"disc_mse", l.disc}, {"count", l.count}};
}

double bce(double p, int label) { return -(label == 1 ? std::log(p) : std::log(1.0 - p)); }

}  // namespace

nlohmann::json TrainReport::metrics_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train", loss_json(e.train)},
                    {"valid", loss_json(e.valid)},
                    {"train_auc", optional_json(e.train_auc)},
                    {"train_acc", e.train_acc},
                    {"valid_auc", optional_json(e.valid_auc)},
                    {"valid_acc", e.valid_acc}});
  }
  return {{"epochs", rows},
          {"best_epoch", best_epoch},
          {"best_valid_auc", optional_json(best_valid_auc)},
          {"stopped_early", stopped_early}};
}

nlohmann::json TrainReport::to_json() const {
  auto j = metrics_json();
  j["wall_seconds"] = wall_seconds;
  return j;
}

Stage2Trainer::Stage2Trainer(ExperimentConfig config, std::shared_ptr<const QMatrix> qmatrix,
                             std::shared_ptr<const TendencyEstimator> tendency, Backbone& backbone,
                             DiscriminationPredictor& predictor, const std::vector<Sequence>& train)
    : config_(std::move(config)),
      fusion_(config_.resolved_fusion()),
      qmatrix_(std::move(qmatrix)),
      tendency_(std::move(tendency)),
      backbone_(backbone),
      predictor_(predictor),
      backbone_adam_(backbone.params(), AdamOptions{config_.stage2.learning_rate}),
      predictor_adam_(predictor.params(), AdamOptions{config_.stage2.predictor_learning_rate}),
      shuffle_rng_(config_.seed + 1),
      dropout_rng_(config_.seed + 2) {
  config_.validate();
  if (!tendency_->frozen()) {
    throw FrozenParameterError("Stage II requires a frozen tendency estimator");
  }
  if (&predictor_.tendency() != tendency_.get()) {
    throw std::invalid_argument("predictor must share the frozen tendency estimator");
  }
  const std::size_t nq = qmatrix_->num_questions();
  question_tendency_.resize(nq);
  if (config_.mode == RebalanceMode::Freq) {
    std::vector<double> correct(nq, 0.0);
    std::vector<double> answered(nq, 0.0);
    double total_correct = 0.0;
    double total = 0.0;
    for (const auto& s : train) {
      for (std::size_t t = 0; t < s.size(); ++t) {
        const auto q = static_cast<std::size_t>(s.questions[t]);
        correct[q] += s.labels[t];
        answered[q] += 1.0;
        total_correct += s.labels[t];
        total += 1.0;
      }
    }
    const double global = total > 0.0 ? total_correct / total : 0.5;
    for (std::size_t q = 0; q < nq; ++q) {
      question_tendency_[q] = clamp_probability(answered[q] > 0.0 ? correct[q] / answered[q] : global);
    }
  } else {
    for (std::size_t q = 0; q < nq; ++q) {
      const int qi = static_cast<int>(q);
      question_tendency_[q] = tendency_->forward(qi, qmatrix_->concepts_of(qi));
    }
  }
  if (config_.mode == RebalanceMode::Ipw) {
    std::vector<double> deltas;
    for (const auto& s : train) {
      for (std::size_t t = 0; t < s.size(); ++t) {
        deltas.push_back(discrimination_score(reference_tendency(s.questions[t]), s.labels[t]));
      }
    }
    ipw_ = IpwWeighter::fit(deltas, config_.stage2.ipw_levels);
  }
}

double Stage2Trainer::reference_tendency(int question) const {
  return question_tendency_.at(static_cast<std::size_t>(question));
}

double Stage2Trainer::response_weight_for(double delta) const {
  switch (config_.mode) {
    case RebalanceMode::Dr4kt:
    case RebalanceMode::Freq:
      return response_weight(delta, config_.tau1);
    case RebalanceMode::Ipw:
      return ipw_->weight(delta).value_or(1.0);
    case RebalanceMode::None:
      return 1.0;
  }
  return 1.0;
}

double Stage2Trainer::effective_lambda() const {
  return config_.trains_predictor() ? config_.lambda : 0.0;
}

LossBreakdown Stage2Trainer::train_step(std::span<const Sequence* const> batch) {
  const bool train_predictor = config_.trains_predictor();
  const double lambda = effective_lambda();
  const double dropout = config_.predictor_dropout;

  std::size_t counted = 0;
  for (const Sequence* s : batch) {
    counted += s->size() - (config_.stage2.include_first_step || s->size() == 0 ? 0 : 1);
  }
  LossBreakdown out;
  out.count = counted;
  if (counted == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(counted);

  TensorSet backbone_grads = backbone_.params().zeros_like();
  TensorSet predictor_grads = predictor_.params().zeros_like();
  double weighted = 0.0;
  double disc = 0.0;
  for (const Sequence* s : batch) {
    std::unique_ptr<BackboneTrace> trace;
    const auto steps = backbone_.forward(*s, &trace);
    std::vector<double> dlogit(s->size(), 0.0);
    std::vector<Vector> dstate;
    if (train_predictor) dstate.assign(s->size(), Vector::Zero(backbone_.state_dim()));
    for (std::size_t t = 0; t < s->size(); ++t) {
      if (t == 0 && !config_.stage2.include_first_step) continue;
      const int q = s->questions[t];
      const int a = s->labels[t];
      const double delta = discrimination_score(reference_tendency(q), a);
      const double w = response_weight_for(delta);
      weighted += w * bce(steps[t].prob, a);
      dlogit[t] = w * (steps[t].prob - a) * inv_n;
      if (train_predictor) {
        PredictorCache cache;
        const double pred = predictor_.forward(steps[t].state, q, qmatrix_->concepts_of(q),
                                               &dropout_rng_, dropout, &cache);
        disc += (pred - delta) * (pred - delta);
        dstate[t] = predictor_.backward(cache, lambda * 2.0 * (pred - delta) * inv_n,
                                        predictor_grads);
      }
    }
    backbone_.backward(*trace, dlogit, dstate, backbone_grads);
  }
  out.weighted = weighted * inv_n;
  out.disc = disc * inv_n;
  out.total = total_loss(out.weighted, out.disc, lambda);
  if (train_predictor) {
    out.total += config_.predictor_l2 * predictor_.weight_norm();
    predictor_.add_l2_gradient(config_.predictor_l2, predictor_grads);
  }
  if (!std::isfinite(out.total) || !backbone_grads.all_finite() || !predictor_grads.all_finite()) {
    throw RuntimeFailure(fmt::format("non-finite loss or gradient at update {}",
                                     backbone_adam_.steps() + 1));
  }
  clip_global_norm(backbone_grads, config_.stage2.clip_norm);
  backbone_adam_.step(backbone_.params(), backbone_grads);
  if (train_predictor) {
    clip_global_norm(predictor_grads, config_.stage2.clip_norm);
    predictor_adam_.step(predictor_.params(), predictor_grads);
  }
  return out;
}

Evaluation Stage2Trainer::evaluate(const std::vector<Sequence>& seqs) const {
  Evaluation ev;
  ev.sequences.reserve(seqs.size());
  const double lambda = effective_lambda();
  std::vector<double> served;
  std::vector<int> labels;
  double weighted = 0.0;
  double disc = 0.0;
  std::size_t counted = 0;
  for (const auto& s : seqs) {
    SequenceScores scores;
    scores.sequence = &s;
    const auto steps = backbone_.forward(s);
    for (std::size_t t = 0; t < s.size(); ++t) {
      StepScore sc;
      sc.step = static_cast<int>(t);
      sc.question = s.questions[t];
      sc.label = s.labels[t];
      sc.kt = steps[t].prob;
      sc.tendency = reference_tendency(sc.question);
      sc.delta = discrimination_score(sc.tendency, sc.label);
      sc.weight = response_weight_for(sc.delta);
      sc.disc_pred = predictor_.forward(steps[t].state, sc.question, qmatrix_->concepts_of(sc.question));
      switch (fusion_) {
        case FusionMode::Adaptive: sc.zeta = fusion_factor(sc.disc_pred, config_.tau2); break;
        case FusionMode::Average: sc.zeta = 0.5; break;
        default: sc.zeta = 1.0; break;
      }
      sc.fused = fuse_scores(sc.kt, sc.tendency, sc.zeta);
      if (t > 0 || config_.stage2.include_first_step) {
        weighted += sc.weight * bce(sc.kt, sc.label);
        disc += (sc.disc_pred - sc.delta) * (sc.disc_pred - sc.delta);
        ++counted;
      }
      served.push_back(sc.fused);
      labels.push_back(sc.label);
      scores.steps.push_back(sc);
    }
    ev.sequences.push_back(std::move(scores));
  }
  if (counted > 0) {
    ev.losses.weighted = weighted / static_cast<double>(counted);
    ev.losses.disc = disc / static_cast<double>(counted);
  }
  ev.losses.count = counted;
  ev.losses.total = total_loss(ev.losses.weighted, ev.losses.disc, lambda);
  ev.auc = auc(served, labels);
  ev.acc = accuracy(served, labels);
  return ev;
}

Stage2Trainer::Snapshot Stage2Trainer::snapshot() const {
  return {backbone_.params(), predictor_.params()};
}

void Stage2Trainer::restore(const Snapshot& s) {
  backbone_.params() = s.backbone;
  predictor_.params() = s.predictor;
}

TrainReport Stage2Trainer::fit(const std::vector<Sequence>& train,
                               const std::vector<Sequence>& valid, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  EarlyStopper stopper(config_.stage2.patience);
  Snapshot best = snapshot();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(config_.stage2.batch_size);

  for (int epoch = 0; epoch < config_.stage2.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng_);
    EpochRecord rec;
    rec.epoch = epoch;
    double total = 0.0;
    double weighted = 0.0;
    double disc = 0.0;
    std::vector<const Sequence*> batch;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        batch.clear();
        for (std::size_t i = begin; i < std::min(order.size(), begin + batch_size); ++i) {
          batch.push_back(&train[order[i]]);
        }
        const auto l = train_step(batch);
        const auto n = static_cast<double>(l.count);
        total += l.total * n;
        weighted += l.weighted * n;
        disc += l.disc * n;
        rec.train.count += l.count;
      }
    } catch (const RuntimeFailure&) {
      restore(best);
      throw;
    }
    if (rec.train.count > 0) {
      const auto n = static_cast<double>(rec.train.count);
      rec.train.total = total / n;
      rec.train.weighted = weighted / n;
      rec.train.disc = disc / n;
    }
    const Evaluation train_eval = evaluate(train);
    rec.train_auc = train_eval.auc;
    rec.train_acc = train_eval.acc;
    const Evaluation valid_eval = evaluate(valid);
    rec.valid = valid_eval.losses;
    rec.valid_auc = valid_eval.auc;
    rec.valid_acc = valid_eval.acc;
    if (!std::isfinite(rec.valid.total)) {
      restore(best);
      throw RuntimeFailure(fmt::format("non-finite validation loss in epoch {}", epoch));
    }
    if (stopper.update(rec.valid_auc)) best = snapshot();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      report.stopped_early = true;
      break;
    }
  }
  report.best_epoch = stopper.best_epoch();
  report.best_valid_auc = stopper.best();
  if (report.best_epoch >= 0) restore(best);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace ktb

#pragma once

#include "ktb/backbone.hpp"
#include "ktb/config.hpp"
#include "ktb/dataset.hpp"
#include "ktb/fusion.hpp"
#include "ktb/rebalance.hpp"
#include "ktb/tendency.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace ktb {

// Mean over unmasked entries of (target - prediction)^2; 0 when nothing is
// counted. An empty mask counts every entry.
double disc_mse_loss(std::span<const double> targets, std::span<const double> predictions,
                     std::span<const std::uint8_t> mask = {});

double total_loss(double lr_loss, double disc_loss, double lambda);

// Patience rule on a metric to maximise. An epoch improves when its metric
// is strictly above the best so far; an absent or NaN metric never does.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);

  // Records the next epoch's metric and returns true when it improved.
  bool update(std::optional<double> metric);
  bool should_stop() const { return since_best_ >= patience_; }

  int best_epoch() const { return best_epoch_; }  // 0-based, -1 before any improvement
  std::optional<double> best() const { return best_; }
  int epochs_seen() const { return seen_; }

 private:
  int patience_;
  int seen_ = 0;
  int since_best_ = 0;
  int best_epoch_ = -1;
  std::optional<double> best_;
};

struct LossBreakdown {
  double total = 0.0;     // lr + lambda * disc (+ predictor L2 during training)
  double weighted = 0.0;  // reweighted cross-entropy
  double disc = 0.0;      // discrimination MSE
  std::size_t count = 0;  // responses counted in the losses
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown valid;
  std::optional<double> train_auc;
  double train_acc = 0.0;
  std::optional<double> valid_auc;
  double valid_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::optional<double> best_valid_auc;
  bool stopped_early = false;
  double wall_seconds = 0.0;

  // Everything except wall-clock time, for reproducibility comparisons.
  nlohmann::json metrics_json() const;
  nlohmann::json to_json() const;
};

// Per-response scores of a trained model.
struct StepScore {
  int step = 0;
  int question = 0;
  int label = 0;
  double kt = 0.5;         // backbone prediction
  double tendency = 0.5;   // reference tendency used for delta and fusion
  double delta = 0.5;      // discrimination target
  double weight = 1.0;     // loss weight
  double disc_pred = 0.5;  // predicted discrimination
  double zeta = 1.0;
  double fused = 0.5;  // served score
};

struct SequenceScores {
  const Sequence* sequence = nullptr;
  std::vector<StepScore> steps;
};

struct Evaluation {
  std::vector<SequenceScores> sequences;
  LossBreakdown losses;
  std::optional<double> auc;  // on the served score
  double acc = 0.0;
};

// Stage II: joint training of the backbone and the discrimination predictor
// against a frozen tendency estimator.
class Stage2Trainer {
 public:
  // `train` fits the IPW levels and, in freq mode, the pass-rate table.
  // Throws FrozenParameterError when the tendency estimator is not frozen.
  Stage2Trainer(ExperimentConfig config, std::shared_ptr<const QMatrix> qmatrix,
                std::shared_ptr<const TendencyEstimator> tendency, Backbone& backbone,
                DiscriminationPredictor& predictor, const std::vector<Sequence>& train);

  // Tendency entering delta and the fused score for question q.
  double reference_tendency(int question) const;
  double response_weight_for(double delta) const;

  // One optimiser update over the batch. Returns the batch losses measured
  // before the update. Throws RuntimeFailure on a non-finite loss or gradient.
  LossBreakdown train_step(std::span<const Sequence* const> batch);

  Evaluation evaluate(const std::vector<Sequence>& seqs) const;

  using EpochCallback = std::function<void(const EpochRecord&)>;
  // Epochs until the validation AUC of the served score has not improved for
  // `patience` epochs or the budget is spent, then restores the best epoch.
  // On a non-finite loss the best parameters so far are restored before
  // RuntimeFailure propagates.
  TrainReport fit(const std::vector<Sequence>& train, const std::vector<Sequence>& valid,
                  const EpochCallback& on_epoch = {});

  const ExperimentConfig& config() const { return config_; }
  std::int64_t steps() const { return backbone_adam_.steps(); }

 private:
  struct Snapshot {
    TensorSet backbone;
    TensorSet predictor;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);
  double effective_lambda() const;

  ExperimentConfig config_;
  FusionMode fusion_;
  std::shared_ptr<const QMatrix> qmatrix_;
  std::shared_ptr<const TendencyEstimator> tendency_;
  Backbone& backbone_;
  DiscriminationPredictor& predictor_;
  std::vector<double> question_tendency_;
  std::optional<IpwWeighter> ipw_;
  Adam backbone_adam_;
  Adam predictor_adam_;
  Rng shuffle_rng_;
  Rng dropout_rng_;
};

}  // namespace ktb

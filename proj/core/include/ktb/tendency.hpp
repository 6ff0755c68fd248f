#pragma once

#include "ktb/dataset.hpp"
#include "ktb/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ktb {

enum class ConceptAggregation { Sum, Mean };

ConceptAggregation parse_aggregation(const std::string& name);
std::string to_string(ConceptAggregation aggregation);

// Lower/upper probability bound applied before any logarithm.
inline constexpr double kProbabilityFloor = 1e-6;
double clamp_probability(double p);

struct TendencyDims {
  int question_dim = 64;
  int concept_dim = 32;
  int hidden_dim = 64;
  ConceptAggregation aggregation = ConceptAggregation::Sum;
};

// Question tendency estimator: a two-layer MLP over the question id
// embedding concatenated with the aggregated concept embeddings of the
// question, giving the probability that the question is answered
// correctly. Questions without a trained embedding row ("cold") use a zero
// id embedding so only their concepts contribute.
class TendencyEstimator {
 public:
  enum Tensor : std::size_t { kQuestionEmbedding, kConceptEmbedding, kW1, kB1, kW2, kB2 };

  TendencyEstimator(std::size_t num_questions, std::size_t num_concepts, TendencyDims dims,
                    std::uint64_t seed);

  const TendencyDims& dims() const { return dims_; }
  std::size_t num_questions() const { return num_questions_; }
  std::size_t num_concepts() const { return num_concepts_; }
  int feature_dim() const { return dims_.question_dim + dims_.concept_dim; }

  // [e ; qC] for the question; e is zero for cold or absent questions.
  Vector features(std::optional<int> question, std::span<const int> concepts) const;
  Vector features(std::optional<int> question, const Vector& q_row) const;

  // Tendency score in (0,1), clamped to [1e-6, 1 - 1e-6].
  double forward(std::optional<int> question, std::span<const int> concepts) const;
  double forward(std::optional<int> question, const Vector& q_row) const;
  double logit(std::optional<int> question, std::span<const int> concepts) const;

  bool is_known(int question) const;
  const std::vector<bool>& known_questions() const { return known_; }
  void set_known_questions(std::vector<bool> known);

  const TensorSet& params() const { return params_; }
  // Throws FrozenParameterError once frozen.
  TensorSet& mutable_params();

  void freeze();
  bool frozen() const { return frozen_; }

  // Mean cross-entropy against per-question targets, plus l2 * (|W1|^2 + |W2|^2).
  // With grads non-null the analytic gradient is accumulated into it.
  // Dropout is applied when rng is non-null and dropout > 0.
  double objective(std::span<const int> questions, std::span<const double> targets,
                   const QMatrix& qmatrix, double l2, double dropout, Rng* rng,
                   TensorSet* grads) const;

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static TendencyEstimator load(const std::filesystem::path& dir);

 private:
  std::size_t num_questions_;
  std::size_t num_concepts_;
  TendencyDims dims_;
  TensorSet params_;
  std::vector<bool> known_;
  bool frozen_ = false;
};

struct TendencyTrainOptions {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 256;
  double dropout = 0.2;
  double l2 = 1e-5;
  int patience = 10;              // epochs without improvement before stopping
  double min_improvement = 1e-5;  // relative loss decrease that counts as progress
  std::uint64_t seed = 7;
};

struct TendencyTrainReport {
  std::vector<double> epoch_loss;  // full-set cross-entropy without dropout
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int epochs_run = 0;
};

struct QuestionTarget {
  int question = 0;
  double pass_rate = 0.0;
};

// Per-question targets from a pass-rate table keyed by question id.
std::vector<QuestionTarget> tendency_targets(const ResponseStatistics& train_stats,
                                             const QMatrix& qmatrix);

// Fits the estimator to per-question pass rates with Adam, dropout and L2,
// marks the target questions as known, rounds parameters to storage
// precision and freezes the estimator. Throws RuntimeFailure on a
// non-finite loss and FrozenParameterError when already frozen.
TendencyTrainReport pretrain_tendency(TendencyEstimator& estimator, const QMatrix& qmatrix,
                                      const std::vector<QuestionTarget>& targets,
                                      const TendencyTrainOptions& options);

// Maximum relative error between the analytic gradient of the pretraining
// objective (dropout off) and central finite differences.
double tendency_gradient_check(TendencyEstimator& estimator, const QMatrix& qmatrix,
                               const std::vector<QuestionTarget>& batch, double l2 = 1e-5);

}  // namespace ktb

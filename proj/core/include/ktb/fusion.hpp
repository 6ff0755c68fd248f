#pragma once

#include "ktb/dataset.hpp"
#include "ktb/tendency.hpp"
#include "ktb/tensor.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <span>

namespace ktb {

struct PredictorDims {
  int state_dim = 64;  // width of the backbone knowledge state
  int hidden_dim = 64;
};

// Forward cache of one predictor evaluation.
struct PredictorCache {
  Vector input;   // [m ; e ; qC]
  Vector hidden;  // post-activation, post-dropout
  Vector keep;    // dropout multipliers (1 without dropout)
  double output = 0.5;
};

// Discrimination predictor: a two-layer MLP over the knowledge state
// concatenated with the question and concept embeddings of the frozen
// tendency estimator. Only its own layers are trainable; the embeddings
// are read from the estimator on every call.
class DiscriminationPredictor {
 public:
  enum Tensor : std::size_t { kW1, kB1, kW2, kB2 };

  DiscriminationPredictor(std::shared_ptr<const TendencyEstimator> tendency, PredictorDims dims,
                          std::uint64_t seed);

  const PredictorDims& dims() const { return dims_; }
  int input_dim() const { return dims_.state_dim + tendency_->feature_dim(); }
  const TendencyEstimator& tendency() const { return *tendency_; }

  // Predicted discrimination in (0,1). Dropout with rate `dropout` is used
  // when rng is non-null. Throws std::invalid_argument on a state of the
  // wrong width.
  double forward(const Vector& state, int question, std::span<const int> concepts,
                 Rng* rng = nullptr, double dropout = 0.0, PredictorCache* cache = nullptr) const;

  // Accumulates dL/dparams for dL/doutput and returns dL/dstate.
  Vector backward(const PredictorCache& cache, double doutput, TensorSet& grads) const;

  const TensorSet& params() const { return params_; }
  TensorSet& params() { return params_; }

  // |W1|^2 + |W2|^2
  double weight_norm() const;
  // Adds the gradient of l2 * weight_norm() into grads.
  void add_l2_gradient(double l2, TensorSet& grads) const;

  void save(const std::filesystem::path& dir) const;
  static DiscriminationPredictor load(const std::filesystem::path& dir,
                                      std::shared_ptr<const TendencyEstimator> tendency);

 private:
  std::shared_ptr<const TendencyEstimator> tendency_;
  PredictorDims dims_;
  TensorSet params_;
};

// Fusion weight delta_hat^(1/tau2) = exp(log(delta_hat) / tau2) with
// delta_hat clamped to [1e-6, 1]. Throws ConfigError unless tau2 > 0.
double fusion_factor(double delta_hat, double tau2);

// zeta * kt + (1 - zeta) * tendency.
double fuse_scores(double kt, double tendency, double zeta);

}  // namespace ktb

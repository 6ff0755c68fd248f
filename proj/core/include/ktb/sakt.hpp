#pragma once

#include "ktb/backbone.hpp"

namespace ktb {

// Single-block, single-head self-attentive backbone. The query at step t
// is the embedding of question t; keys and values are the interaction
// embeddings (question/label pair + concepts + position) of steps < t.
// The attended context is the knowledge state; it passes through an output
// projection, a residual connection with the query and a residual
// feed-forward layer before the logistic readout. At t = 0 the context is
// the zero vector.
class SaktBackbone final : public Backbone {
 public:
  enum Tensor : std::size_t {
    kInteractionQuestion,  // 2|Q| x d
    kInteractionConcept,   // 2|C| x d
    kPosition,             // max_len x d
    kQueryQuestion,        // |Q| x d
    kQueryConcept,         // |C| x d
    kWq, kWk, kWv,         // d x d
    kWo, kBo,              // d x d, d x 1
    kF1, kB1,              // d x d, d x 1
    kF2, kB2,              // d x d, d x 1
    kReadout,              // 1 x d
    kQuestionBias,         // |Q| x 1
    kBias,                 // 1 x 1
  };

  SaktBackbone(const BackboneDims& dims, std::shared_ptr<const QMatrix> qmatrix,
               std::vector<bool> known, std::uint64_t seed);

  BackboneKind kind() const override { return BackboneKind::Sakt; }
  int state_dim() const override { return dims_.model_dim; }
  std::vector<BackboneStepOutput> forward(const Sequence& seq,
                                          std::unique_ptr<BackboneTrace>* trace = nullptr) const override;
  void backward(const BackboneTrace& trace, std::span<const double> dlogit,
                std::span<const Vector> dstate, TensorSet& grads) const override;
  const TensorSet& params() const override { return params_; }
  TensorSet& params() override { return params_; }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<SaktBackbone>(*this); }
  nlohmann::json describe() const override;
  const std::vector<bool>& known_questions() const override { return known_; }

  // Attention distribution over the previous positions for every step
  // (empty for step 0).
  std::vector<std::vector<double>> attention_weights(const Sequence& seq) const;

 private:
  double concept_scale(int question) const;

  BackboneDims dims_;
  std::shared_ptr<const QMatrix> qmatrix_;
  std::vector<bool> known_;
  TensorSet params_;
};

}  // namespace ktb

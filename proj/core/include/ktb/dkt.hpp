#pragma once

#include "ktb/backbone.hpp"

namespace ktb {

// Recurrent backbone: an LSTM over interaction embeddings. The input at
// step t embeds (question t, label t) by doubling the id space (one row
// per question/label pair) plus the aggregated concept/label rows. The
// prediction for step t reads the hidden state h_{t-1} (zero at t = 0)
// against an output embedding of question t:
//   logit_t = h_{t-1} . (Y_q[q_t] + agg Y_c[c]) + bias_q[q_t] + bias
class DktBackbone final : public Backbone {
 public:
  enum Tensor : std::size_t {
    kInputQuestion,   // 2|Q| x d
    kInputConcept,    // 2|C| x d
    kLstmWeight,      // 4d x 2d, gate order i, f, g, o; columns [x ; h]
    kLstmBias,        // 4d x 1
    kOutputQuestion,  // |Q| x d
    kOutputConcept,   // |C| x d
    kQuestionBias,    // |Q| x 1
    kBias,            // 1 x 1
  };

  DktBackbone(const BackboneDims& dims, std::shared_ptr<const QMatrix> qmatrix,
              std::vector<bool> known, std::uint64_t seed);

  BackboneKind kind() const override { return BackboneKind::Dkt; }
  int state_dim() const override { return dims_.model_dim; }
  std::vector<BackboneStepOutput> forward(const Sequence& seq,
                                          std::unique_ptr<BackboneTrace>* trace = nullptr) const override;
  void backward(const BackboneTrace& trace, std::span<const double> dlogit,
                std::span<const Vector> dstate, TensorSet& grads) const override;
  const TensorSet& params() const override { return params_; }
  TensorSet& params() override { return params_; }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<DktBackbone>(*this); }
  nlohmann::json describe() const override;

  const std::vector<bool>& known_questions() const override { return known_; }

 private:
  Vector input_embedding(int question, int label) const;
  Vector output_embedding(int question) const;
  double concept_scale(int question) const;

  BackboneDims dims_;
  std::shared_ptr<const QMatrix> qmatrix_;
  std::vector<bool> known_;
  TensorSet params_;
};

}  // namespace ktb

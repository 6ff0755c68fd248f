#pragma once

#include "ktb/dataset.hpp"
#include "ktb/tendency.hpp"
#include "ktb/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ktb {

enum class BackboneKind { Dkt, Sakt, Akt, Lpkt };

BackboneKind parse_backbone_kind(const std::string& name);
std::string to_string(BackboneKind kind);

struct BackboneStepOutput {
  double logit = 0.0;
  double prob = 0.5;  // predicted correctness, clamped to [1e-6, 1 - 1e-6]
  Vector state;       // knowledge state available before the response
};

// Opaque per-sequence forward cache consumed by backward().
struct BackboneTrace {
  virtual ~BackboneTrace() = default;
};

struct BackboneDims {
  int model_dim = 64;   // embedding and state width
  int max_len = 50;     // longest sequence the model accepts
  ConceptAggregation aggregation = ConceptAggregation::Sum;
};

// A knowledge-tracing model. For a sequence of (question, label) pairs it
// predicts, at every step t, the probability of a correct answer to
// question t from the responses before t and the identity of question t,
// and exposes the knowledge-state vector it predicted from. Step t's output
// never depends on labels at positions >= t nor on questions after t.
//
// Extension point: further architectures implement this interface and are
// registered in make_backbone().
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual BackboneKind kind() const = 0;
  virtual int state_dim() const = 0;

  virtual std::vector<BackboneStepOutput> forward(
      const Sequence& seq, std::unique_ptr<BackboneTrace>* trace = nullptr) const = 0;

  // Accumulates parameter gradients given dL/dlogit per step and,
  // optionally, dL/dstate per step (empty span: no state gradient).
  virtual void backward(const BackboneTrace& trace, std::span<const double> dlogit,
                        std::span<const Vector> dstate, TensorSet& grads) const = 0;

  virtual const TensorSet& params() const = 0;
  virtual TensorSet& params() = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
  virtual const std::vector<bool>& known_questions() const = 0;

  // Model description stored alongside checkpoints.
  virtual nlohmann::json describe() const = 0;

  void save(const std::filesystem::path& dir) const;
};

// Builds a backbone over the given Q-matrix. `known` marks questions with
// a trainable id embedding; others use only their concepts. AKT and LPKT
// are recognised names but not provided; requesting them throws ConfigError.
std::unique_ptr<Backbone> make_backbone(BackboneKind kind, const BackboneDims& dims,
                                        std::shared_ptr<const QMatrix> qmatrix,
                                        std::vector<bool> known, std::uint64_t seed);

std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& dir,
                                        std::shared_ptr<const QMatrix> qmatrix);

// Mean unweighted cross-entropy of the backbone over a sequence, with the
// matching analytic gradient accumulated into grads when non-null.
double backbone_bce(const Backbone& model, const Sequence& seq, TensorSet* grads);

// Central finite-difference check of backbone_bce over the full unrolled
// model. Returns the maximum relative error.
double backbone_gradient_check(Backbone& model, const Sequence& seq,
                               std::size_t max_per_tensor = 0);

// Questions appearing in any of the sequences.
std::vector<bool> questions_seen(const std::vector<Sequence>& seqs, std::size_t num_questions);

}  // namespace ktb

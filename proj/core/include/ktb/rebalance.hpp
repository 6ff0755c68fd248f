#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ktb {

// Probability that a response with label `correct` goes against a question
// whose tendency to be answered correctly is `tendency`:
// 1 - tendency for a correct answer, tendency for a wrong one.
double discrimination_score(double tendency, int correct);

// Loss weight delta^(1/tau1), computed as exp(log(delta) / tau1) with delta
// clamped to [1e-6, 1]. Throws ConfigError unless tau1 > 0.
double response_weight(double delta, double tau1);

struct WeightedLossBatch {
  std::vector<double> predictions;  // in (0,1)
  std::vector<int> labels;          // 0 or 1
  std::vector<double> weights;      // positive
  std::vector<std::uint8_t> mask;   // 1 = counted; empty means all counted
};

// Mean over unmasked entries of w * BCE(prediction, label). Predictions are
// clamped to [1e-6, 1 - 1e-6]; a prediction outside [0,1] or a non-finite
// one is rejected with std::invalid_argument.
double reweighted_bce(const WeightedLossBatch& batch);

// Inverse propensity weights over uniform discrimination levels: the
// propensity of a level is its share of the fitted responses and the weight
// 1/propensity is normalised to mean one over those responses.
class IpwWeighter {
 public:
  static IpwWeighter fit(std::span<const double> deltas, int levels = 10);

  int levels() const { return static_cast<int>(counts_.size()); }
  std::size_t level_count(int level) const { return counts_.at(static_cast<std::size_t>(level)); }
  // Absent for a level that held no fitted response.
  std::optional<double> weight(double delta) const;

 private:
  std::vector<std::size_t> counts_;
  std::vector<double> weights_;
};

// Weight of every input response under an IpwWeighter fitted to them.
std::vector<double> ipw_weights(std::span<const double> deltas, int levels = 10);

}  // namespace ktb

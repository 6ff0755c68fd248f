#include "ktb/rebalance.hpp"

#include "ktb/dataset.hpp"
#include "ktb/errors.hpp"
#include "ktb/tendency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ktb {

double discrimination_score(double tendency, int correct) {
  return correct == 1 ? 1.0 - tendency : tendency;
}

double response_weight(double delta, double tau1) {
  if (!(tau1 > 0.0)) throw ConfigError("tau1 must be positive");
  const double d = std::clamp(delta, kProbabilityFloor, 1.0);
  return std::exp(std::log(d) / tau1);
}

double reweighted_bce(const WeightedLossBatch& batch) {
  const std::size_t n = batch.predictions.size();
  if (batch.labels.size() != n || batch.weights.size() != n ||
      (!batch.mask.empty() && batch.mask.size() != n)) {
    throw std::invalid_argument("weighted loss batch fields differ in length");
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!batch.mask.empty() && batch.mask[i] == 0) continue;
    const double raw = batch.predictions[i];
    if (!std::isfinite(raw) || raw < 0.0 || raw > 1.0) {
      throw std::invalid_argument("prediction outside [0,1]");
    }
    const double p = clamp_probability(raw);
    const int a = batch.labels[i];
    total += batch.weights[i] * -(a * std::log(p) + (1 - a) * std::log(1.0 - p));
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

IpwWeighter IpwWeighter::fit(std::span<const double> deltas, int levels) {
  if (levels <= 0) throw ConfigError("IPW needs at least one level");
  if (deltas.empty()) throw DataError("IPW needs at least one response");
  IpwWeighter w;
  w.counts_.assign(static_cast<std::size_t>(levels), 0);
  for (double d : deltas) ++w.counts_[static_cast<std::size_t>(uniform_bin(d, levels))];
  // Mean of 1/p over responses is the number of occupied levels K, so the
  // normalised weight of level l is N / (K * n_l).
  std::size_t occupied = 0;
  for (auto c : w.counts_) occupied += c > 0;
  const double n = static_cast<double>(deltas.size());
  w.weights_.assign(w.counts_.size(), 0.0);
  for (std::size_t l = 0; l < w.counts_.size(); ++l) {
    if (w.counts_[l] > 0) {
      const double propensity = static_cast<double>(w.counts_[l]) / n;
      w.weights_[l] = (1.0 / propensity) / static_cast<double>(occupied);
    }
  }
  return w;
}

std::optional<double> IpwWeighter::weight(double delta) const {
  const auto level = static_cast<std::size_t>(uniform_bin(delta, levels()));
  if (counts_[level] == 0) return std::nullopt;
  return weights_[level];
}

std::vector<double> ipw_weights(std::span<const double> deltas, int levels) {
  const auto w = IpwWeighter::fit(deltas, levels);
  std::vector<double> out;
  out.reserve(deltas.size());
  for (double d : deltas) out.push_back(*w.weight(d));
  return out;
}

}  // namespace ktb

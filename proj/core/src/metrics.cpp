#include "ktb/metrics.hpp"

#include "ktb/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ktb {

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positive entries.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t tied_positives = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      tied_positives += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    positive_rank_sum += midrank * static_cast<double>(tied_positives);
    positives += tied_positives;
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (scores.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    hits += (scores[i] >= threshold ? 1 : 0) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

LevelReport per_level_accuracy(std::span<const LevelInput> rows, std::int64_t min_question_count,
                               double threshold) {
  LevelReport report;
  for (int b = 0; b < kLevelBins; ++b) {
    report.bins[b].lower = static_cast<double>(b) / kLevelBins;
    report.bins[b].upper = static_cast<double>(b + 1) / kLevelBins;
  }
  std::size_t hits = 0;
  std::size_t unbinned_hits = 0;
  for (const auto& row : rows) {
    const bool hit = (row.score >= threshold ? 1 : 0) == row.label;
    hits += hit ? 1 : 0;
    if (!row.discrimination || row.question_count < min_question_count) {
      ++report.unbinned_count;
      unbinned_hits += hit ? 1 : 0;
      continue;
    }
    auto& bin = report.bins[static_cast<std::size_t>(uniform_bin(*row.discrimination, kLevelBins))];
    ++bin.count;
    bin.hits += hit ? 1 : 0;
  }
  report.overall_count = rows.size();
  if (!rows.empty()) report.overall_accuracy = static_cast<double>(hits) / static_cast<double>(rows.size());
  if (report.unbinned_count > 0) {
    report.unbinned_accuracy =
        static_cast<double>(unbinned_hits) / static_cast<double>(report.unbinned_count);
  }
  std::size_t binned = 0;
  std::size_t binned_hits = 0;
  for (auto& bin : report.bins) {
    if (bin.count > 0) bin.accuracy = static_cast<double>(bin.hits) / static_cast<double>(bin.count);
    binned += bin.count;
    binned_hits += bin.hits;
  }
  if (binned > 0) report.binned_accuracy = static_cast<double>(binned_hits) / static_cast<double>(binned);
  return report;
}

}  // namespace ktb

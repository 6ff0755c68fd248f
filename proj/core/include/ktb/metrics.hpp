#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ktb {

// Area under the ROC curve by the rank method, ties credited one half.
// Absent when the labels hold a single class.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

// Fraction of entries where (score >= threshold) equals the label; 0 for
// empty input.
double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

inline constexpr int kLevelBins = 5;

struct LevelInput {
  double score = 0.5;
  int label = 0;
  std::optional<double> discrimination;  // empirical, from the train statistics
  std::int64_t question_count = 0;       // train answers to the question
};

struct LevelBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::size_t hits = 0;
  std::optional<double> accuracy;  // absent for an empty bin
};

struct LevelReport {
  double overall_accuracy = 0.0;  // every response
  std::size_t overall_count = 0;
  std::array<LevelBin, kLevelBins> bins;
  // Responses kept out of the bins: question below the count threshold or
  // without train statistics.
  std::size_t unbinned_count = 0;
  std::optional<double> unbinned_accuracy;
  // Count-weighted mean of the bin accuracies.
  std::optional<double> binned_accuracy;
};

LevelReport per_level_accuracy(std::span<const LevelInput> rows,
                               std::int64_t min_question_count = 10,
                               double threshold = 0.5);

}  // namespace ktb

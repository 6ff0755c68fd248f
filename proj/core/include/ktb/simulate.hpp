#pragma once

#include "ktb/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ktb {

// Parameters of a synthetic tutoring log. Students work through blocks of
// questions drawn from one concept at a time; the probability of a correct
// answer is logistic in (ability + concept mastery - question difficulty),
// and mastery grows with practice on the concept.
struct SimulationConfig {
  std::size_t students = 400;
  std::size_t questions = 600;
  std::size_t concepts = 40;
  std::size_t min_responses = 5;
  std::size_t max_responses = 120;
  double multi_concept_rate = 0.15;    // share of questions with two concepts
  double difficulty_mean = -0.9;       // negative: most questions are easy
  double difficulty_stddev = 1.6;
  double ability_stddev = 1.0;
  double mastery_stddev = 0.6;
  double learning_rate = 0.06;         // mastery gain per attempt on a concept
  double popularity_exponent = 1.1;    // Zipf exponent for question choice
  std::size_t min_block = 3;
  std::size_t max_block = 12;
  std::uint64_t seed = 1;
};

std::vector<ResponseRecord> simulate_log(const SimulationConfig& config);

// Writes records with the default (ASSISTments 2009) column layout:
// user_id,problem_id,skill_id,correct,order_id. Multi-concept questions use
// '_' between concept ids.
void write_log_csv(const std::filesystem::path& path, const std::vector<ResponseRecord>& records);

}  // namespace ktb

#include "ktb/simulate.hpp"

#include "ktb/errors.hpp"
#include "ktb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace ktb {

namespace {

// Inverse-CDF sampling over Zipf weights 1/(rank+1)^s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
      cdf_[i] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  template <typename Engine>
  std::size_t operator()(Engine& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), x);
    if (it == cdf_.end()) --it;
    return static_cast<std::size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

std::vector<ResponseRecord> simulate_log(const SimulationConfig& cfg) {
  if (cfg.students == 0 || cfg.questions == 0 || cfg.concepts == 0) {
    throw ConfigError("simulation needs students, questions and concepts");
  }
  if (cfg.min_responses > cfg.max_responses || cfg.min_block == 0 || cfg.min_block > cfg.max_block) {
    throw ConfigError("inconsistent simulation length settings");
  }
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Question bank: difficulty, primary concept, optional second concept.
  std::vector<double> difficulty(cfg.questions);
  std::vector<std::vector<std::size_t>> question_concepts(cfg.questions);
  std::vector<std::vector<std::size_t>> pool(cfg.concepts);
  for (std::size_t q = 0; q < cfg.questions; ++q) {
    difficulty[q] = cfg.difficulty_mean + cfg.difficulty_stddev * normal(rng);
    const std::size_t c = q % cfg.concepts;
    question_concepts[q].push_back(c);
    if (cfg.concepts > 1 && unit(rng) < cfg.multi_concept_rate) {
      std::size_t c2 = static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.concepts));
      c2 = std::min(c2, cfg.concepts - 1);
      if (c2 != c) question_concepts[q].push_back(c2);
    }
    pool[c].push_back(q);
  }
  for (auto& p : pool) std::shuffle(p.begin(), p.end(), rng);

  const ZipfSampler concept_sampler(cfg.concepts, 0.7);
  std::vector<ZipfSampler> question_samplers;
  question_samplers.reserve(cfg.concepts);
  for (const auto& p : pool) question_samplers.emplace_back(std::max<std::size_t>(1, p.size()), cfg.popularity_exponent);

  std::uniform_int_distribution<std::size_t> block_dist(cfg.min_block, cfg.max_block);

  std::vector<ResponseRecord> out;
  std::int64_t order = 0;
  for (std::size_t u = 0; u < cfg.students; ++u) {
    const double ability = cfg.ability_stddev * normal(rng);
    std::vector<double> mastery(cfg.concepts);
    for (auto& m : mastery) m = cfg.mastery_stddev * normal(rng);
    // Skewed lengths: many short streams, a few long ones.
    const double skew = unit(rng);
    const auto span = static_cast<double>(cfg.max_responses - cfg.min_responses);
    const std::size_t length =
        cfg.min_responses + static_cast<std::size_t>(std::floor(span * skew * skew));
    std::size_t produced = 0;
    while (produced < length) {
      const std::size_t c = concept_sampler(rng);
      if (pool[c].empty()) continue;
      const std::size_t block = std::min(block_dist(rng), length - produced);
      for (std::size_t k = 0; k < block; ++k) {
        const std::size_t q = pool[c][question_samplers[c](rng)];
        double skill = 0.0;
        for (std::size_t qc : question_concepts[q]) skill += mastery[qc];
        skill /= static_cast<double>(question_concepts[q].size());
        const double p = sigmoid(ability + skill - difficulty[q]);
        const int correct = unit(rng) < p ? 1 : 0;
        for (std::size_t qc : question_concepts[q]) {
          mastery[qc] += cfg.learning_rate * (correct ? 1.0 : 0.5);
        }
        ResponseRecord rec;
        rec.student_id = std::to_string(u + 1);
        rec.question_id = std::to_string(q + 1);
        rec.correct = correct;
        rec.order = OrderKey{true, static_cast<double>(++order), {}};
        for (std::size_t qc : question_concepts[q]) rec.concepts.push_back(std::to_string(qc + 1));
        std::sort(rec.concepts.begin(), rec.concepts.end(), id_less);
        rec.source_row = out.size() + 1;
        out.push_back(std::move(rec));
        ++produced;
      }
    }
  }
  return out;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<ResponseRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "user_id,problem_id,skill_id,correct,order_id\n";
  for (const auto& r : records) {
    std::string concepts;
    for (std::size_t i = 0; i < r.concepts.size(); ++i) {
      if (i) concepts += '_';
      concepts += r.concepts[i];
    }
    out << r.student_id << ',' << r.question_id << ',' << concepts << ',' << r.correct << ','
        << static_cast<long long>(r.order.number) << '\n';
  }
}

}  // namespace ktb

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace ktb {

// Ordering key of a response. Numeric values sort before textual ones;
// textual keys (e.g. ISO timestamps) compare lexicographically.
struct OrderKey {
  bool numeric = true;
  double number = 0.0;
  std::string text;

  static OrderKey parse(std::string_view raw);
  friend bool operator<(const OrderKey& a, const OrderKey& b);
  friend bool operator==(const OrderKey& a, const OrderKey& b) = default;
};

struct ResponseRecord {
  std::string student_id;
  std::string question_id;
  int correct = 0;  // 0 or 1
  OrderKey order;
  std::vector<std::string> concepts;  // raw concept labels, possibly empty
  std::size_t source_row = 0;         // 1-based data row in the input file
};

// Column mapping for raw interaction logs.
struct LogSchema {
  std::string student_column = "user_id";
  std::string question_column = "problem_id";
  std::string concept_column = "skill_id";  // empty: no concept labels
  std::string correct_column = "correct";
  std::string order_column = "order_id";  // empty: file order
  char delimiter = ',';
  // Separator inside one concept cell for multi-concept questions.
  std::string concept_delimiter = "_";
  // Rows sharing (student, question, order key) are one response labelled
  // with several concepts; merge them into a single record.
  bool merge_same_order = true;

  static LogSchema assist2009();
  static LogSchema assist2012();
  static LogSchema eedi();
  static LogSchema preset(std::string_view name);
};

struct LoadResult {
  std::vector<ResponseRecord> records;  // sorted by (student_id, order)
  std::size_t rows_read = 0;
  std::size_t rejected = 0;
  std::size_t duplicates_removed = 0;
  std::size_t merged = 0;
  std::vector<std::string> rejection_samples;  // first few reasons
};

// Reads a CSV/TSV interaction log. Rows whose correctness is not coercible
// to {0,1}, or whose mapped cells are missing or empty, are rejected and
// counted. Throws DataError on a missing file, a missing mapped column or
// zero valid rows.
LoadResult load_interaction_log(const std::filesystem::path& path, const LogSchema& schema);

// Splits a raw concept cell ("10_13", "[3, 71]", "5") into labels.
std::vector<std::string> split_concepts(std::string_view cell, std::string_view delimiter);

// Total order on opaque ids: integers by value first, then other strings
// lexicographically.
bool id_less(const std::string& a, const std::string& b);

// Binary question x concept incidence. Concept columns are the sorted
// concept ids followed by one reserved column for questions without labels.
class QMatrix {
 public:
  QMatrix() = default;
  QMatrix(std::vector<std::string> question_ids, std::vector<std::string> concept_ids,
          std::vector<std::vector<int>> rows);

  static QMatrix build(const std::vector<ResponseRecord>& records);

  static constexpr std::string_view kUnknownConcept = "__unknown__";

  std::size_t num_questions() const { return question_ids_.size(); }
  // Includes the reserved unknown-concept column.
  std::size_t num_concepts() const { return concept_ids_.size() + 1; }
  int unknown_concept() const { return static_cast<int>(concept_ids_.size()); }

  std::optional<int> question_index(const std::string& id) const;
  std::optional<int> concept_index(const std::string& id) const;
  const std::string& question_id(int q) const { return question_ids_.at(static_cast<std::size_t>(q)); }
  const std::string& concept_id(int c) const;
  const std::vector<std::string>& question_ids() const { return question_ids_; }
  const std::vector<std::string>& concept_ids() const { return concept_ids_; }

  // Sorted concept indices of question q; never empty.
  const std::vector<int>& concepts_of(int q) const { return rows_.at(static_cast<std::size_t>(q)); }
  Eigen::VectorXd dense_row(int q) const;
  double mean_concepts_per_question() const;
  std::size_t nonzeros() const;

 private:
  std::vector<std::string> question_ids_;
  std::vector<std::string> concept_ids_;
  std::vector<std::vector<int>> rows_;
  std::unordered_map<std::string, int> question_lookup_;
  std::unordered_map<std::string, int> concept_lookup_;
};

struct InteractionSequence {
  std::string student_id;
  int chunk = 0;  // position of this chunk within the student's stream
  std::vector<ResponseRecord> responses;

  std::string key() const { return student_id + "#" + std::to_string(chunk); }
};

// Cuts each student's stream into consecutive chunks of at most max_len;
// chunks shorter than min_len are dropped. Records must be grouped by
// student and ordered within each student.
std::vector<InteractionSequence> segment_sequences(const std::vector<ResponseRecord>& records,
                                                   std::size_t max_len = 50,
                                                   std::size_t min_len = 5);

struct SplitRatios {
  double train = 8.0;
  double valid = 1.0;
  double test = 1.0;
};

struct DataSplit {
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> valid;
  std::vector<InteractionSequence> test;
  std::uint64_t seed = 0;
};

// Part sizes for n items: largest-remainder apportionment of the ratios,
// ties resolved in train, valid, test order. When n >= 3 every part gets at
// least one item, taken from the largest part.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

// Deterministic shuffle under seed followed by partitioning. Throws
// DataError when fewer than three sequences are given.
DataSplit split_sequences(std::vector<InteractionSequence> seqs, const SplitRatios& ratios,
                          std::uint64_t seed);

// Per-question correctness counts over a reference response set.
class ResponseStatistics {
 public:
  struct Counts {
    std::int64_t answered = 0;
    std::int64_t correct = 0;
  };

  ResponseStatistics() = default;
  explicit ResponseStatistics(const std::vector<InteractionSequence>& reference);

  void add(const std::string& question_id, int correct);

  // Mean correctness of the question, absent for unseen questions.
  std::optional<double> pass_rate(const std::string& question_id) const;
  std::int64_t count(const std::string& question_id) const;
  const std::unordered_map<std::string, Counts>& counts() const { return counts_; }

  // Fraction of reference answers to the question whose correctness differs
  // from `correct`. Includes the target response itself when it belongs to
  // the reference set. Absent when the question is not in the reference.
  std::optional<double> empirical_discrimination(const std::string& question_id,
                                                 int correct) const;
  std::size_t total_responses() const { return total_; }
  double global_pass_rate() const;

 private:
  std::unordered_map<std::string, Counts> counts_;
  std::size_t total_ = 0;
  std::int64_t total_correct_ = 0;
};

struct PassRate {
  double rate = 0.0;
  std::int64_t count = 0;
};

// Pass rate and answer count per question id over the given sequences.
std::unordered_map<std::string, PassRate> question_pass_rate(
    const std::vector<InteractionSequence>& train);

// Uniform bin of value in [0,1] among `bins` bins; the last bin is closed.
int uniform_bin(double value, int bins);

struct DiscriminationSample {
  double value = 0.0;             // empirical discrimination of the response
  std::int64_t question_count = 0;  // reference answers to its question
};

struct Histogram {
  std::vector<std::size_t> counts;
  std::vector<double> proportions;
  std::size_t included = 0;
  std::size_t excluded = 0;  // below the question-count threshold

  // Share of included samples with value < 0.5 (the low-discrimination half).
  double low_share = 0.0;

  double lower(int bin) const;
  double upper(int bin) const;
};

// Proportions of samples per uniform bin on [0,1], after removing samples
// whose question has fewer than min_question_count reference answers.
// Throws DataError when nothing remains.
Histogram discrimination_histogram(const std::vector<DiscriminationSample>& samples,
                                   int bins = 5, std::int64_t min_question_count = 10);

// Empirical discrimination of every response of `responses`, measured
// against `reference`. Responses to questions missing from the reference
// are skipped.
std::vector<DiscriminationSample> discrimination_samples(
    const std::vector<InteractionSequence>& responses, const ResponseStatistics& reference);

// Model-facing form of a sequence: question indices into a QMatrix.
struct Sequence {
  std::string id;
  std::vector<int> questions;
  std::vector<int> labels;

  std::size_t size() const { return questions.size(); }
};

std::vector<Sequence> encode_sequences(const std::vector<InteractionSequence>& seqs,
                                       const QMatrix& qmatrix);

}  // namespace ktb

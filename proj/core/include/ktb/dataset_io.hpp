#pragma once

#include "ktb/dataset.hpp"

#include <filesystem>
#include <string>

namespace ktb {

// Canonical sequence file: one JSON object per line,
//   {"student_id": "...", "chunk": 0, "split": "train",
//    "responses": [["<question_id>", 1], ...]}
// written train first, then valid, then test.
void write_sequences_jsonl(const std::filesystem::path& path, const DataSplit& split);
DataSplit read_sequences_jsonl(const std::filesystem::path& path);

// Q-matrix as sparse triplets (question_index,concept_index,value) plus the
// index maps questions.csv and concepts.csv in the same directory. The last
// concepts.csv row is the reserved unknown-concept column.
void write_qmatrix(const std::filesystem::path& dir, const QMatrix& qmatrix);
QMatrix read_qmatrix(const std::filesystem::path& dir);

// question_id,count,correct,pass_rate sorted by question id.
void write_pass_rates_csv(const std::filesystem::path& path, const ResponseStatistics& stats);

// bin,lower,upper,count,proportion; proportions sum to one.
void write_histogram_csv(const std::filesystem::path& path, const Histogram& histogram);

// Shortest representation that parses back to the same double.
std::string format_double(double value);

}  // namespace ktb

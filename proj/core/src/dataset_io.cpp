#include "ktb/dataset_io.hpp"

#include "ktb/csv.hpp"
#include "ktb/errors.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

namespace ktb {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

void write_part(std::ofstream& out, const std::vector<InteractionSequence>& seqs,
                const char* split) {
  for (const auto& s : seqs) {
    nlohmann::json line;
    line["student_id"] = s.student_id;
    line["chunk"] = s.chunk;
    line["split"] = split;
    auto& responses = line["responses"];
    responses = nlohmann::json::array();
    for (const auto& r : s.responses) responses.push_back({r.question_id, r.correct});
    out << line.dump() << '\n';
  }
}

}  // namespace

std::string format_double(double value) { return fmt::format("{}", value); }

void write_sequences_jsonl(const fs::path& path, const DataSplit& split) {
  auto out = open_out(path);
  write_part(out, split.train, "train");
  write_part(out, split.valid, "valid");
  write_part(out, split.test, "test");
}

DataSplit read_sequences_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing sequence file " + path.string());
  DataSplit split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      InteractionSequence seq;
      seq.student_id = j.at("student_id").get<std::string>();
      seq.chunk = j.value("chunk", 0);
      std::size_t t = 0;
      for (const auto& pair : j.at("responses")) {
        ResponseRecord r;
        r.student_id = seq.student_id;
        r.question_id = pair.at(0).get<std::string>();
        r.correct = pair.at(1).get<int>();
        if (r.correct != 0 && r.correct != 1) throw DataError("correctness must be 0/1");
        r.order = OrderKey{true, static_cast<double>(t++), {}};
        seq.responses.push_back(std::move(r));
      }
      const auto part = j.value("split", std::string("train"));
      if (part == "train") {
        split.train.push_back(std::move(seq));
      } else if (part == "valid") {
        split.valid.push_back(std::move(seq));
      } else if (part == "test") {
        split.test.push_back(std::move(seq));
      } else {
        throw DataError("unknown split '" + part + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return split;
}

void write_qmatrix(const fs::path& dir, const QMatrix& qmatrix) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "qmatrix.csv");
    out << "question_index,concept_index,value\n";
    for (std::size_t q = 0; q < qmatrix.num_questions(); ++q) {
      for (int c : qmatrix.concepts_of(static_cast<int>(q))) out << q << ',' << c << ",1\n";
    }
  }
  {
    auto out = open_out(dir / "questions.csv");
    out << "index,question_id\n";
    for (std::size_t q = 0; q < qmatrix.num_questions(); ++q) {
      out << q << ',' << csv_escape(qmatrix.question_ids()[q]) << '\n';
    }
  }
  {
    auto out = open_out(dir / "concepts.csv");
    out << "index,concept_id\n";
    for (std::size_t c = 0; c < qmatrix.num_concepts(); ++c) {
      out << c << ',' << csv_escape(qmatrix.concept_id(static_cast<int>(c))) << '\n';
    }
  }
}

QMatrix read_qmatrix(const fs::path& dir) {
  auto read_ids = [&](const char* name) {
    CsvReader reader(dir / name, ',');
    std::vector<std::string> fields;
    std::vector<std::string> ids;
    reader.next(fields);
    while (reader.next(fields)) {
      if (fields.size() < 2) continue;
      if (std::stoul(fields[0]) != ids.size()) throw DataError(std::string("non-contiguous ") + name);
      ids.push_back(fields[1]);
    }
    return ids;
  };
  auto questions = read_ids("questions.csv");
  auto concepts = read_ids("concepts.csv");
  if (concepts.empty() || concepts.back() != QMatrix::kUnknownConcept) {
    throw DataError("concepts.csv must end with the reserved unknown concept");
  }
  concepts.pop_back();
  std::vector<std::vector<int>> rows(questions.size());
  CsvReader reader(dir / "qmatrix.csv", ',');
  std::vector<std::string> fields;
  reader.next(fields);
  while (reader.next(fields)) {
    if (fields.size() < 3) continue;
    const auto q = std::stoul(fields[0]);
    const int c = std::stoi(fields[1]);
    if (q >= rows.size()) throw DataError("qmatrix.csv question index out of range");
    if (fields[2] != "0") rows[q].push_back(c);
  }
  return QMatrix(std::move(questions), std::move(concepts), std::move(rows));
}

void write_pass_rates_csv(const fs::path& path, const ResponseStatistics& stats) {
  std::vector<std::string> ids;
  ids.reserve(stats.counts().size());
  for (const auto& [q, c] : stats.counts()) ids.push_back(q);
  std::sort(ids.begin(), ids.end(), id_less);
  auto out = open_out(path);
  out << "question_id,count,correct,pass_rate\n";
  for (const auto& q : ids) {
    const auto& c = stats.counts().at(q);
    out << csv_escape(q) << ',' << c.answered << ',' << c.correct << ','
        << format_double(static_cast<double>(c.correct) / static_cast<double>(c.answered)) << '\n';
  }
}

void write_histogram_csv(const fs::path& path, const Histogram& histogram) {
  auto out = open_out(path);
  out << "bin,lower,upper,count,proportion\n";
  for (std::size_t b = 0; b < histogram.counts.size(); ++b) {
    out << b << ',' << format_double(histogram.lower(static_cast<int>(b))) << ','
        << format_double(histogram.upper(static_cast<int>(b))) << ',' << histogram.counts[b] << ','
        << format_double(histogram.proportions[b]) << '\n';
  }
}

}  // namespace ktb

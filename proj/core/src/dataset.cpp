#include "ktb/dataset.hpp"

#include "ktb/csv.hpp"
#include "ktb/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace ktb {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<long long> parse_integer(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_correct(std::string_view raw) {
  auto s = trim(raw);
  if (auto v = parse_double(s)) {
    if (*v == 0.0) return 0;
    if (*v == 1.0) return 1;
    return std::nullopt;
  }
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "true") return 1;
  if (lower == "false") return 0;
  return std::nullopt;
}

int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

OrderKey OrderKey::parse(std::string_view raw) {
  OrderKey key;
  if (auto v = parse_double(raw)) {
    key.numeric = true;
    key.number = *v;
  } else {
    key.numeric = false;
    key.text = std::string(trim(raw));
  }
  return key;
}

bool operator<(const OrderKey& a, const OrderKey& b) {
  if (a.numeric != b.numeric) return a.numeric;
  if (a.numeric) return a.number < b.number;
  return a.text < b.text;
}

LogSchema LogSchema::assist2009() { return LogSchema{}; }

LogSchema LogSchema::assist2012() {
  LogSchema s;
  s.order_column = "start_time";
  return s;
}

LogSchema LogSchema::eedi() {
  LogSchema s;
  s.student_column = "UserId";
  s.question_column = "QuestionId";
  s.concept_column = "SubjectId";
  s.correct_column = "IsCorrect";
  s.order_column = "DateAnswered";
  s.concept_delimiter = ",";
  return s;
}

LogSchema LogSchema::preset(std::string_view name) {
  if (name == "assist2009" || name == "assist0910") return assist2009();
  if (name == "assist2012" || name == "assist1213") return assist2012();
  if (name == "eedi") return eedi();
  throw ConfigError(fmt::format("unknown schema preset '{}'", name));
}

std::vector<std::string> split_concepts(std::string_view cell, std::string_view delimiter) {
  auto s = trim(cell);
  if (!s.empty() && s.front() == '[') s.remove_prefix(1);
  if (!s.empty() && s.back() == ']') s.remove_suffix(1);
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  if (delimiter.empty()) {
    out.emplace_back(trim(s));
    return out;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(delimiter, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!piece.empty() && piece != "NA" && piece != "nan") out.emplace_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + delimiter.size();
  }
  std::sort(out.begin(), out.end(), id_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool id_less(const std::string& a, const std::string& b) {
  const auto ia = parse_integer(a);
  const auto ib = parse_integer(b);
  if (ia && ib) {
    if (*ia != *ib) return *ia < *ib;
    return a < b;
  }
  if (ia.has_value() != ib.has_value()) return ia.has_value();
  return a < b;
}

LoadResult load_interaction_log(const std::filesystem::path& path, const LogSchema& schema) {
  if (!std::filesystem::exists(path)) throw DataError("input file not found: " + path.string());
  CsvReader reader(path, schema.delimiter);
  std::vector<std::string> header;
  if (!reader.next(header)) throw DataError("empty input file: " + path.string());
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto require = [&](const std::string& name) {
    const int idx = find_column(header, name);
    if (idx < 0) throw DataError(fmt::format("column '{}' not found in {}", name, path.string()));
    return idx;
  };
  const int col_student = require(schema.student_column);
  const int col_question = require(schema.question_column);
  const int col_correct = require(schema.correct_column);
  const int col_concept = schema.concept_column.empty() ? -1 : require(schema.concept_column);
  const int col_order = schema.order_column.empty() ? -1 : require(schema.order_column);
  const int needed = std::max({col_student, col_question, col_correct, col_concept, col_order});

  LoadResult result;
  auto reject = [&](std::size_t row, const std::string& why) {
    ++result.rejected;
    if (result.rejection_samples.size() < 10) {
      result.rejection_samples.push_back(fmt::format("row {}: {}", row, why));
    }
  };

  std::vector<std::string> fields;
  std::size_t row = 0;
  while (reader.next(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    ++row;
    if (static_cast<int>(fields.size()) <= needed) {
      reject(row, "too few fields");
      continue;
    }
    ResponseRecord rec;
    rec.student_id = std::string(trim(fields[static_cast<std::size_t>(col_student)]));
    rec.question_id = std::string(trim(fields[static_cast<std::size_t>(col_question)]));
    if (rec.student_id.empty() || rec.question_id.empty()) {
      reject(row, "empty student or question id");
      continue;
    }
    const auto correct = parse_correct(fields[static_cast<std::size_t>(col_correct)]);
    if (!correct) {
      reject(row, fmt::format("correctness '{}' is not 0/1",
                              fields[static_cast<std::size_t>(col_correct)]));
      continue;
    }
    rec.correct = *correct;
    if (col_order >= 0) {
      const auto raw = trim(fields[static_cast<std::size_t>(col_order)]);
      if (raw.empty()) {
        reject(row, "empty order key");
        continue;
      }
      rec.order = OrderKey::parse(raw);
    } else {
      rec.order = OrderKey{true, static_cast<double>(row), {}};
    }
    if (col_concept >= 0) {
      rec.concepts =
          split_concepts(fields[static_cast<std::size_t>(col_concept)], schema.concept_delimiter);
    }
    rec.source_row = row;
    result.records.push_back(std::move(rec));
  }
  result.rows_read = row;

  auto& recs = result.records;
  std::stable_sort(recs.begin(), recs.end(), [](const ResponseRecord& a, const ResponseRecord& b) {
    if (a.student_id != b.student_id) return id_less(a.student_id, b.student_id);
    return a.order < b.order;
  });

  // Exact duplicates are dropped; same-order rows for one question with
  // different concept labels are merged into one multi-concept response.
  std::vector<ResponseRecord> kept;
  kept.reserve(recs.size());
  for (auto& rec : recs) {
    if (!kept.empty()) {
      auto& last = kept.back();
      const bool same_slot = last.student_id == rec.student_id &&
                             last.question_id == rec.question_id && last.order == rec.order &&
                             last.correct == rec.correct;
      if (same_slot && last.concepts == rec.concepts) {
        ++result.duplicates_removed;
        continue;
      }
      if (same_slot && schema.merge_same_order && col_order >= 0) {
        for (auto& c : rec.concepts) last.concepts.push_back(std::move(c));
        std::sort(last.concepts.begin(), last.concepts.end(), id_less);
        last.concepts.erase(std::unique(last.concepts.begin(), last.concepts.end()),
                            last.concepts.end());
        ++result.merged;
        continue;
      }
    }
    kept.push_back(std::move(rec));
  }
  recs = std::move(kept);

  if (recs.empty()) throw DataError("no valid rows in " + path.string());
  return result;
}

QMatrix::QMatrix(std::vector<std::string> question_ids, std::vector<std::string> concept_ids,
                 std::vector<std::vector<int>> rows)
    : question_ids_(std::move(question_ids)),
      concept_ids_(std::move(concept_ids)),
      rows_(std::move(rows)) {
  if (rows_.size() != question_ids_.size()) {
    throw DataError("Q-matrix row count does not match the question list");
  }
  for (std::size_t i = 0; i < question_ids_.size(); ++i) {
    question_lookup_.emplace(question_ids_[i], static_cast<int>(i));
  }
  for (std::size_t i = 0; i < concept_ids_.size(); ++i) {
    concept_lookup_.emplace(concept_ids_[i], static_cast<int>(i));
  }
  const int ncols = static_cast<int>(num_concepts());
  for (auto& r : rows_) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    if (r.empty()) r.push_back(unknown_concept());
    if (r.front() < 0 || r.back() >= ncols) throw DataError("Q-matrix concept index out of range");
  }
}

QMatrix QMatrix::build(const std::vector<ResponseRecord>& records) {
  std::map<std::string, std::set<std::string, decltype(&id_less)>, decltype(&id_less)> incidence(
      &id_less);
  std::set<std::string, decltype(&id_less)> concepts(&id_less);
  for (const auto& rec : records) {
    auto [it, inserted] = incidence.try_emplace(rec.question_id, &id_less);
    for (const auto& c : rec.concepts) {
      it->second.insert(c);
      concepts.insert(c);
    }
  }
  std::vector<std::string> concept_ids(concepts.begin(), concepts.end());
  std::unordered_map<std::string, int> concept_index;
  for (std::size_t i = 0; i < concept_ids.size(); ++i) {
    concept_index.emplace(concept_ids[i], static_cast<int>(i));
  }
  std::vector<std::string> question_ids;
  std::vector<std::vector<int>> rows;
  question_ids.reserve(incidence.size());
  for (const auto& [q, cs] : incidence) {
    question_ids.push_back(q);
    std::vector<int> row;
    for (const auto& c : cs) row.push_back(concept_index.at(c));
    rows.push_back(std::move(row));
  }
  return QMatrix(std::move(question_ids), std::move(concept_ids), std::move(rows));
}

std::optional<int> QMatrix::question_index(const std::string& id) const {
  auto it = question_lookup_.find(id);
  if (it == question_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> QMatrix::concept_index(const std::string& id) const {
  auto it = concept_lookup_.find(id);
  if (it == concept_lookup_.end()) return std::nullopt;
  return it->second;
}

const std::string& QMatrix::concept_id(int c) const {
  static const std::string unknown(kUnknownConcept);
  if (c == unknown_concept()) return unknown;
  return concept_ids_.at(static_cast<std::size_t>(c));
}

Eigen::VectorXd QMatrix::dense_row(int q) const {
  Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_concepts()));
  for (int c : concepts_of(q)) row[c] = 1.0;
  return row;
}

double QMatrix::mean_concepts_per_question() const {
  if (rows_.empty()) return 0.0;
  return static_cast<double>(nonzeros()) / static_cast<double>(rows_.size());
}

std::size_t QMatrix::nonzeros() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

std::vector<InteractionSequence> segment_sequences(const std::vector<ResponseRecord>& records,
                                                   std::size_t max_len, std::size_t min_len) {
  if (max_len == 0) throw ConfigError("max sequence length must be positive");
  std::vector<InteractionSequence> out;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t end = i;
    while (end < records.size() && records[end].student_id == records[i].student_id) ++end;
    int chunk = 0;
    for (std::size_t start = i; start < end; start += max_len) {
      const std::size_t stop = std::min(end, start + max_len);
      if (stop - start >= min_len) {
        InteractionSequence seq;
        seq.student_id = records[i].student_id;
        seq.chunk = chunk;
        seq.responses.assign(records.begin() + static_cast<std::ptrdiff_t>(start),
                             records.begin() + static_cast<std::ptrdiff_t>(stop));
        out.push_back(std::move(seq));
      }
      ++chunk;
    }
    i = end;
  }
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.valid, ratios.test};
  const double total = r[0] + r[1] + r[2];
  if (!(r[0] >= 0 && r[1] >= 0 && r[2] >= 0) || !(total > 0)) {
    throw ConfigError("split ratios must be non-negative with a positive sum");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double quota = static_cast<double>(n) * r[static_cast<std::size_t>(k)] / total;
    sizes[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(quota));
    remainder[static_cast<std::size_t>(k)] = quota - std::floor(quota);
    assigned += sizes[static_cast<std::size_t>(k)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[static_cast<std::size_t>(a)] >
                                              remainder[static_cast<std::size_t>(b)]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[static_cast<std::size_t>(order[k % 3])];
  if (n >= 3) {
    for (auto& s : sizes) {
      if (s == 0) {
        auto largest = std::max_element(sizes.begin(), sizes.end());
        --*largest;
        s = 1;
      }
    }
  }
  return sizes;
}

DataSplit split_sequences(std::vector<InteractionSequence> seqs, const SplitRatios& ratios,
                          std::uint64_t seed) {
  if (seqs.size() < 3) {
    throw DataError(fmt::format("need at least 3 sequences to split, got {}", seqs.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(seqs.begin(), seqs.end(), rng);
  const auto sizes = split_sizes(seqs.size(), ratios);
  DataSplit split;
  split.seed = seed;
  auto it = std::make_move_iterator(seqs.begin());
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, std::make_move_iterator(seqs.end()));
  return split;
}

ResponseStatistics::ResponseStatistics(const std::vector<InteractionSequence>& reference) {
  for (const auto& seq : reference) {
    for (const auto& r : seq.responses) add(r.question_id, r.correct);
  }
}

void ResponseStatistics::add(const std::string& question_id, int correct) {
  auto& c = counts_[question_id];
  ++c.answered;
  c.correct += correct;
  ++total_;
  total_correct_ += correct;
}

std::optional<double> ResponseStatistics::pass_rate(const std::string& question_id) const {
  auto it = counts_.find(question_id);
  if (it == counts_.end()) return std::nullopt;
  return static_cast<double>(it->second.correct) / static_cast<double>(it->second.answered);
}

std::int64_t ResponseStatistics::count(const std::string& question_id) const {
  auto it = counts_.find(question_id);
  return it == counts_.end() ? 0 : it->second.answered;
}

std::optional<double> ResponseStatistics::empirical_discrimination(const std::string& question_id,
                                                                   int correct) const {
  auto it = counts_.find(question_id);
  if (it == counts_.end()) return std::nullopt;
  const auto& c = it->second;
  const std::int64_t opposite = correct == 1 ? c.answered - c.correct : c.correct;
  return static_cast<double>(opposite) / static_cast<double>(c.answered);
}

double ResponseStatistics::global_pass_rate() const {
  if (total_ == 0) return 0.5;
  return static_cast<double>(total_correct_) / static_cast<double>(total_);
}

std::unordered_map<std::string, PassRate> question_pass_rate(
    const std::vector<InteractionSequence>& train) {
  const ResponseStatistics stats(train);
  std::unordered_map<std::string, PassRate> out;
  for (const auto& [q, c] : stats.counts()) {
    out.emplace(q, PassRate{static_cast<double>(c.correct) / static_cast<double>(c.answered),
                            c.answered});
  }
  return out;
}

int uniform_bin(double value, int bins) {
  // Counting edges k/bins <= value keeps exact rationals such as 3/5 on the
  // correct side of the 0.6 edge.
  int bin = 0;
  for (int k = 1; k < bins; ++k) {
    if (static_cast<double>(k) / static_cast<double>(bins) <= value) bin = k;
  }
  return bin;
}

double Histogram::lower(int bin) const {
  return static_cast<double>(bin) / static_cast<double>(counts.size());
}

double Histogram::upper(int bin) const {
  return static_cast<double>(bin + 1) / static_cast<double>(counts.size());
}

Histogram discrimination_histogram(const std::vector<DiscriminationSample>& samples, int bins,
                                   std::int64_t min_question_count) {
  if (bins <= 0) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  std::size_t low = 0;
  for (const auto& s : samples) {
    if (s.question_count < min_question_count) {
      ++h.excluded;
      continue;
    }
    ++h.counts[static_cast<std::size_t>(uniform_bin(s.value, bins))];
    if (s.value < 0.5) ++low;
    ++h.included;
  }
  if (h.included == 0) {
    throw DataError(fmt::format(
        "no responses left after removing questions answered fewer than {} times",
        min_question_count));
  }
  h.proportions.resize(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    h.proportions[b] = static_cast<double>(h.counts[b]) / static_cast<double>(h.included);
  }
  h.low_share = static_cast<double>(low) / static_cast<double>(h.included);
  return h;
}

std::vector<DiscriminationSample> discrimination_samples(
    const std::vector<InteractionSequence>& responses, const ResponseStatistics& reference) {
  std::vector<DiscriminationSample> out;
  for (const auto& seq : responses) {
    for (const auto& r : seq.responses) {
      if (auto d = reference.empirical_discrimination(r.question_id, r.correct)) {
        out.push_back({*d, reference.count(r.question_id)});
      }
    }
  }
  return out;
}

std::vector<Sequence> encode_sequences(const std::vector<InteractionSequence>& seqs,
                                       const QMatrix& qmatrix) {
  std::vector<Sequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    Sequence enc;
    enc.id = s.key();
    enc.questions.reserve(s.responses.size());
    enc.labels.reserve(s.responses.size());
    for (const auto& r : s.responses) {
      const auto q = qmatrix.question_index(r.question_id);
      if (!q) throw DataError("question '" + r.question_id + "' missing from the Q-matrix");
      enc.questions.push_back(*q);
      enc.labels.push_back(r.correct);
    }
    out.push_back(std::move(enc));
  }
  return out;
}

}  // namespace ktb

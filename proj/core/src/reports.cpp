#include "ktb/reports.hpp"

#include "ktb/config.hpp"
#include "ktb/csv.hpp"
#include "ktb/dataset.hpp"
#include "ktb/dataset_io.hpp"
#include "ktb/errors.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <charconv>
#include <fstream>

namespace ktb {

namespace {

constexpr const char* kPredictionHeader =
    "sequence_id,step,question_id,label,kt,tendency,disc_pred,zeta,fused,emp_disc,question_count";

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw DataError("bad number '" + s + "' in " + where);
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& where) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "' in " + where);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

double score_of(const PredictionRow& r, ScoreColumn c) {
  switch (c) {
    case ScoreColumn::Fused: return r.fused;
    case ScoreColumn::Kt: return r.kt;
    case ScoreColumn::Tendency: return r.tendency;
  }
  return r.fused;
}

constexpr ScoreColumn kColumns[] = {ScoreColumn::Fused, ScoreColumn::Kt, ScoreColumn::Tendency};

}  // namespace

void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows) {
  auto out = open_out(path);
  out << kPredictionHeader << '\n';
  for (const auto& r : rows) {
    out << csv_escape(r.sequence_id, ',') << ',' << r.step << ',' << csv_escape(r.question_id, ',')
        << ',' << r.label << ',' << format_double(r.kt) << ',' << format_double(r.tendency) << ','
        << format_double(r.disc_pred) << ',' << format_double(r.zeta) << ','
        << format_double(r.fused) << ',' << opt(r.emp_disc) << ',' << r.question_count << '\n';
  }
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing " + path.string());
  CsvReader reader(path, ',');
  std::vector<std::string> f;
  if (!reader.next(f) || fmt::format("{}", fmt::join(f, ",")) != kPredictionHeader) {
    throw DataError(path.string() + " does not have the predictions header");
  }
  std::vector<PredictionRow> rows;
  while (reader.next(f)) {
    const std::string where = fmt::format("{} line {}", path.string(), reader.line());
    if (f.size() != 11) throw DataError("wrong field count at " + where);
    PredictionRow r;
    r.sequence_id = f[0];
    r.step = static_cast<int>(parse_int(f[1], where));
    r.question_id = f[2];
    r.label = static_cast<int>(parse_int(f[3], where));
    r.kt = parse_double(f[4], where);
    r.tendency = parse_double(f[5], where);
    r.disc_pred = parse_double(f[6], where);
    r.zeta = parse_double(f[7], where);
    r.fused = parse_double(f[8], where);
    if (!f[9].empty()) r.emp_disc = parse_double(f[9], where);
    r.question_count = parse_int(f[10], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string to_string(ScoreColumn column) {
  switch (column) {
    case ScoreColumn::Fused: return "fused";
    case ScoreColumn::Kt: return "kt";
    case ScoreColumn::Tendency: return "tendency";
  }
  return "fused";
}

std::vector<LevelInput> level_inputs(const std::vector<PredictionRow>& rows, ScoreColumn column) {
  std::vector<LevelInput> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({score_of(r, column), r.label, r.emp_disc, r.question_count});
  return out;
}

std::vector<std::filesystem::path> emit_reports(const std::filesystem::path& dir,
                                                const std::filesystem::path& out_dir,
                                                std::int64_t min_question_count) {
  std::vector<std::filesystem::path> runs;
  if (std::filesystem::exists(dir / "predictions.csv")) {
    runs.push_back(dir);
  } else if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_directory() && std::filesystem::exists(e.path() / "predictions.csv")) runs.push_back(e.path());
    }
    std::sort(runs.begin(), runs.end());
  }
  if (runs.empty()) throw DataError("no predictions.csv under " + dir.string() + "; run train or eval first");

  std::filesystem::create_directories(out_dir);
  auto overall = open_out(out_dir / "overall.csv");
  auto levels = open_out(out_dir / "levels.csv");
  auto hist = open_out(out_dir / "discrimination_hist.csv");
  auto sweep = open_out(out_dir / "temperature_sweep.csv");
  overall << "run,backbone,mode,fusion,tau1,tau2,lambda,score,count,auc,acc\n";
  levels << "run,score,level,lower,upper,count,acc\n";
  hist << "run,bin,lower,upper,count,proportion\n";
  sweep << "run,tau1,tau2,lambda,auc,acc\n";

  for (const auto& run : runs) {
    const std::string name = csv_escape(run.filename().string(), ',');
    if (!std::filesystem::exists(run / "config.json")) throw DataError("missing " + (run / "config.json").string());
    const ExperimentConfig cfg = load_config(run / "config.json");
    const auto rows = read_predictions_csv(run / "predictions.csv");
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (const auto& r : rows) labels.push_back(r.label);

    for (ScoreColumn col : kColumns) {
      std::vector<double> scores;
      scores.reserve(rows.size());
      for (const auto& r : rows) scores.push_back(score_of(r, col));
      const auto a = auc(scores, labels);
      const double acc = accuracy(scores, labels);
      overall << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", name, to_string(cfg.backbone),
                             to_string(cfg.mode), to_string(cfg.resolved_fusion()),
                             format_double(cfg.tau1), format_double(cfg.tau2),
                             format_double(cfg.lambda), to_string(col), rows.size(), opt(a),
                             format_double(acc));
      if (col == ScoreColumn::Fused) {
        sweep << fmt::format("{},{},{},{},{},{}\n", name, format_double(cfg.tau1),
                             format_double(cfg.tau2), format_double(cfg.lambda), opt(a),
                             format_double(acc));
      }
      const auto inputs = level_inputs(rows, col);
      const auto rep = per_level_accuracy(inputs, min_question_count);
      for (int b = 0; b < kLevelBins; ++b) {
        const auto& bin = rep.bins[b];
        levels << fmt::format("{},{},{},{},{},{},{}\n", name, to_string(col), b,
                              format_double(bin.lower), format_double(bin.upper), bin.count,
                              opt(bin.accuracy));
      }
      levels << fmt::format("{},{},binned,0,1,{},{}\n", name, to_string(col),
                            rep.overall_count - rep.unbinned_count, opt(rep.binned_accuracy));
      levels << fmt::format("{},{},unbinned,,,{},{}\n", name, to_string(col), rep.unbinned_count,
                            opt(rep.unbinned_accuracy));
      levels << fmt::format("{},{},overall,,,{},{}\n", name, to_string(col), rep.overall_count,
                            format_double(rep.overall_accuracy));
    }

    std::vector<DiscriminationSample> samples;
    for (const auto& r : rows) {
      if (r.emp_disc) samples.push_back({*r.emp_disc, r.question_count});
    }
    try {
      const auto h = discrimination_histogram(samples, kLevelBins, min_question_count);
      for (int b = 0; b < kLevelBins; ++b) {
        hist << fmt::format("{},{},{},{},{},{}\n", name, b, format_double(h.lower(b)),
                            format_double(h.upper(b)), h.counts[b], format_double(h.proportions[b]));
      }
    } catch (const DataError&) {
      for (int b = 0; b < kLevelBins; ++b) {
        hist << fmt::format("{},{},{},{},0,\n", name, b, format_double(static_cast<double>(b) / kLevelBins),
                            format_double(static_cast<double>(b + 1) / kLevelBins));
      }
    }
  }
  return runs;
}

}  // namespace ktb

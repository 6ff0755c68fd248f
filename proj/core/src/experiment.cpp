#include "ktb/experiment.hpp"

#include "ktb/checkpoint.hpp"
#include "ktb/dataset_io.hpp"
#include "ktb/errors.hpp"
#include "ktb/metrics.hpp"
#include "ktb/reports.hpp"

#include <fmt/format.h>

#include <fstream>

namespace ktb {

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json histogram_json(const Histogram& h) {
  return {{"counts", h.counts},     {"proportions", h.proportions}, {"included", h.included},
          {"excluded", h.excluded}, {"low_share", h.low_share}};
}

nlohmann::json level_json(const LevelReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count},
                    {"acc", optional_json(b.accuracy)}});
  }
  return {{"overall_acc", r.overall_accuracy},
          {"overall_count", r.overall_count},
          {"bins", bins},
          {"binned_acc", optional_json(r.binned_accuracy)},
          {"unbinned_count", r.unbinned_count},
          {"unbinned_acc", optional_json(r.unbinned_accuracy)}};
}

void require_dir(const std::filesystem::path& dir, const std::string& what) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError(fmt::format("{} not found at {}", what, dir.string()));
  }
}

TendencyTrainOptions stage1_options(const ExperimentConfig& c) {
  TendencyTrainOptions o;
  o.learning_rate = c.stage1.learning_rate;
  o.epochs = c.stage1.epochs;
  o.batch_size = c.stage1.batch_size;
  o.dropout = c.stage1.dropout;
  o.l2 = c.stage1.l2;
  o.patience = c.stage1.patience;
  o.seed = c.seed + 5;
  return o;
}

}  // namespace

nlohmann::json PrepareSummary::to_json() const {
  nlohmann::json j = {{"rows_read", load.rows_read},
                      {"rejected", load.rejected},
                      {"duplicates_removed", load.duplicates_removed},
                      {"merged", load.merged},
                      {"responses", responses},
                      {"sequences", sequences},
                      {"train", train},
                      {"valid", valid},
                      {"test", test},
                      {"questions", questions},
                      {"concepts", concepts},
                      {"rejection_samples", load.rejection_samples}};
  j["discrimination"] = histogram ? histogram_json(*histogram) : nlohmann::json(nullptr);
  return j;
}

PrepareSummary prepare_dataset(const std::filesystem::path& raw, const PrepareOptions& options,
                               const std::filesystem::path& out_dir) {
  PrepareSummary summary;
  summary.load = load_interaction_log(raw, options.schema);
  auto records = std::move(summary.load.records);
  summary.load.records.clear();
  const QMatrix qmatrix = QMatrix::build(records);
  auto seqs = segment_sequences(records, options.max_len, options.min_len);
  records.clear();
  if (seqs.empty()) {
    throw DataError(fmt::format("no sequence has at least {} responses", options.min_len));
  }
  summary.sequences = seqs.size();
  DataSplit split = split_sequences(std::move(seqs), options.ratios, options.split_seed);
  summary.train = split.train.size();
  summary.valid = split.valid.size();
  summary.test = split.test.size();
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    for (const auto& s : *part) summary.responses += s.responses.size();
  }
  summary.questions = qmatrix.num_questions();
  summary.concepts = qmatrix.concept_ids().size();

  const ResponseStatistics stats(split.train);
  std::filesystem::create_directories(out_dir);
  write_sequences_jsonl(out_dir / "sequences.jsonl", split);
  write_qmatrix(out_dir, qmatrix);
  write_pass_rates_csv(out_dir / "pass_rates.csv", stats);
  try {
    summary.histogram = discrimination_histogram(discrimination_samples(split.train, stats), 5,
                                                 options.min_question_count);
    write_histogram_csv(out_dir / "discrimination_hist.csv", *summary.histogram);
  } catch (const DataError&) {
    summary.histogram.reset();
  }
  nlohmann::json stats_json = summary.to_json();
  stats_json["max_len"] = options.max_len;
  stats_json["min_len"] = options.min_len;
  stats_json["split_seed"] = options.split_seed;
  stats_json["min_question_count"] = options.min_question_count;
  write_json(out_dir / "stats.json", stats_json);
  return summary;
}

PreparedData load_prepared(const std::filesystem::path& dir) {
  require_dir(dir, "prepared data directory");
  if (!std::filesystem::exists(dir / "sequences.jsonl")) {
    throw DataError(dir.string() + " has no sequences.jsonl; run 'ktb prepare' first");
  }
  PreparedData data;
  auto qm = std::make_shared<QMatrix>(read_qmatrix(dir));
  data.split = read_sequences_jsonl(dir / "sequences.jsonl");
  data.train = encode_sequences(data.split.train, *qm);
  data.valid = encode_sequences(data.split.valid, *qm);
  data.test = encode_sequences(data.split.test, *qm);
  data.train_stats = ResponseStatistics(data.split.train);
  data.qmatrix = std::move(qm);
  if (data.train.empty()) throw DataError("prepared data has no training sequences");
  return data;
}

Histogram analyze_discrimination(const PreparedData& data, std::int64_t min_question_count,
                                 int bins) {
  return discrimination_histogram(discrimination_samples(data.split.train, data.train_stats), bins,
                                  min_question_count);
}

nlohmann::json to_json(const TendencyTrainReport& report) {
  return {{"epoch_loss", report.epoch_loss},
          {"initial_loss", report.initial_loss},
          {"final_loss", report.final_loss},
          {"epochs_run", report.epochs_run}};
}

Stage1Result run_stage1(const ExperimentConfig& config, const PreparedData& data,
                        const std::filesystem::path& dir) {
  config.validate();
  TendencyDims dims = config.tendency;
  dims.aggregation = config.aggregation;
  auto est = std::make_shared<TendencyEstimator>(data.qmatrix->num_questions(),
                                                 data.qmatrix->num_concepts(), dims, config.seed + 4);
  const auto targets = tendency_targets(data.train_stats, *data.qmatrix);
  Stage1Result result;
  result.report = pretrain_tendency(*est, *data.qmatrix, targets, stage1_options(config));
  est->save(dir, {{"train_report", to_json(result.report)}});
  result.tendency = std::move(est);
  return result;
}

std::shared_ptr<TendencyEstimator> load_stage1(const std::filesystem::path& dir,
                                               const PreparedData& data) {
  require_dir(dir, "Stage I checkpoint");
  auto est = std::make_shared<TendencyEstimator>(TendencyEstimator::load(dir));
  if (!est->frozen()) throw DataError("Stage I checkpoint at " + dir.string() + " is not frozen");
  if (est->num_questions() != data.qmatrix->num_questions() ||
      est->num_concepts() != data.qmatrix->num_concepts()) {
    throw DataError("Stage I checkpoint does not match the prepared Q-matrix");
  }
  return est;
}

Stage2Result run_stage2(const ExperimentConfig& config, const PreparedData& data,
                        std::shared_ptr<const TendencyEstimator> tendency,
                        const std::filesystem::path& dir, const ProgressFn& progress) {
  Stage2Result result;
  BackboneDims dims{config.model_dim, config.max_len, config.aggregation};
  const std::size_t nq = data.qmatrix->num_questions();
  result.backbone = make_backbone(config.backbone, dims, data.qmatrix,
                                  config.backbone_question_ids ? questions_seen(data.train, nq)
                                                               : std::vector<bool>(nq, false),
                                  config.seed);
  result.predictor = std::make_unique<DiscriminationPredictor>(
      tendency, PredictorDims{result.backbone->state_dim(), config.predictor_hidden_dim},
      config.seed + 3);
  Stage2Trainer trainer(config, data.qmatrix, tendency, *result.backbone, *result.predictor,
                        data.train);
  // Stored at float32; the in-memory models are rounded to match.
  auto save = [&] {
    round_to_float32(result.backbone->params());
    round_to_float32(result.predictor->params());
    std::filesystem::create_directories(dir);
    result.backbone->save(dir / "backbone");
    result.predictor->save(dir / "predictor");
  };
  try {
    result.report = trainer.fit(data.train, data.valid, [&](const EpochRecord& e) {
      if (progress) {
        progress(fmt::format("epoch {:3d}  train loss {:.5f}  valid auc {}  valid acc {:.4f}",
                             e.epoch, e.train.total,
                             e.valid_auc ? fmt::format("{:.4f}", *e.valid_auc) : "n/a", e.valid_acc));
      }
    });
  } catch (const RuntimeFailure&) {
    save();
    throw;
  }
  save();
  write_json(dir / "train_report.json", result.report.metrics_json());
  return result;
}

Evaluation score_split(const ExperimentConfig& config, const PreparedData& data,
                       std::shared_ptr<const TendencyEstimator> tendency, Backbone& backbone,
                       DiscriminationPredictor& predictor, const std::vector<Sequence>& seqs) {
  const Stage2Trainer scorer(config, data.qmatrix, std::move(tendency), backbone, predictor,
                             data.train);
  return scorer.evaluate(seqs);
}

nlohmann::json write_evaluation(const std::filesystem::path& dir, const ExperimentConfig& config,
                               const PreparedData& data, const Evaluation& evaluation) {
  std::vector<PredictionRow> rows;
  for (const auto& s : evaluation.sequences) {
    for (const auto& st : s.steps) {
      PredictionRow r;
      r.sequence_id = s.sequence->id;
      r.step = st.step;
      r.question_id = data.qmatrix->question_id(st.question);
      r.label = st.label;
      r.kt = st.kt;
      r.tendency = st.tendency;
      r.disc_pred = st.disc_pred;
      r.zeta = st.zeta;
      r.fused = st.fused;
      r.emp_disc = data.train_stats.empirical_discrimination(r.question_id, r.label);
      r.question_count = data.train_stats.count(r.question_id);
      rows.push_back(std::move(r));
    }
  }
  write_predictions_csv(dir / "predictions.csv", rows);

  nlohmann::json metrics = nlohmann::json::object();
  std::vector<int> labels;
  for (const auto& r : rows) labels.push_back(r.label);
  for (ScoreColumn col : {ScoreColumn::Fused, ScoreColumn::Kt, ScoreColumn::Tendency}) {
    const auto inputs = level_inputs(rows, col);
    std::vector<double> scores;
    for (const auto& in : inputs) scores.push_back(in.score);
    metrics[to_string(col)] = {{"auc", optional_json(auc(scores, labels))},
                               {"acc", accuracy(scores, labels)},
                               {"levels", level_json(per_level_accuracy(inputs, config.min_question_count))}};
  }
  metrics["count"] = rows.size();
  metrics["losses"] = {{"weighted_bce", evaluation.losses.weighted},
                       {"disc_mse", evaluation.losses.disc},
                       {"total", evaluation.losses.total}};
  return metrics;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentPaths& paths,
                                RunManifest manifest, const ProgressFn& progress) {
  config.validate();
  const PreparedData data = load_prepared(paths.prepared);
  create_fresh_directory(paths.run);
  manifest.config = config.to_json();
  manifest.seed = config.seed;
  manifest.tool_version = tool_version();
  if (manifest.started_at.empty()) manifest.started_at = utc_timestamp();
  manifest.add_input(paths.prepared);
  save_config(paths.run / "config.json", config);

  std::shared_ptr<TendencyEstimator> tendency;
  nlohmann::json stage1_report;
  if (paths.stage1) {
    manifest.add_input(*paths.stage1);
    tendency = load_stage1(*paths.stage1, data);
    std::filesystem::copy(*paths.stage1, paths.run / "stage1", std::filesystem::copy_options::recursive);
    stage1_report = load_checkpoint(paths.run / "stage1").metadata.value("train_report", nlohmann::json{});
  } else {
    if (progress) progress("stage I: pretraining the question tendency estimator");
    auto s1 = run_stage1(config, data, paths.run / "stage1");
    tendency = s1.tendency;
    stage1_report = to_json(s1.report);
  }

  if (progress) progress(fmt::format("stage II: training {} (mode {}, fusion {})",
                                     to_string(config.backbone), to_string(config.mode),
                                     to_string(config.resolved_fusion())));
  auto s2 = run_stage2(config, data, tendency, paths.run / "stage2", progress);

  const Evaluation valid = score_split(config, data, tendency, *s2.backbone, *s2.predictor, data.valid);
  const Evaluation test = score_split(config, data, tendency, *s2.backbone, *s2.predictor, data.test);
  ExperimentResult result;
  result.train_report = s2.report;
  result.report = {{"config", config.to_json()},
                   {"stage1", stage1_report},
                   {"stage2", s2.report.metrics_json()},
                   {"valid", {{"auc", optional_json(valid.auc)}, {"acc", valid.acc}}},
                   {"test", write_evaluation(paths.run, config, data, test)}};
  write_json(paths.run / "report.json", result.report);

  manifest.finished_at = utc_timestamp();
  manifest.add_outputs(paths.run);
  manifest.write(paths.run);
  return result;
}

std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& base,
                                             const std::filesystem::path& prepared,
                                             const std::filesystem::path& sweep_dir,
                                             const std::vector<double>& tau1_grid,
                                             const std::vector<double>& tau2_grid,
                                             const RunManifest& manifest,
                                             const ProgressFn& progress) {
  if (tau1_grid.empty() || tau2_grid.empty()) throw ConfigError("sweep grids must not be empty");
  base.validate();
  for (double t : tau1_grid) {
    if (!(t > 0.0)) throw ConfigError("tau1 grid values must be positive");
  }
  for (double t : tau2_grid) {
    if (!(t > 0.0)) throw ConfigError("tau2 grid values must be positive");
  }
  const PreparedData data = load_prepared(prepared);
  create_fresh_directory(sweep_dir);
  RunManifest top = manifest;
  top.config = base.to_json();
  top.config["sweep"] = {{"tau1", tau1_grid}, {"tau2", tau2_grid}};
  top.seed = base.seed;
  top.tool_version = tool_version();
  top.started_at = utc_timestamp();
  top.add_input(prepared);
  save_config(sweep_dir / "config.json", base);
  if (progress) progress("stage I: pretraining the shared question tendency estimator");
  run_stage1(base, data, sweep_dir / "stage1");

  std::vector<std::filesystem::path> runs;
  for (double t1 : tau1_grid) {
    for (double t2 : tau2_grid) {
      ExperimentConfig cfg = base;
      cfg.tau1 = t1;
      cfg.tau2 = t2;
      cfg.name = fmt::format("tau1_{}_tau2_{}", format_double(t1), format_double(t2));
      if (progress) progress("sweep point " + cfg.name);
      ExperimentPaths paths{prepared, sweep_dir / cfg.name, sweep_dir / "stage1"};
      RunManifest sub = manifest;
      sub.started_at = utc_timestamp();
      run_experiment(cfg, paths, sub, progress);
      runs.push_back(paths.run);
    }
  }
  top.finished_at = utc_timestamp();
  top.add_outputs(sweep_dir);
  top.write(sweep_dir);
  return runs;
}

LoadedRun load_run(const std::filesystem::path& run_dir, const PreparedData& data) {
  require_dir(run_dir, "run directory");
  if (!std::filesystem::exists(run_dir / "config.json")) {
    throw DataError(run_dir.string() + " has no config.json; is it a run directory?");
  }
  LoadedRun run;
  run.config = load_config(run_dir / "config.json");
  run.tendency = load_stage1(run_dir / "stage1", data);
  require_dir(run_dir / "stage2" / "backbone", "Stage II backbone checkpoint");
  run.backbone = load_backbone(run_dir / "stage2" / "backbone", data.qmatrix);
  run.predictor = std::make_unique<DiscriminationPredictor>(
      DiscriminationPredictor::load(run_dir / "stage2" / "predictor", run.tendency));
  return run;
}

}  // namespace ktb

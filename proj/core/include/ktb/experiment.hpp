#pragma once

#include "ktb/backbone.hpp"
#include "ktb/config.hpp"
#include "ktb/dataset.hpp"
#include "ktb/fusion.hpp"
#include "ktb/manifest.hpp"
#include "ktb/tendency.hpp"
#include "ktb/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ktb {

struct PrepareOptions {
  LogSchema schema;
  std::size_t max_len = 50;
  std::size_t min_len = 5;
  SplitRatios ratios;
  std::uint64_t split_seed = 2023;
  std::int64_t min_question_count = 10;
};

struct PrepareSummary {
  LoadResult load;  // records are not retained
  std::size_t sequences = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  std::size_t responses = 0;
  std::size_t questions = 0;
  std::size_t concepts = 0;  // labelled concepts, without the reserved column
  std::optional<Histogram> histogram;  // train responses, absent when all filtered

  nlohmann::json to_json() const;
};

// Loads a raw log and writes the canonical prepared directory:
// sequences.jsonl, qmatrix.csv, questions.csv, concepts.csv,
// pass_rates.csv, discrimination_hist.csv and stats.json.
PrepareSummary prepare_dataset(const std::filesystem::path& raw, const PrepareOptions& options,
                               const std::filesystem::path& out_dir);

struct PreparedData {
  std::shared_ptr<const QMatrix> qmatrix;
  DataSplit split;
  std::vector<Sequence> train;
  std::vector<Sequence> valid;
  std::vector<Sequence> test;
  ResponseStatistics train_stats;
};

PreparedData load_prepared(const std::filesystem::path& dir);

// Histogram of the empirical discrimination of train responses measured
// against the train set. Throws DataError when the question-count filter
// removes everything.
Histogram analyze_discrimination(const PreparedData& data, std::int64_t min_question_count = 10,
                                 int bins = 5);

// Stage I: fits, freezes and saves the tendency estimator into dir.
struct Stage1Result {
  std::shared_ptr<TendencyEstimator> tendency;
  TendencyTrainReport report;
};
Stage1Result run_stage1(const ExperimentConfig& config, const PreparedData& data,
                        const std::filesystem::path& dir);
nlohmann::json to_json(const TendencyTrainReport& report);

// Loads a Stage I checkpoint and checks it is frozen and fits the data.
std::shared_ptr<TendencyEstimator> load_stage1(const std::filesystem::path& dir,
                                               const PreparedData& data);

struct Stage2Result {
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<DiscriminationPredictor> predictor;
  TrainReport report;
};

using ProgressFn = std::function<void(const std::string&)>;

// Stage II with the given frozen estimator; saves stage2/ checkpoints into
// dir: backbone/, predictor/ and train_report.json. On a non-finite loss
// the last good parameters are saved before RuntimeFailure propagates.
Stage2Result run_stage2(const ExperimentConfig& config, const PreparedData& data,
                        std::shared_ptr<const TendencyEstimator> tendency,
                        const std::filesystem::path& dir, const ProgressFn& progress = {});

// Scores a split with trained models.
Evaluation score_split(const ExperimentConfig& config, const PreparedData& data,
                       std::shared_ptr<const TendencyEstimator> tendency, Backbone& backbone,
                       DiscriminationPredictor& predictor, const std::vector<Sequence>& seqs);

// Writes predictions.csv and returns the metrics block of report.json.
nlohmann::json write_evaluation(const std::filesystem::path& dir, const ExperimentConfig& config,
                               const PreparedData& data, const Evaluation& evaluation);

struct ExperimentPaths {
  std::filesystem::path prepared;
  std::filesystem::path run;
  // Reuse this Stage I checkpoint (copied into the run) instead of pretraining.
  std::optional<std::filesystem::path> stage1;
};

struct ExperimentResult {
  nlohmann::json report;
  TrainReport train_report;
};

// Stage I (or reuse), Stage II and test evaluation into a fresh run
// directory: config.json, manifest.json, stage1/, stage2/, report.json and
// predictions.csv. `manifest` supplies command and arguments.
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentPaths& paths,
                                RunManifest manifest, const ProgressFn& progress = {});

// Stage I once into <sweep_dir>/stage1, then one run per (tau1, tau2)
// pair named tau1_<a>_tau2_<b>, each reusing that checkpoint. Returns the
// run directories in grid order.
std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& base,
                                             const std::filesystem::path& prepared,
                                             const std::filesystem::path& sweep_dir,
                                             const std::vector<double>& tau1_grid,
                                             const std::vector<double>& tau2_grid,
                                             const RunManifest& manifest,
                                             const ProgressFn& progress = {});

// Loads the models of a finished run.
struct LoadedRun {
  ExperimentConfig config;
  std::shared_ptr<TendencyEstimator> tendency;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<DiscriminationPredictor> predictor;
};
LoadedRun load_run(const std::filesystem::path& run_dir, const PreparedData& data);

}  // namespace ktb

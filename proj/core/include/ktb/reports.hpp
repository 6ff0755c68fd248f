#pragma once

#include "ktb/metrics.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ktb {

// One row of predictions.csv:
//   sequence_id,step,question_id,label,kt,tendency,disc_pred,zeta,fused,
//   emp_disc,question_count
// emp_disc is empty for questions absent from the train set.
struct PredictionRow {
  std::string sequence_id;
  int step = 0;
  std::string question_id;
  int label = 0;
  double kt = 0.5;
  double tendency = 0.5;
  double disc_pred = 0.5;
  double zeta = 1.0;
  double fused = 0.5;
  std::optional<double> emp_disc;
  std::int64_t question_count = 0;
};

void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

enum class ScoreColumn { Fused, Kt, Tendency };
std::string to_string(ScoreColumn column);
std::vector<LevelInput> level_inputs(const std::vector<PredictionRow>& rows, ScoreColumn column);

// Reads the run directories under `dir` (dir itself when it holds
// predictions.csv, otherwise its immediate subdirectories that do, in name
// order) and writes into out_dir:
//   overall.csv              run,backbone,mode,fusion,tau1,tau2,lambda,score,count,auc,acc
//   levels.csv               run,score,level,lower,upper,count,acc
//   discrimination_hist.csv  run,bin,lower,upper,count,proportion
//   temperature_sweep.csv    run,tau1,tau2,lambda,auc,acc
// Outputs depend only on predictions.csv and config.json of each run.
// Returns the run directories used; throws DataError when there are none.
std::vector<std::filesystem::path> emit_reports(const std::filesystem::path& dir,
                                                const std::filesystem::path& out_dir,
                                                std::int64_t min_question_count = 10);

}  // namespace ktb

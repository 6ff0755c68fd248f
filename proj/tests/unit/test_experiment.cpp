#include "ktb/errors.hpp"
#include "ktb/experiment.hpp"
#include "ktb/reports.hpp"
#include "ktb/simulate.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

using namespace ktb;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::filesystem::path simulated_log(const testing::TempDir& tmp) {
  SimulationConfig sim;
  sim.students = 40;
  sim.questions = 30;
  sim.concepts = 5;
  sim.max_responses = 40;
  sim.seed = 4;
  const auto path = tmp / "log.csv";
  write_log_csv(path, simulate_log(sim));
  return path;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.model_dim = 8;
  c.tendency = TendencyDims{6, 4, 8, ConceptAggregation::Sum};
  c.predictor_hidden_dim = 8;
  c.stage1.epochs = 5;
  c.stage2.max_epochs = 2;
  c.stage2.batch_size = 8;
  c.max_len = 20;
  return c;
}

PrepareOptions tiny_prepare() {
  PrepareOptions o;
  o.max_len = 20;
  return o;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("fixture log prepares into the canonical layout") {
  testing::TempDir tmp;
  PrepareOptions opts;
  opts.min_len = 2;
  opts.min_question_count = 1;
  const auto summary = prepare_dataset(testing::data_dir() / "fixture_log.csv", opts, tmp / "prep");
  CHECK(summary.load.rows_read == 20);
  CHECK(summary.sequences == 3);
  CHECK(summary.train + summary.valid + summary.test == 3);
  CHECK(summary.questions == 6);
  CHECK(summary.concepts == 3);
  for (const char* f : {"sequences.jsonl", "qmatrix.csv", "questions.csv", "concepts.csv", "pass_rates.csv",
                        "discrimination_hist.csv", "stats.json"}) {
    CHECK_MESSAGE(std::filesystem::exists(tmp / "prep" / f), f);
  }
  const auto data = load_prepared(tmp / "prep");
  CHECK(data.qmatrix->num_questions() == 6);
  CHECK(data.train.size() + data.valid.size() + data.test.size() == 3);

  testing::TempDir again;
  prepare_dataset(testing::data_dir() / "fixture_log.csv", opts, again / "prep");
  CHECK(sha256_tree(tmp / "prep") == sha256_tree(again / "prep"));
}

TEST_CASE("analysis fails when the count filter removes everything") {
  testing::TempDir tmp;
  PrepareOptions opts;
  opts.min_len = 2;
  prepare_dataset(testing::data_dir() / "fixture_log.csv", opts, tmp / "prep");
  const auto data = load_prepared(tmp / "prep");
  CHECK_THROWS_AS(analyze_discrimination(data, 1000), DataError);
  const auto h = analyze_discrimination(data, 1);
  double sum = 0.0;
  for (double p : h.proportions) sum += p;
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("end-to-end run on a simulated log") {
  testing::TempDir tmp;
  const auto log = simulated_log(tmp);
  prepare_dataset(log, tiny_prepare(), tmp / "prep");
  const auto cfg = tiny_config();
  RunManifest m;
  m.command = "train";
  const auto result = run_experiment(cfg, {tmp / "prep", tmp / "run", std::nullopt}, m);
  for (const char* f : {"config.json", "manifest.json", "report.json", "predictions.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(tmp / "run" / f), f);
  }
  CHECK(std::filesystem::exists(tmp / "run" / "stage1"));
  CHECK(std::filesystem::exists(tmp / "run" / "stage2" / "backbone"));
  CHECK(std::filesystem::exists(tmp / "run" / "stage2" / "predictor"));
  CHECK(result.train_report.epochs.size() == 2);
  const auto& test = result.report["test"];
  for (const char* col : {"fused", "kt", "tendency"}) {
    CHECK(test.contains(col));
    CHECK(test[col]["acc"].get<double>() >= 0.0);
  }
  CHECK(first_line(tmp / "run" / "predictions.csv") ==
        "sequence_id,step,question_id,label,kt,tendency,disc_pred,zeta,fused,emp_disc,question_count");

  const auto manifest = RunManifest::read(tmp / "run");
  CHECK(manifest.command == "train");
  CHECK(manifest.seed == cfg.seed);
  REQUIRE(manifest.inputs.size() == 1);
  CHECK(manifest.inputs[0].sha256 == sha256_tree(tmp / "prep"));
  bool saw_predictions = false;
  for (const auto& o : manifest.outputs) {
    if (o.path == "predictions.csv") {
      saw_predictions = true;
      CHECK(o.sha256 == sha256_file(tmp / "run" / "predictions.csv"));
    }
  }
  CHECK(saw_predictions);

  // Existing runs are never overwritten.
  CHECK_THROWS_AS(run_experiment(cfg, {tmp / "prep", tmp / "run", std::nullopt}, m), ConfigError);

  // A loaded run reproduces the stored predictions.
  const auto data = load_prepared(tmp / "prep");
  auto loaded = load_run(tmp / "run", data);
  const auto ev = score_split(loaded.config, data, loaded.tendency, *loaded.backbone, *loaded.predictor, data.test);
  const auto rows = read_predictions_csv(tmp / "run" / "predictions.csv");
  std::size_t i = 0;
  for (const auto& s : ev.sequences) {
    for (const auto& st : s.steps) {
      REQUIRE(i < rows.size());
      CHECK(std::abs(rows[i].fused - st.fused) < 1e-12);
      ++i;
    }
  }
  CHECK(i == rows.size());

  // Same seed, same outputs.
  run_experiment(cfg, {tmp / "prep", tmp / "run2", std::nullopt}, m);
  CHECK(slurp(tmp / "run" / "predictions.csv") == slurp(tmp / "run2" / "predictions.csv"));
  CHECK(sha256_tree(tmp / "run" / "stage2") == sha256_tree(tmp / "run2" / "stage2"));

  // Reusing the Stage I checkpoint copies it unchanged.
  run_experiment(cfg, {tmp / "prep", tmp / "run3", tmp / "run" / "stage1"}, m);
  CHECK(sha256_tree(tmp / "run" / "stage1") == sha256_tree(tmp / "run3" / "stage1"));
  CHECK(slurp(tmp / "run" / "predictions.csv") == slurp(tmp / "run3" / "predictions.csv"));
}

TEST_CASE("reports have fixed schemas and are deterministic") {
  testing::TempDir tmp;
  prepare_dataset(simulated_log(tmp), tiny_prepare(), tmp / "prep");
  auto cfg = tiny_config();
  cfg.stage2.max_epochs = 1;
  RunManifest m;
  for (auto mode : {RebalanceMode::Dr4kt, RebalanceMode::None}) {
    cfg.mode = mode;
    cfg.name = to_string(mode);
    run_experiment(cfg, {tmp / "prep", tmp / "runs" / cfg.name, std::nullopt}, m);
  }
  const auto used = emit_reports(tmp / "runs", tmp / "out1");
  CHECK(used.size() == 2);
  emit_reports(tmp / "runs", tmp / "out2");
  CHECK(first_line(tmp / "out1" / "overall.csv") == "run,backbone,mode,fusion,tau1,tau2,lambda,score,count,auc,acc");
  CHECK(first_line(tmp / "out1" / "levels.csv") == "run,score,level,lower,upper,count,acc");
  CHECK(first_line(tmp / "out1" / "discrimination_hist.csv") == "run,bin,lower,upper,count,proportion");
  CHECK(first_line(tmp / "out1" / "temperature_sweep.csv") == "run,tau1,tau2,lambda,auc,acc");
  for (const char* f : {"overall.csv", "levels.csv", "discrimination_hist.csv", "temperature_sweep.csv"}) {
    CHECK_MESSAGE(slurp(tmp / "out1" / f) == slurp(tmp / "out2" / f), f);
  }
  CHECK(csv_rows(tmp / "out1" / "overall.csv").size() == 6);
  CHECK(csv_rows(tmp / "out1" / "temperature_sweep.csv").size() == 2);
  std::map<std::string, double> sums;
  for (const auto& r : csv_rows(tmp / "out1" / "discrimination_hist.csv")) sums[r[0]] += std::stod(r[5]);
  CHECK(sums.size() == 2);
  for (const auto& [run, sum] : sums) CHECK(std::abs(sum - 1.0) < 1e-9);
  CHECK_THROWS_AS(emit_reports(tmp / "prep", tmp / "out3"), DataError);
}

TEST_CASE("reported levels agree with the stored predictions") {
  testing::TempDir tmp;
  prepare_dataset(simulated_log(tmp), tiny_prepare(), tmp / "prep");
  auto cfg = tiny_config();
  cfg.stage2.max_epochs = 1;
  run_experiment(cfg, {tmp / "prep", tmp / "run", std::nullopt}, RunManifest{});
  const auto rows = read_predictions_csv(tmp / "run" / "predictions.csv");
  const auto inputs = level_inputs(rows, ScoreColumn::Kt);
  REQUIRE(inputs.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(inputs[i].score == rows[i].kt);
  const auto lr = per_level_accuracy(inputs, cfg.min_question_count);
  emit_reports(tmp / "run", tmp / "out");
  std::size_t binned = 0;
  for (const auto& r : csv_rows(tmp / "out" / "levels.csv")) {
    if (r[1] == "kt" && r[2].size() == 1) binned += std::stoul(r[5]);
  }
  std::size_t expect = 0;
  for (const auto& b : lr.bins) expect += b.count;
  CHECK(binned == expect);
  CHECK(binned + lr.unbinned_count == rows.size());
}

TEST_CASE("sweep produces one run per grid point") {
  testing::TempDir tmp;
  prepare_dataset(simulated_log(tmp), tiny_prepare(), tmp / "prep");
  auto cfg = tiny_config();
  cfg.stage2.max_epochs = 1;
  const auto runs = run_sweep(cfg, tmp / "prep", tmp / "sweep", {0.5, 1.0}, {1.5, 2.0, 2.5}, RunManifest{});
  CHECK(runs.size() == 6);
  CHECK(runs.front().filename() == "tau1_0.5_tau2_1.5");
  CHECK(std::filesystem::exists(tmp / "sweep" / "manifest.json"));
  for (const auto& r : runs) {
    CHECK(sha256_tree(r / "stage1") == sha256_tree(tmp / "sweep" / "stage1"));
    CHECK(std::filesystem::exists(r / "manifest.json"));
  }
  emit_reports(tmp / "sweep", tmp / "out");
  CHECK(csv_rows(tmp / "out" / "temperature_sweep.csv").size() == 6);
  CHECK_THROWS_AS(run_sweep(cfg, tmp / "prep", tmp / "sweep2", {}, {1.0}, RunManifest{}), ConfigError);
}

}

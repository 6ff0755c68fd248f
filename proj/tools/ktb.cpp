// ktb: data preparation, two-stage training, evaluation and reports.

#include "ktb/config.hpp"
#include "ktb/dataset_io.hpp"
#include "ktb/errors.hpp"
#include "ktb/experiment.hpp"
#include "ktb/manifest.hpp"
#include "ktb/reports.hpp"
#include "ktb/simulate.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

void progress(const std::string& line) { fmt::print(stderr, "{}\n", line); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ktb::RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ktb::ConfigError("bad grid value '" + item + "'");
    }
  }
  return out;
}

// Experiment options shared by pretrain, train and sweep: --config plus one
// flag per configuration key, applied in that order over the defaults.
struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON experiment configuration")->check(CLI::ExistingFile);
    for (const auto& key : ktb::config_keys()) {
      cmd->add_option_function<std::string>(
          "--" + key, [this, key](const std::string& v) { overrides[key] = v; },
          "override of config key " + key);
    }
  }

  ktb::ExperimentConfig resolve() const {
    ktb::ExperimentConfig cfg;
    if (!config_file.empty()) cfg = ktb::load_config(config_file, cfg);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
  }
};

fs::path run_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KTB_RUN_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

ktb::RunManifest base_manifest(const std::string& command, int argc, char** argv) {
  ktb::RunManifest m;
  m.command = command;
  for (int i = 1; i < argc; ++i) m.arguments.emplace_back(argv[i]);
  m.tool_version = ktb::tool_version();
  m.started_at = ktb::utc_timestamp();
  return m;
}

void print_json(const nlohmann::json& j) { fmt::print("{}\n", j.dump(2)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrimination-aware rebalancing for knowledge tracing"};
  app.set_version_flag("--version", ktb::tool_version());
  app.require_subcommand(1);
  app.fallthrough();
  std::string root_flag;
  app.add_option("--run-root", root_flag, "directory for run outputs (env KTB_RUN_ROOT, default ./runs)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "write a synthetic interaction log");
  ktb::SimulationConfig sim;
  std::string sim_out;
  simulate->add_option("--out", sim_out, "output CSV")->required();
  simulate->add_option("--students", sim.students, "number of students");
  simulate->add_option("--questions", sim.questions, "number of questions");
  simulate->add_option("--concepts", sim.concepts, "number of concepts");
  simulate->add_option("--min-responses", sim.min_responses, "fewest responses per student");
  simulate->add_option("--max-responses", sim.max_responses, "most responses per student");
  simulate->add_option("--seed", sim.seed, "random seed");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "load a raw log into canonical sequences");
  ktb::PrepareOptions prep;
  std::string prep_in, prep_out, prep_schema = "assist2009";
  std::map<std::string, std::string> columns;
  std::string delimiter;
  prepare->add_option("--input", prep_in, "raw CSV/TSV log")->required();
  prepare->add_option("--out", prep_out, "prepared data directory")->required();
  prepare->add_option("--schema", prep_schema, "column preset: assist2009, assist2012 or eedi");
  for (const char* c : {"student-column", "question-column", "concept-column", "correct-column",
                        "order-column", "concept-delimiter"}) {
    prepare->add_option_function<std::string>(
        std::string("--") + c, [&columns, c](const std::string& v) { columns[c] = v; },
        "override of the schema preset");
  }
  prepare->add_option("--delimiter", delimiter, "field delimiter (use 'tab' for TSV)");
  prepare->add_option("--max-len", prep.max_len, "sequence length cap");
  prepare->add_option("--min-len", prep.min_len, "shortest kept sequence");
  prepare->add_option("--split-seed", prep.split_seed, "seed of the 8:1:1 sequence split");
  prepare->add_option("--min-question-count", prep.min_question_count,
                      "answers a question needs to enter the discrimination histogram");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "discrimination histogram of the train responses");
  std::string an_data, an_out;
  std::int64_t an_min_count = 10;
  analyze->add_option("--data", an_data, "prepared data directory")->required();
  analyze->add_option("--out", an_out, "output directory (default <run-root>/analysis-<data>)");
  analyze->add_option("--min-question-count", an_min_count, "question answer threshold");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "stage I: fit and freeze the tendency estimator");
  ConfigOptions pre_cfg;
  pre_cfg.attach(pretrain);
  std::string pre_data, pre_out;
  pretrain->add_option("--data", pre_data, "prepared data directory")->required();
  pretrain->add_option("--out", pre_out, "run directory (default <run-root>/<name>)");

  // train
  auto* train = app.add_subcommand("train", "stage I (or reuse) and stage II, then test evaluation");
  ConfigOptions train_cfg;
  train_cfg.attach(train);
  std::string train_data, train_out, train_stage1;
  train->add_option("--data", train_data, "prepared data directory")->required();
  train->add_option("--out", train_out, "run directory (default <run-root>/<name>)");
  train->add_option("--stage1", train_stage1,
                    "stage I checkpoint directory or a pretrain run directory to reuse");

  // eval
  auto* eval = app.add_subcommand("eval", "score a split with a trained run");
  std::string ev_run, ev_data, ev_out, ev_split = "test";
  eval->add_option("--run", ev_run, "trained run directory")->required();
  eval->add_option("--data", ev_data, "prepared data directory")->required();
  eval->add_option("--split", ev_split, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--out", ev_out, "output directory (default <run>-eval-<split>)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid over tau1 and tau2");
  ConfigOptions sweep_cfg;
  sweep_cfg.attach(sweep);
  std::string sw_data, sw_out, sw_tau1 = "0.5,1,1.5,2,2.5", sw_tau2 = "0.5,1,1.5,2,2.5";
  sweep->add_option("--data", sw_data, "prepared data directory")->required();
  sweep->add_option("--out", sw_out, "sweep directory (default <run-root>/<name>-sweep)");
  sweep->add_option("--tau1-grid", sw_tau1, "comma-separated tau1 values");
  sweep->add_option("--tau2-grid", sw_tau2, "comma-separated tau2 values");

  // report
  auto* report = app.add_subcommand("report", "regenerate report CSVs from predictions");
  std::string rep_dir, rep_out;
  std::int64_t rep_min_count = 10;
  report->add_option("--dir", rep_dir, "run or sweep directory")->required();
  report->add_option("--out", rep_out, "output directory (default <dir>/reports)");
  report->add_option("--min-question-count", rep_min_count, "question answer threshold for levels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const fs::path root = run_root(root_flag);
    if (*simulate) {
      const auto records = ktb::simulate_log(sim);
      if (const auto parent = fs::path(sim_out).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
      }
      ktb::write_log_csv(sim_out, records);
      fmt::print("wrote {} responses to {}\n", records.size(), sim_out);
    } else if (*prepare) {
      prep.schema = ktb::LogSchema::preset(prep_schema);
      auto& s = prep.schema;
      if (columns.count("student-column")) s.student_column = columns["student-column"];
      if (columns.count("question-column")) s.question_column = columns["question-column"];
      if (columns.count("concept-column")) s.concept_column = columns["concept-column"];
      if (columns.count("correct-column")) s.correct_column = columns["correct-column"];
      if (columns.count("order-column")) s.order_column = columns["order-column"];
      if (columns.count("concept-delimiter")) s.concept_delimiter = columns["concept-delimiter"];
      if (delimiter == "tab") {
        s.delimiter = '\t';
      } else if (delimiter.size() == 1) {
        s.delimiter = delimiter[0];
      } else if (!delimiter.empty()) {
        throw ktb::ConfigError("delimiter must be one character or 'tab'");
      }
      auto manifest = base_manifest("prepare", argc, argv);
      manifest.add_input(prep_in);
      ktb::create_fresh_directory(prep_out);
      const auto summary = ktb::prepare_dataset(prep_in, prep, prep_out);
      manifest.config = {{"schema", prep_schema},        {"max_len", prep.max_len},
                         {"min_len", prep.min_len},     {"split_seed", prep.split_seed},
                         {"min_question_count", prep.min_question_count}};
      manifest.seed = prep.split_seed;
      manifest.finished_at = ktb::utc_timestamp();
      manifest.add_outputs(prep_out);
      manifest.write(prep_out);
      print_json(summary.to_json());
    } else if (*analyze) {
      const auto data = ktb::load_prepared(an_data);
      const fs::path out = an_out.empty() ? root / ("analysis-" + fs::path(an_data).filename().string())
                                          : fs::path(an_out);
      auto manifest = base_manifest("analyze", argc, argv);
      manifest.add_input(an_data);
      const auto hist = ktb::analyze_discrimination(data, an_min_count);
      ktb::create_fresh_directory(out);
      ktb::write_histogram_csv(out / "discrimination_hist.csv", hist);
      const nlohmann::json summary = {{"included", hist.included},
                                      {"excluded", hist.excluded},
                                      {"min_question_count", an_min_count},
                                      {"low_share", hist.low_share},
                                      {"high_share", 1.0 - hist.low_share},
                                      {"proportions", hist.proportions}};
      write_json(out / "imbalance.json", summary);
      manifest.config = {{"min_question_count", an_min_count}};
      manifest.finished_at = ktb::utc_timestamp();
      manifest.add_outputs(out);
      manifest.write(out);
      print_json(summary);
    } else if (*pretrain) {
      const auto cfg = pre_cfg.resolve();
      const auto data = ktb::load_prepared(pre_data);
      const fs::path out = pre_out.empty() ? root / cfg.name : fs::path(pre_out);
      auto manifest = base_manifest("pretrain", argc, argv);
      manifest.config = cfg.to_json();
      manifest.seed = cfg.seed;
      manifest.add_input(pre_data);
      ktb::create_fresh_directory(out);
      ktb::save_config(out / "config.json", cfg);
      progress("stage I: pretraining the question tendency estimator");
      const auto s1 = ktb::run_stage1(cfg, data, out / "stage1");
      manifest.finished_at = ktb::utc_timestamp();
      manifest.add_outputs(out);
      manifest.write(out);
      print_json(ktb::to_json(s1.report));
    } else if (*train) {
      const auto cfg = train_cfg.resolve();
      ktb::ExperimentPaths paths;
      paths.prepared = train_data;
      paths.run = train_out.empty() ? root / cfg.name : fs::path(train_out);
      if (!train_stage1.empty()) {
        fs::path s1 = train_stage1;
        if (fs::is_directory(s1 / "stage1")) s1 /= "stage1";
        paths.stage1 = s1;
      }
      const auto result = ktb::run_experiment(cfg, paths, base_manifest("train", argc, argv), progress);
      print_json(result.report.at("test"));
    } else if (*eval) {
      const auto data = ktb::load_prepared(ev_data);
      auto run = ktb::load_run(ev_run, data);
      std::string run_dir = ev_run;
      while (run_dir.size() > 1 && run_dir.back() == '/') run_dir.pop_back();
      const fs::path out = ev_out.empty() ? fs::path(run_dir + "-eval-" + ev_split) : fs::path(ev_out);
      auto manifest = base_manifest("eval", argc, argv);
      manifest.config = run.config.to_json();
      manifest.seed = run.config.seed;
      manifest.add_input(ev_data);
      manifest.add_input(ev_run);
      const auto& seqs = ev_split == "train" ? data.train : ev_split == "valid" ? data.valid : data.test;
      const auto evaluation =
          ktb::score_split(run.config, data, run.tendency, *run.backbone, *run.predictor, seqs);
      ktb::create_fresh_directory(out);
      ktb::save_config(out / "config.json", run.config);
      const auto metrics = ktb::write_evaluation(out, run.config, data, evaluation);
      write_json(out / "report.json", {{"split", ev_split}, {"metrics", metrics}});
      manifest.finished_at = ktb::utc_timestamp();
      manifest.add_outputs(out);
      manifest.write(out);
      print_json(metrics);
    } else if (*sweep) {
      const auto cfg = sweep_cfg.resolve();
      const fs::path out = sw_out.empty() ? root / (cfg.name + "-sweep") : fs::path(sw_out);
      const auto runs = ktb::run_sweep(cfg, sw_data, out, parse_grid(sw_tau1), parse_grid(sw_tau2),
                                       base_manifest("sweep", argc, argv), progress);
      ktb::emit_reports(out, out / "reports", cfg.min_question_count);
      fmt::print("{} runs; reports in {}\n", runs.size(), (out / "reports").string());
    } else if (*report) {
      const fs::path out = rep_out.empty() ? fs::path(rep_dir) / "reports" : fs::path(rep_out);
      const auto runs = ktb::emit_reports(rep_dir, out, rep_min_count);
      fmt::print("{} run(s); reports in {}\n", runs.size(), out.string());
    }
  } catch (const ktb::ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kExitConfig;
  } catch (const ktb::DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "runtime failure: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}

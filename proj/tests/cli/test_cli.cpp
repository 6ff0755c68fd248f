#include "ktb/manifest.hpp"
#include "testing.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

using namespace ktb;

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

Result run(const testing::TempDir& tmp, const std::vector<std::string>& args, const std::string& env = "") {
  std::string cmd = env.empty() ? "" : env + " ";
  cmd += quote(KTB_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const auto out = tmp / "stdout.txt";
  const auto err = tmp / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

const std::string kFixture = (testing::data_dir() / "fixture_log.csv").string();

std::vector<std::string> tiny_flags() {
  return {"--model_dim", "8", "--tendency.question_dim", "4", "--tendency.concept_dim", "4",
          "--tendency.hidden_dim", "8", "--predictor.hidden_dim", "8", "--stage1.epochs", "3",
          "--stage2.max_epochs", "1", "--stage2.batch_size", "16", "--max_len", "20"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Simulated log prepared once per test.
fs::path prepared(const testing::TempDir& tmp) {
  const auto log = (tmp / "log.csv").string();
  REQUIRE(run(tmp, {"simulate", "--out", log, "--students", "40", "--questions", "30", "--concepts", "5",
                    "--max-responses", "40", "--seed", "3"})
              .code == 0);
  const auto dir = tmp / "prep";
  REQUIRE(run(tmp, {"prepare", "--input", log, "--out", dir.string(), "--max-len", "20"}).code == 0);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with the configuration code") {
  testing::TempDir tmp;
  CHECK(run(tmp, {}).code == 2);
  CHECK(run(tmp, {"bogus"}).code == 2);
  CHECK(run(tmp, {"prepare"}).code == 2);
  CHECK(run(tmp, {"--help"}).code == 0);
  const auto r = run(tmp, {"train", "--data", tmp.path().string(), "--tau1", "0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("tau1") != std::string::npos);
  CHECK(run(tmp, {"train", "--data", tmp.path().string(), "--backbone", "akt"}).code == 2);
  CHECK(run(tmp, {"train", "--data", tmp.path().string(), "--mode", "focal"}).code == 2);
}

TEST_CASE("data problems exit with the data code") {
  testing::TempDir tmp;
  auto r = run(tmp, {"prepare", "--input", (tmp / "missing.csv").string(), "--out", (tmp / "p").string()});
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());
  r = run(tmp, {"train", "--data", (tmp / "nothing").string()});
  CHECK(r.code == 3);
  r = run(tmp, {"report", "--dir", tmp.path().string()});
  CHECK(r.code == 3);
}

TEST_CASE("prepare is idempotent") {
  testing::TempDir tmp;
  const auto a = tmp / "a";
  const auto b = tmp / "b";
  REQUIRE(run(tmp, {"prepare", "--input", kFixture, "--out", a.string(), "--min-len", "2"}).code == 0);
  REQUIRE(run(tmp, {"prepare", "--input", kFixture, "--out", b.string(), "--min-len", "2"}).code == 0);
  CHECK(sha256_tree(a) == sha256_tree(b));
  const auto ma = RunManifest::read(a);
  const auto mb = RunManifest::read(b);
  REQUIRE(ma.inputs.size() == 1);
  CHECK(ma.inputs[0].sha256 == sha256_file(kFixture));
  CHECK(ma.outputs.size() == mb.outputs.size());
  for (std::size_t i = 0; i < ma.outputs.size(); ++i) CHECK(ma.outputs[i].sha256 == mb.outputs[i].sha256);
  // Finished outputs are never overwritten.
  CHECK(run(tmp, {"prepare", "--input", kFixture, "--out", a.string()}).code == 2);
}

TEST_CASE("analyze writes a normalised histogram and rejects empty corpora") {
  testing::TempDir tmp;
  const auto prep = tmp / "prep";
  REQUIRE(run(tmp, {"prepare", "--input", kFixture, "--out", prep.string(), "--min-len", "2"}).code == 0);
  const auto out = tmp / "an";
  REQUIRE(run(tmp, {"analyze", "--data", prep.string(), "--out", out.string(), "--min-question-count", "1"}).code ==
          0);
  const auto rows = lines(out / "discrimination_hist.csv");
  REQUIRE(rows.size() == 6);
  double sum = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) sum += std::stod(rows[i].substr(rows[i].rfind(',') + 1));
  CHECK(std::abs(sum - 1.0) < 1e-9);
  CHECK(fs::exists(out / "imbalance.json"));
  CHECK(fs::exists(out / "manifest.json"));

  const auto r = run(tmp, {"analyze", "--data", prep.string(), "--out", (tmp / "an2").string(),
                           "--min-question-count", "100000"});
  CHECK(r.code == 3);
  CHECK(r.err.find("data error") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "an2"));
}

TEST_CASE("train, eval and report through the run root") {
  testing::TempDir tmp;
  const auto prep = prepared(tmp);
  const auto root = tmp / "root";
  const std::string env = "KTB_RUN_ROOT=" + quote(root.string());
  auto r = run(tmp, concat({"train", "--data", prep.string(), "--name", "plain", "--mode", "none"}, tiny_flags()), env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto run_dir = root / "plain";
  for (const char* f : {"config.json", "manifest.json", "report.json", "predictions.csv"}) {
    CHECK_MESSAGE(fs::exists(run_dir / f), f);
  }
  const auto cfg = nlohmann::json::parse(slurp(run_dir / "config.json"));
  CHECK(cfg["mode"] == "none");
  CHECK(cfg["stage2"]["max_epochs"] == 1);
  const auto manifest = RunManifest::read(run_dir);
  CHECK(manifest.command == "train");
  CHECK(manifest.config == cfg);

  // Plain backbone serves its own prediction.
  const auto preds = lines(run_dir / "predictions.csv");
  REQUIRE(preds.size() > 1);

  // Same name again: refused.
  r = run(tmp, concat({"train", "--data", prep.string(), "--name", "plain", "--mode", "none"}, tiny_flags()), env);
  CHECK(r.code == 2);

  // Flag after the subcommand overrides the environment.
  const auto other = tmp / "other";
  r = run(tmp,
          concat({"train", "--data", prep.string(), "--name", "dr", "--stage1", run_dir.string(), "--run-root",
                  other.string()},
                 tiny_flags()),
          env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(other / "dr" / "stage1"));
  CHECK(sha256_tree(other / "dr" / "stage1") == sha256_tree(run_dir / "stage1"));

  r = run(tmp, {"eval", "--run", run_dir.string(), "--data", prep.string(), "--split", "valid"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(root / "plain-eval-valid" / "predictions.csv"));
  CHECK(fs::exists(root / "plain-eval-valid" / "manifest.json"));
  CHECK(run(tmp, {"eval", "--run", run_dir.string(), "--data", prep.string(), "--split", "dev"}).code == 2);

  r = run(tmp, {"report", "--dir", root.string(), "--out", (tmp / "rep").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(lines(tmp / "rep" / "overall.csv").size() == 1 + 3 * 2);

  r = run(tmp, {"train", "--data", prep.string(), "--stage1", (tmp / "nope").string(), "--name", "x"}, env);
  CHECK(r.code == 3);
}

TEST_CASE("pretrain writes a reusable stage one checkpoint") {
  testing::TempDir tmp;
  const auto prep = prepared(tmp);
  const auto out = tmp / "s1";
  auto r = run(tmp, concat({"pretrain", "--data", prep.string(), "--out", out.string()}, tiny_flags()));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(out / "stage1"));
  CHECK(fs::exists(out / "manifest.json"));
  r = run(tmp, concat({"train", "--data", prep.string(), "--out", (tmp / "t").string(), "--stage1", out.string()},
                      tiny_flags()));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(sha256_tree(out / "stage1") == sha256_tree(tmp / "t" / "stage1"));
}

TEST_CASE("config file with flag precedence") {
  testing::TempDir tmp;
  const auto prep = prepared(tmp);
  {
    std::ofstream cfg(tmp / "c.json");
    cfg << R"({"tau1": 2.0, "tau2": 0.5, "lambda": 0.25})";
  }
  auto r = run(tmp, concat({"train", "--data", prep.string(), "--out", (tmp / "run").string(), "--config",
                            (tmp / "c.json").string(), "--tau2", "2.5"},
                           tiny_flags()));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto cfg = nlohmann::json::parse(slurp(tmp / "run" / "config.json"));
  CHECK(cfg["tau1"] == 2.0);
  CHECK(cfg["tau2"] == 2.5);
  CHECK(cfg["lambda"] == 0.25);
  {
    std::ofstream bad(tmp / "bad.json");
    bad << R"({"tau9": 1})";
  }
  CHECK(run(tmp, {"train", "--data", prep.string(), "--config", (tmp / "bad.json").string()}).code == 2);
}

TEST_CASE("sweep over the default grid gives 25 rows") {
  testing::TempDir tmp;
  const auto prep = prepared(tmp);
  const auto out = tmp / "sweep";
  auto r = run(tmp, concat({"sweep", "--data", prep.string(), "--out", out.string()}, tiny_flags()));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = lines(out / "reports" / "temperature_sweep.csv");
  CHECK(rows.size() == 26);
  CHECK(rows[0] == "run,tau1,tau2,lambda,auc,acc");
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "tau1_2.5_tau2_2.5" / "manifest.json"));
  CHECK(run(tmp, {"sweep", "--data", prep.string(), "--out", (tmp / "s2").string(), "--tau1-grid", "1,x"}).code == 2);
}

TEST_CASE("commands are reproducible") {
  testing::TempDir tmp;
  const auto prep = prepared(tmp);
  for (const char* name : {"a", "b"}) {
    const auto r = run(tmp, concat({"train", "--data", prep.string(), "--out", (tmp / name).string()}, tiny_flags()));
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  CHECK(sha256_tree(tmp / "a") == sha256_tree(tmp / "b"));
}

}

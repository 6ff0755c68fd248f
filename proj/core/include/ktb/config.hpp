#pragma once

#include "ktb/backbone.hpp"
#include "ktb/tendency.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace ktb {

// How Stage II weighs each response in the prediction loss.
//   dr4kt: w = delta^(1/tau1), delta from the frozen tendency estimator
//   freq:  as dr4kt with the question's train pass rate as tendency
//   ipw:   inverse propensity of the response's discrimination level
//   none:  w = 1
enum class RebalanceMode { Dr4kt, Freq, Ipw, None };

// Which score is served.
//   adaptive: zeta * kt + (1 - zeta) * tendency
//   kt:       backbone only
//   average:  (kt + tendency) / 2
//   auto:     adaptive for dr4kt and freq, kt for ipw and none
enum class FusionMode { Adaptive, Kt, Average, Auto };

RebalanceMode parse_rebalance_mode(const std::string& name);
std::string to_string(RebalanceMode mode);
FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

struct Stage1Config {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 256;
  double dropout = 0.2;
  double l2 = 1e-5;
  int patience = 10;
};

struct Stage2Config {
  double learning_rate = 1e-3;            // backbone
  double predictor_learning_rate = 1e-3;  // discrimination predictor
  int batch_size = 32;                    // sequences per update
  double clip_norm = 5.0;                 // per parameter group; <= 0 disables
  int max_epochs = 50;
  int patience = 10;
  bool include_first_step = true;  // count the loss of the first response of each sequence
  int ipw_levels = 10;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 42;

  BackboneKind backbone = BackboneKind::Dkt;
  RebalanceMode mode = RebalanceMode::Dr4kt;
  FusionMode fusion = FusionMode::Auto;
  double tau1 = 1.0;
  double tau2 = 1.5;
  double lambda = 1.0;

  int model_dim = 64;
  int max_len = 50;
  // false: the backbone embeds concepts only (no per-question rows)
  bool backbone_question_ids = true;
  ConceptAggregation aggregation = ConceptAggregation::Sum;

  TendencyDims tendency;
  int predictor_hidden_dim = 64;
  double predictor_dropout = 0.2;
  double predictor_l2 = 1e-5;

  Stage1Config stage1;
  Stage2Config stage2;

  int min_question_count = 10;  // threshold for per-level breakdowns

  // Fusion after resolving `auto`.
  FusionMode resolved_fusion() const;
  // The discrimination predictor is trained only when it feeds the served score.
  bool trains_predictor() const;

  // Throws ConfigError on any out-of-range value.
  void validate() const;

  nlohmann::json to_json() const;
  // Starts from `base` and applies every key present in j. Unknown keys are
  // rejected with ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
  static ExperimentConfig from_json(const nlohmann::json& j);

  // Sets one field from its dotted key ("tau1", "stage2.batch_size", ...).
  void set(const std::string& key, const std::string& value);
};

// Dotted keys of every configuration field, in serialisation order.
std::vector<std::string> config_keys();

ExperimentConfig load_config(const std::filesystem::path& path,
                             const ExperimentConfig& base = ExperimentConfig{});
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace ktb

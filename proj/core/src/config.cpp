#include "ktb/config.hpp"

#include "ktb/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <limits>

namespace ktb {

namespace {

using FieldRef = std::variant<double*, int*, std::uint64_t*, bool*, std::string*, BackboneKind*,
                              RebalanceMode*, FusionMode*, ConceptAggregation*>;

struct Field {
  const char* key;
  std::function<FieldRef(ExperimentConfig&)> ref;
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      {"name", [](C& c) -> FieldRef { return &c.name; }},
      {"seed", [](C& c) -> FieldRef { return &c.seed; }},
      {"backbone", [](C& c) -> FieldRef { return &c.backbone; }},
      {"mode", [](C& c) -> FieldRef { return &c.mode; }},
      {"fusion", [](C& c) -> FieldRef { return &c.fusion; }},
      {"tau1", [](C& c) -> FieldRef { return &c.tau1; }},
      {"tau2", [](C& c) -> FieldRef { return &c.tau2; }},
      {"lambda", [](C& c) -> FieldRef { return &c.lambda; }},
      {"model_dim", [](C& c) -> FieldRef { return &c.model_dim; }},
      {"max_len", [](C& c) -> FieldRef { return &c.max_len; }},
      {"backbone_question_ids", [](C& c) -> FieldRef { return &c.backbone_question_ids; }},
      {"aggregation", [](C& c) -> FieldRef { return &c.aggregation; }},
      {"tendency.question_dim", [](C& c) -> FieldRef { return &c.tendency.question_dim; }},
      {"tendency.concept_dim", [](C& c) -> FieldRef { return &c.tendency.concept_dim; }},
      {"tendency.hidden_dim", [](C& c) -> FieldRef { return &c.tendency.hidden_dim; }},
      {"predictor.hidden_dim", [](C& c) -> FieldRef { return &c.predictor_hidden_dim; }},
      {"predictor.dropout", [](C& c) -> FieldRef { return &c.predictor_dropout; }},
      {"predictor.l2", [](C& c) -> FieldRef { return &c.predictor_l2; }},
      {"stage1.learning_rate", [](C& c) -> FieldRef { return &c.stage1.learning_rate; }},
      {"stage1.epochs", [](C& c) -> FieldRef { return &c.stage1.epochs; }},
      {"stage1.batch_size", [](C& c) -> FieldRef { return &c.stage1.batch_size; }},
      {"stage1.dropout", [](C& c) -> FieldRef { return &c.stage1.dropout; }},
      {"stage1.l2", [](C& c) -> FieldRef { return &c.stage1.l2; }},
      {"stage1.patience", [](C& c) -> FieldRef { return &c.stage1.patience; }},
      {"stage2.learning_rate", [](C& c) -> FieldRef { return &c.stage2.learning_rate; }},
      {"stage2.predictor_learning_rate",
       [](C& c) -> FieldRef { return &c.stage2.predictor_learning_rate; }},
      {"stage2.batch_size", [](C& c) -> FieldRef { return &c.stage2.batch_size; }},
      {"stage2.clip_norm", [](C& c) -> FieldRef { return &c.stage2.clip_norm; }},
      {"stage2.max_epochs", [](C& c) -> FieldRef { return &c.stage2.max_epochs; }},
      {"stage2.patience", [](C& c) -> FieldRef { return &c.stage2.patience; }},
      {"stage2.include_first_step", [](C& c) -> FieldRef { return &c.stage2.include_first_step; }},
      {"stage2.ipw_levels", [](C& c) -> FieldRef { return &c.stage2.ipw_levels; }},
      {"min_question_count", [](C& c) -> FieldRef { return &c.min_question_count; }},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(fmt::format("'{}' expects a number, got '{}'", key, text));
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(fmt::format("'{}' expects true or false, got '{}'", key, text));
}

void assign_from_string(const std::string& key, FieldRef ref, const std::string& text) {
  std::visit(overloaded{
                 [&](double* p) { *p = parse_number<double>(key, text); },
                 [&](int* p) { *p = parse_number<int>(key, text); },
                 [&](std::uint64_t* p) { *p = parse_number<std::uint64_t>(key, text); },
                 [&](bool* p) { *p = parse_bool(key, text); },
                 [&](std::string* p) { *p = text; },
                 [&](BackboneKind* p) { *p = parse_backbone_kind(text); },
                 [&](RebalanceMode* p) { *p = parse_rebalance_mode(text); },
                 [&](FusionMode* p) { *p = parse_fusion_mode(text); },
                 [&](ConceptAggregation* p) { *p = parse_aggregation(text); },
             },
             ref);
}

void assign_from_json(const std::string& key, FieldRef ref, const nlohmann::json& v) {
  auto fail = [&](const char* expected) {
    throw ConfigError(fmt::format("'{}' expects {}, got {}", key, expected, v.dump()));
  };
  std::visit(overloaded{
                 [&](double* p) {
                   if (!v.is_number()) fail("a number");
                   *p = v.get<double>();
                 },
                 [&](int* p) {
                   if (!v.is_number_integer()) fail("an integer");
                   const auto x = v.get<std::int64_t>();
                   if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
                     fail("a 32-bit integer");
                   }
                   *p = static_cast<int>(x);
                 },
                 [&](std::uint64_t* p) {
                   if (!v.is_number_unsigned()) fail("a non-negative integer");
                   *p = v.get<std::uint64_t>();
                 },
                 [&](bool* p) {
                   if (!v.is_boolean()) fail("a boolean");
                   *p = v.get<bool>();
                 },
                 [&](auto* p) {
                   if (!v.is_string()) fail("a string");
                   assign_from_string(key, p, v.get<std::string>());
                 },
             },
             ref);
}

nlohmann::json field_to_json(FieldRef ref) {
  return std::visit(overloaded{
                        [](double* p) { return nlohmann::json(*p); },
                        [](int* p) { return nlohmann::json(*p); },
                        [](std::uint64_t* p) { return nlohmann::json(*p); },
                        [](bool* p) { return nlohmann::json(*p); },
                        [](std::string* p) { return nlohmann::json(*p); },
                        [](auto* p) { return nlohmann::json(to_string(*p)); },
                    },
                    ref);
}

void flatten(const nlohmann::json& j, const std::string& prefix,
             std::vector<std::pair<std::string, const nlohmann::json*>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, &*it);
    }
  }
}

}  // namespace

RebalanceMode parse_rebalance_mode(const std::string& name) {
  if (name == "dr4kt") return RebalanceMode::Dr4kt;
  if (name == "freq") return RebalanceMode::Freq;
  if (name == "ipw") return RebalanceMode::Ipw;
  if (name == "none") return RebalanceMode::None;
  throw ConfigError("unknown mode '" + name + "' (expected dr4kt, freq, ipw or none)");
}

std::string to_string(RebalanceMode mode) {
  switch (mode) {
    case RebalanceMode::Dr4kt: return "dr4kt";
    case RebalanceMode::Freq: return "freq";
    case RebalanceMode::Ipw: return "ipw";
    case RebalanceMode::None: return "none";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "adaptive") return FusionMode::Adaptive;
  if (name == "kt") return FusionMode::Kt;
  if (name == "average") return FusionMode::Average;
  if (name == "auto") return FusionMode::Auto;
  throw ConfigError("unknown fusion '" + name + "' (expected adaptive, kt, average or auto)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Adaptive: return "adaptive";
    case FusionMode::Kt: return "kt";
    case FusionMode::Average: return "average";
    case FusionMode::Auto: return "auto";
  }
  return "unknown";
}

FusionMode ExperimentConfig::resolved_fusion() const {
  if (fusion != FusionMode::Auto) return fusion;
  return mode == RebalanceMode::Dr4kt || mode == RebalanceMode::Freq ? FusionMode::Adaptive
                                                                      : FusionMode::Kt;
}

bool ExperimentConfig::trains_predictor() const {
  return resolved_fusion() == FusionMode::Adaptive && lambda > 0.0;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(tau1 > 0.0, "tau1 must be positive");
  require(tau2 > 0.0, "tau2 must be positive");
  require(lambda >= 0.0, "lambda must be non-negative");
  require(model_dim > 0 && max_len > 0, "model_dim and max_len must be positive");
  require(tendency.question_dim > 0 && tendency.concept_dim > 0 && tendency.hidden_dim > 0,
          "tendency dimensions must be positive");
  require(predictor_hidden_dim > 0, "predictor.hidden_dim must be positive");
  require(predictor_dropout >= 0.0 && predictor_dropout < 1.0, "predictor.dropout must be in [0,1)");
  require(stage1.dropout >= 0.0 && stage1.dropout < 1.0, "stage1.dropout must be in [0,1)");
  require(predictor_l2 >= 0.0 && stage1.l2 >= 0.0, "l2 coefficients must be non-negative");
  require(stage1.learning_rate > 0.0 && stage2.learning_rate > 0.0 &&
              stage2.predictor_learning_rate > 0.0,
          "learning rates must be positive");
  require(stage1.epochs >= 1 && stage2.max_epochs >= 1, "epoch budgets must be at least 1");
  require(stage1.batch_size >= 1 && stage2.batch_size >= 1, "batch sizes must be at least 1");
  require(stage1.patience >= 1 && stage2.patience >= 1, "patience must be at least 1");
  require(stage2.ipw_levels >= 1, "stage2.ipw_levels must be at least 1");
  require(min_question_count >= 0, "min_question_count must be non-negative");
  require(backbone == BackboneKind::Dkt || backbone == BackboneKind::Sakt,
          "backbone '" + to_string(backbone) + "' is not implemented; use dkt or sakt");
}

nlohmann::json ExperimentConfig::to_json() const {
  ExperimentConfig copy = *this;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : fields()) {
    std::string pointer = std::string("/") + f.key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    out[nlohmann::json::json_pointer(pointer)] = field_to_json(f.ref(copy));
  }
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig out = base;
  std::vector<std::pair<std::string, const nlohmann::json*>> entries;
  flatten(j, "", entries);
  for (const auto& [key, value] : entries) {
    assign_from_json(key, find_field(key).ref(out), *value);
  }
  out.tendency.aggregation = out.aggregation;
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  return from_json(j, ExperimentConfig{});
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  assign_from_string(key, find_field(key).ref(*this), value);
  tendency.aggregation = aggregation;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j, base);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << config.to_json().dump(2) << '\n';
}

}  // namespace ktb

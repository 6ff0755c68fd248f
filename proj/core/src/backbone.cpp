#include "ktb/backbone.hpp"

#include "ktb/checkpoint.hpp"
#include "ktb/dkt.hpp"
#include "ktb/errors.hpp"
#include "ktb/gradcheck.hpp"
#include "ktb/sakt.hpp"

#include <cmath>

namespace ktb {

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "dkt") return BackboneKind::Dkt;
  if (name == "sakt") return BackboneKind::Sakt;
  if (name == "akt") return BackboneKind::Akt;
  if (name == "lpkt") return BackboneKind::Lpkt;
  throw ConfigError("unknown backbone '" + name + "' (expected dkt, sakt, akt or lpkt)");
}

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::Dkt: return "dkt";
    case BackboneKind::Sakt: return "sakt";
    case BackboneKind::Akt: return "akt";
    case BackboneKind::Lpkt: return "lpkt";
  }
  return "unknown";
}

void Backbone::save(const std::filesystem::path& dir) const {
  nlohmann::json meta = describe();
  std::vector<int> cold;
  const auto& known = known_questions();
  for (std::size_t q = 0; q < known.size(); ++q) {
    if (!known[q]) cold.push_back(static_cast<int>(q));
  }
  meta["cold_questions"] = cold;
  save_checkpoint(dir, params(), meta);
}

std::unique_ptr<Backbone> make_backbone(BackboneKind kind, const BackboneDims& dims,
                                        std::shared_ptr<const QMatrix> qmatrix,
                                        std::vector<bool> known, std::uint64_t seed) {
  switch (kind) {
    case BackboneKind::Dkt:
      return std::make_unique<DktBackbone>(dims, std::move(qmatrix), std::move(known), seed);
    case BackboneKind::Sakt:
      return std::make_unique<SaktBackbone>(dims, std::move(qmatrix), std::move(known), seed);
    case BackboneKind::Akt:
    case BackboneKind::Lpkt:
      break;
  }
  throw ConfigError("backbone '" + to_string(kind) +
                    "' is declared but not implemented; use dkt or sakt");
}

std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& dir,
                                        std::shared_ptr<const QMatrix> qmatrix) {
  auto ckpt = load_checkpoint(dir);
  const auto& meta = ckpt.metadata;
  if (meta.value("model", "") != "backbone") throw DataError("not a backbone checkpoint: " + dir.string());
  if (meta.at("num_questions").get<std::size_t>() != qmatrix->num_questions() ||
      meta.at("num_concepts").get<std::size_t>() != qmatrix->num_concepts()) {
    throw DataError("backbone checkpoint does not match the Q-matrix");
  }
  BackboneDims dims;
  dims.model_dim = meta.at("model_dim").get<int>();
  dims.max_len = meta.at("max_len").get<int>();
  dims.aggregation = parse_aggregation(meta.at("aggregation").get<std::string>());
  std::vector<bool> known(qmatrix->num_questions(), true);
  for (int q : meta.value("cold_questions", std::vector<int>{})) known.at(static_cast<std::size_t>(q)) = false;
  auto model = make_backbone(parse_backbone_kind(meta.at("backbone").get<std::string>()), dims,
                             std::move(qmatrix), std::move(known), 0);
  assign_tensors(model->params(), ckpt.tensors);
  return model;
}

double backbone_bce(const Backbone& model, const Sequence& seq, TensorSet* grads) {
  std::unique_ptr<BackboneTrace> trace;
  const auto out = model.forward(seq, grads != nullptr ? &trace : nullptr);
  const double inv_n = 1.0 / static_cast<double>(seq.size());
  double loss = 0.0;
  std::vector<double> dlogit(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const double p = out[t].prob;
    const int a = seq.labels[t];
    loss -= (a * std::log(p) + (1 - a) * std::log(1.0 - p)) * inv_n;
    dlogit[t] = (sigmoid(out[t].logit) - a) * inv_n;
  }
  if (grads != nullptr) model.backward(*trace, dlogit, {}, *grads);
  return loss;
}

double backbone_gradient_check(Backbone& model, const Sequence& seq, std::size_t max_per_tensor) {
  TensorSet grads = model.params().zeros_like();
  backbone_bce(model, seq, &grads);
  auto loss = [&] { return backbone_bce(model, seq, nullptr); };
  return check_gradients(model.params(), grads, loss, 1e-5, max_per_tensor).max_relative_error;
}

std::vector<bool> questions_seen(const std::vector<Sequence>& seqs, std::size_t num_questions) {
  std::vector<bool> seen(num_questions, false);
  for (const auto& s : seqs) {
    for (int q : s.questions) seen.at(static_cast<std::size_t>(q)) = true;
  }
  return seen;
}

}  // namespace ktb

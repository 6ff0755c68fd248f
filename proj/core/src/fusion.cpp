#include "ktb/fusion.hpp"

#include "ktb/checkpoint.hpp"
#include "ktb/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ktb {

DiscriminationPredictor::DiscriminationPredictor(std::shared_ptr<const TendencyEstimator> tendency,
                                                 PredictorDims dims, std::uint64_t seed)
    : tendency_(std::move(tendency)), dims_(dims) {
  if (!tendency_) throw std::invalid_argument("discrimination predictor needs a tendency estimator");
  if (dims_.state_dim <= 0 || dims_.hidden_dim <= 0) {
    throw ConfigError("discrimination predictor dimensions must be positive");
  }
  params_.add("w1", dims_.hidden_dim, input_dim());
  params_.add("b1", dims_.hidden_dim, 1);
  params_.add("w2", 1, dims_.hidden_dim);
  params_.add("b2", 1, 1);
  Rng rng(seed);
  fill_glorot(params_[kW1], rng);
  fill_glorot(params_[kW2], rng);
}

double DiscriminationPredictor::forward(const Vector& state, int question,
                                        std::span<const int> concepts, Rng* rng, double dropout,
                                        PredictorCache* cache) const {
  if (state.size() != dims_.state_dim) {
    throw std::invalid_argument("discrimination predictor: state has width " +
                                std::to_string(state.size()) + ", expected " +
                                std::to_string(dims_.state_dim));
  }
  PredictorCache local;
  PredictorCache& c = cache != nullptr ? *cache : local;
  c.input.resize(input_dim());
  c.input.head(dims_.state_dim) = state;
  c.input.tail(tendency_->feature_dim()) = tendency_->features(question, concepts);
  c.hidden = (params_[kW1] * c.input + params_[kB1].col(0)).cwiseMax(0.0);
  c.keep = Vector::Ones(dims_.hidden_dim);
  if (rng != nullptr && dropout > 0.0) {
    std::bernoulli_distribution drop(dropout);
    const double scale = 1.0 / (1.0 - dropout);
    for (Eigen::Index i = 0; i < c.keep.size(); ++i) c.keep[i] = drop(*rng) ? 0.0 : scale;
    c.hidden = c.hidden.cwiseProduct(c.keep);
  }
  const double z = params_[kW2].row(0).dot(c.hidden) + params_[kB2](0, 0);
  c.output = sigmoid(z);
  return c.output;
}

Vector DiscriminationPredictor::backward(const PredictorCache& cache, double doutput,
                                         TensorSet& grads) const {
  const double dz = doutput * cache.output * (1.0 - cache.output);
  grads[kW2].row(0) += dz * cache.hidden.transpose();
  grads[kB2](0, 0) += dz;
  Vector dh = dz * params_[kW2].row(0).transpose();
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    // hidden is zero exactly where either ReLU or dropout blocked the unit
    dh[i] = cache.hidden[i] > 0.0 ? dh[i] * cache.keep[i] : 0.0;
  }
  grads[kW1].noalias() += dh * cache.input.transpose();
  grads[kB1].col(0) += dh;
  return (params_[kW1].leftCols(dims_.state_dim).transpose() * dh).eval();
}

double DiscriminationPredictor::weight_norm() const {
  return params_[kW1].squaredNorm() + params_[kW2].squaredNorm();
}

void DiscriminationPredictor::add_l2_gradient(double l2, TensorSet& grads) const {
  grads[kW1] += 2.0 * l2 * params_[kW1];
  grads[kW2] += 2.0 * l2 * params_[kW2];
}

void DiscriminationPredictor::save(const std::filesystem::path& dir) const {
  nlohmann::json meta = {{"model", "discrimination_predictor"},
                         {"state_dim", dims_.state_dim},
                         {"hidden_dim", dims_.hidden_dim},
                         {"tendency_feature_dim", tendency_->feature_dim()}};
  save_checkpoint(dir, params_, meta);
}

DiscriminationPredictor DiscriminationPredictor::load(
    const std::filesystem::path& dir, std::shared_ptr<const TendencyEstimator> tendency) {
  auto ckpt = load_checkpoint(dir);
  const auto& meta = ckpt.metadata;
  if (meta.value("model", "") != "discrimination_predictor") {
    throw DataError("not a discrimination predictor checkpoint: " + dir.string());
  }
  if (meta.at("tendency_feature_dim").get<int>() != tendency->feature_dim()) {
    throw DataError("discrimination predictor does not match the tendency estimator");
  }
  PredictorDims dims{meta.at("state_dim").get<int>(), meta.at("hidden_dim").get<int>()};
  DiscriminationPredictor out(std::move(tendency), dims, 0);
  assign_tensors(out.params_, ckpt.tensors);
  return out;
}

double fusion_factor(double delta_hat, double tau2) {
  if (!(tau2 > 0.0)) throw ConfigError("tau2 must be positive");
  return std::exp(std::log(std::clamp(delta_hat, kProbabilityFloor, 1.0)) / tau2);
}

double fuse_scores(double kt, double tendency, double zeta) {
  return zeta * kt + (1.0 - zeta) * tendency;
}

}  // namespace ktb

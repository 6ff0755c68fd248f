#include "ktb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ktb {

std::size_t TensorSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw std::invalid_argument("duplicate tensor name: " + name);
  }
  names_.push_back(std::move(name));
  tensors_.push_back(Matrix::Zero(rows, cols));
  return tensors_.size() - 1;
}

std::size_t TensorSet::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no tensor named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

TensorSet TensorSet::zeros_like() const {
  TensorSet out;
  for (std::size_t i = 0; i < size(); ++i) {
    out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
  }
  return out;
}

void TensorSet::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

bool TensorSet::same_layout(const TensorSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].rows() != other.tensors_[i].rows() ||
        tensors_[i].cols() != other.tensors_[i].cols()) {
      return false;
    }
  }
  return true;
}

std::size_t TensorSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

double TensorSet::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.squaredNorm();
  return s;
}

void TensorSet::scale(double factor) {
  for (auto& t : tensors_) t *= factor;
}

bool TensorSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Matrix& t) { return t.allFinite(); });
}

void fill_normal(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void fill_uniform(Matrix& m, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void fill_glorot(Matrix& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  fill_uniform(m, limit, rng);
}

void round_to_float32(TensorSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& t = set[i];
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      t.data()[k] = static_cast<double>(static_cast<float>(t.data()[k]));
    }
  }
}

double clip_global_norm(TensorSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Adam::Adam(const TensorSet& layout, AdamOptions options)
    : options_(options), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(TensorSet& params, const TensorSet& grads) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) {
    throw std::invalid_argument("Adam::step: tensor layout mismatch");
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    params[i].array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

}  // namespace ktb

#include "ktb/gradcheck.hpp"

namespace ktb {

GradCheckResult check_gradients(TensorSet& params, const TensorSet& analytic,
                                const std::function<double()>& loss, double step,
                                std::size_t max_per_tensor) {
  if (!params.same_layout(analytic)) {
    throw std::invalid_argument("check_gradients: layout mismatch");
  }
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i];
    const auto n = static_cast<std::size_t>(p.size());
    if (n == 0) continue;
    std::size_t stride = 1;
    if (max_per_tensor > 0 && n > max_per_tensor) stride = n / max_per_tensor;
    for (std::size_t k = 0; k < n; k += stride) {
      double& x = p.data()[k];
      const double saved = x;
      x = saved + step;
      const double up = loss();
      x = saved - step;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i].data()[k];
      const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-5);
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = params.name(i);
        result.worst_entry = static_cast<Eigen::Index>(k);
      }
    }
  }
  return result;
}

}  // namespace ktb

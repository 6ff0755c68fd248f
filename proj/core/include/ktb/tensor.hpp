#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ktb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// An ordered collection of named dense matrices. Models keep their
// parameters in one of these and gradients live in a second set of
// identical layout produced by zeros_like().
class TensorSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }

  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t index_of(const std::string& name) const;

  TensorSet zeros_like() const;
  void set_zero();
  bool same_layout(const TensorSet& other) const;

  std::size_t parameter_count() const;
  double squared_norm() const;
  void scale(double factor);
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

// Fills every entry with N(0, stddev^2).
void fill_normal(Matrix& m, double stddev, Rng& rng);
// Fills every entry with U(-limit, limit).
void fill_uniform(Matrix& m, double limit, Rng& rng);
// Glorot-uniform fill for a weight matrix of shape fan_out x fan_in.
void fill_glorot(Matrix& m, Rng& rng);

// Rounds every entry to the nearest float32, matching what a checkpoint
// round trip preserves.
void round_to_float32(TensorSet& set);

// Rescales the set so its global L2 norm is at most max_norm. Returns the
// norm before clipping. A non-positive max_norm disables clipping.
double clip_global_norm(TensorSet& grads, double max_norm);

double sigmoid(double x);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. L2 regularisation is expected to be folded
// into the gradient by the caller.
class Adam {
 public:
  Adam(const TensorSet& layout, AdamOptions options);

  void step(TensorSet& params, const TensorSet& grads);
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  TensorSet m_;
  TensorSet v_;
  std::int64_t t_ = 0;
};

}  // namespace ktb

#pragma once

#include "ktb/tensor.hpp"

#include <functional>
#include <string>

namespace ktb {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
  Eigen::Index worst_entry = -1;
};

// Compares an analytic gradient against central finite differences of
// `loss`, perturbing entries of `params` in place (they are restored).
// Relative error per entry is |a - n| / max(|a| + |n|, 1e-5).
// When max_per_tensor > 0 only that many evenly spaced entries of each
// tensor are probed.
GradCheckResult check_gradients(TensorSet& params, const TensorSet& analytic,
                                const std::function<double()>& loss, double step = 1e-5,
                                std::size_t max_per_tensor = 0);

}  // namespace ktb

#pragma once

#include <cstddef>

#include "crn/autodiff/tensor.hpp"
#include "crn/random.hpp"

namespace crn::ad {

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// 1/(1-rate). For variational dropout the caller samples one mask per
/// sequence batch and reuses it at every timestep.
inline Tensor variational_dropout_mask(std::size_t rows, std::size_t cols, double rate,
                                       Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor mask = Tensor::matrix(rows, cols, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 - rate;
  for (double& v : mask.data()) v = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace crn::ad

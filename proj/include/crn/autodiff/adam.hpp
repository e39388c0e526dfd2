#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "crn/autodiff/parameter.hpp"

namespace crn::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm clipping threshold; <= 0 disables clipping.
  double max_grad_norm = 0.0;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config)
      : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
      first_moment_.emplace_back(p->value.shape());
      second_moment_.emplace_back(p->value.shape());
    }
  }

  /// Applies one update from the gradients currently stored in each parameter.
  void step() {
    for (const Parameter* p : params_) {
      if (!p->grad.all_finite()) {
        throw NumericalError("adam: non-finite gradient in parameter '" + p->name + "'");
      }
      if (p->grad.shape() != p->value.shape()) {
        throw ShapeError("adam: gradient shape " + shape_str(p->grad.shape()) +
                         " does not match parameter '" + p->name + "' " +
                         shape_str(p->value.shape()));
      }
    }
    double clip = 1.0;
    if (config_.max_grad_norm > 0.0) {
      const double norm = global_grad_norm();
      if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
    }
    ++step_count_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      auto& m = first_moment_[k].data();
      auto& v = second_moment_[k].data();
      auto& w = p.value.data();
      const auto& g = p.grad.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  double global_grad_norm() const {
    double s = 0.0;
    for (const Parameter* p : params_)
      for (double g : p->grad.data()) s += g * g;
    return std::sqrt(s);
  }

  long step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(std::size_t k) const { return first_moment_[k]; }
  const Tensor& second_moment(std::size_t k) const { return second_moment_[k]; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  long step_count_ = 0;
};

}  // namespace crn::ad

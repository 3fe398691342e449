#pragma once

#include <algorithm>

#include <Eigen/Dense>

#include "rsopuf/errors.hpp"

namespace rsopuf::attacks {

/// Resilient backpropagation constants (Riedmiller's defaults).
struct RpropParams {
  double eta_plus = 1.2;
  double eta_minus = 0.5;
  double delta0 = 0.1;
  double delta_min = 1e-6;
  double delta_max = 50.0;
};

/// iRprop-: sign-based per-weight steps; on a gradient sign change the step
/// shrinks and that weight skips one update.
class Rprop {
 public:
  Rprop(Eigen::Index size, RpropParams params = {})
      : params_(params), step_(Eigen::VectorXd::Constant(size, params.delta0)), prev_grad_(Eigen::VectorXd::Zero(size)) {
    require(params.delta_min > 0.0 && params.delta_min <= params.delta0 && params.delta0 <= params.delta_max,
            "Rprop: need delta_min <= delta0 <= delta_max");
  }

  /// Descends on `grad` (minimization).
  void update(Eigen::VectorXd& weights, const Eigen::VectorXd& grad) {
    require(weights.size() == step_.size() && grad.size() == step_.size(), "Rprop: size mismatch");
    for (Eigen::Index i = 0; i < step_.size(); ++i) {
      const double s = prev_grad_(i) * grad(i);
      if (s > 0.0) {
        step_(i) = std::min(step_(i) * params_.eta_plus, params_.delta_max);
      } else if (s < 0.0) {
        step_(i) = std::max(step_(i) * params_.eta_minus, params_.delta_min);
        prev_grad_(i) = 0.0;
        continue;
      }
      if (grad(i) > 0.0) weights(i) -= step_(i);
      else if (grad(i) < 0.0) weights(i) += step_(i);
      prev_grad_(i) = grad(i);
    }
  }

  const Eigen::VectorXd& step_sizes() const noexcept { return step_; }
  const RpropParams& params() const noexcept { return params_; }

 private:
  RpropParams params_;
  Eigen::VectorXd step_;
  Eigen::VectorXd prev_grad_;
};

}  // namespace rsopuf::attacks

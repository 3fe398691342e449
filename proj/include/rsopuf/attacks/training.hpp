#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsopuf/attacks/rprop.hpp"
#include "rsopuf/errors.hpp"

namespace rsopuf::attacks {

struct EarlyStopping {
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
};

struct TrainingTrace {
  std::vector<double> loss;
  std::vector<double> validation_accuracy;
  std::vector<double> step_min;
  std::vector<double> step_max;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
};

/// Full-batch Rprop with early stopping on validation accuracy. Returns the
/// parameters of the best validation epoch.
///
/// loss_grad(params, grad) -> loss; accuracy(params) -> validation accuracy.
template <class LossGrad, class Accuracy>
Eigen::VectorXd rprop_train(Eigen::VectorXd params, LossGrad&& loss_grad, Accuracy&& accuracy, RpropParams rprop_params,
                            EarlyStopping stopping, TrainingTrace& trace, Eigen::VectorXd* final_steps = nullptr) {
  Rprop rprop(params.size(), rprop_params);
  Eigen::VectorXd grad(params.size());
  Eigen::VectorXd best = params;
  double best_acc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < stopping.max_epochs; ++epoch) {
    const double loss = loss_grad(params, grad);
    trace.loss.push_back(loss);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw TrainingFailure("training diverged at epoch " + std::to_string(epoch), trace.loss);
    }
    rprop.update(params, grad);
    trace.step_min.push_back(rprop.step_sizes().minCoeff());
    trace.step_max.push_back(rprop.step_sizes().maxCoeff());
    const double acc = accuracy(params);
    trace.validation_accuracy.push_back(acc);
    trace.epochs = epoch + 1;
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
      trace.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= stopping.patience) {
      break;
    }
  }
  if (final_steps) *final_steps = rprop.step_sizes();
  return best;
}

}  // namespace rsopuf::attacks

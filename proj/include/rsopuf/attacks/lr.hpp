#pragma once

// Logistic-regression modeling attack. The model is the delay-model hyperplane
// itself: P(t | C) = sigmoid(t * w . phi(C)), fitted by minimizing the negative
// log-likelihood with Rprop.

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/rprop.hpp"
#include "rsopuf/attacks/training.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/puf.hpp"

namespace rsopuf::attacks {

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LrOptions {
  RpropParams rprop;
  EarlyStopping stopping;
};

struct LrModel {
  Eigen::VectorXd w;
  TrainingTrace trace;
  Eigen::VectorXd step_sizes;

  template <class Derived>
  Eigen::VectorXd decision(const Eigen::MatrixBase<Derived>& X) const {
    using S = typename Derived::Scalar;
    return (X * w.cast<S>()).template cast<double>();
  }

  double decision(const Challenge& c) const {
    const auto phi = feature_transform(c);
    require(phi.size() == static_cast<std::size_t>(w.size()), "LrModel: challenge length mismatch");
    return Eigen::Map<const Eigen::VectorXd>(phi.phi.data(), w.size()).dot(w);
  }

  DelayVector as_delay_vector() const { return DelayVector{std::vector<double>(w.data(), w.data() + w.size())}; }
};

/// Negative log-likelihood sum over (X, t) and its gradient
/// sum t (sigmoid(t z) - 1) phi.
template <class Derived, class DerivedT>
double lr_loss_gradient(const Eigen::MatrixBase<Derived>& X, const Eigen::MatrixBase<DerivedT>& t,
                        const Eigen::VectorXd& w, Eigen::VectorXd* grad) {
  using S = typename Derived::Scalar;
  require(X.cols() == w.size() && X.rows() == t.size(), "lr_loss_gradient: dimension mismatch");
  const Vec<S> z = X * w.cast<S>();
  Vec<S> coeff(z.size());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.size(); ++r) {
    const double tz = static_cast<double>(t(r)) * static_cast<double>(z(r));
    loss += softplus(-tz);
    coeff(r) = static_cast<S>(static_cast<double>(t(r)) * (sigmoid(tz) - 1.0));
  }
  if (grad) *grad = (X.transpose() * coeff).template cast<double>();
  return loss;
}

template <class Model, class Derived, class DerivedT>
double sign_accuracy(const Model& model, const Eigen::MatrixBase<Derived>& X, const Eigen::MatrixBase<DerivedT>& t) {
  require(X.rows() == t.size(), "accuracy: dimension mismatch");
  if (X.rows() == 0) return 0.0;
  const Eigen::VectorXd z = model.decision(X);
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < z.size(); ++r) correct += ((z(r) >= 0.0) ? 1 : -1) == static_cast<int>(t(r));
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

/// Trains on (X, t); early-stops on (X_val, t_val), or on the training set when
/// no validation rows are given.
template <class S>
LrModel train_lr(const Mat<S>& X, const Vec<S>& t, const Mat<S>& X_val, const Vec<S>& t_val, LrOptions options = {}) {
  require(X.rows() > 0, "train_lr: empty training split");
  require(X.rows() == t.size() && X_val.rows() == t_val.size(), "train_lr: dimension mismatch");
  const bool has_val = X_val.rows() > 0;
  LrModel model;
  model.w = Eigen::VectorXd::Zero(X.cols());
  auto loss_grad = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g) { return lr_loss_gradient(X, t, w, &g); };
  auto accuracy = [&](const Eigen::VectorXd& w) {
    LrModel probe;
    probe.w = w;
    return has_val ? sign_accuracy(probe, X_val, t_val) : sign_accuracy(probe, X, t);
  };
  model.w = rprop_train(model.w, loss_grad, accuracy, options.rprop, options.stopping, model.trace, &model.step_sizes);
  return model;
}

template <class S = double>
LrModel train_lr(const CrpDataset& ds, const Split& split, LrOptions options = {}) {
  require(!split.train.empty(), "train_lr: empty training split");
  return train_lr<S>(feature_matrix<S>(ds, split.train), sign_labels<S>(ds, split.train),
                     feature_matrix<S>(ds, split.validation), sign_labels<S>(ds, split.validation), options);
}

}  // namespace rsopuf::attacks

#pragma once

// Feed-forward network attack: phi features -> 35 -> 25 -> 25 -> 1, sigmoid
// units throughout, cross-entropy loss, full-batch Rprop.

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/lr.hpp"
#include "rsopuf/attacks/rprop.hpp"
#include "rsopuf/attacks/training.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/random.hpp"

namespace rsopuf::attacks {

inline constexpr std::array<std::size_t, 3> kMlpHidden{35, 25, 25};

struct MlpOptions {
  RpropParams rprop;
  EarlyStopping stopping;
  Seed seed{};
};

/// Parameters are one flat vector; per layer a column-major (in x out) weight
/// block followed by the out biases.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::size_t inputs) : inputs_(inputs) {
    require(inputs >= 1, "MlpModel: need at least one input");
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(inputs)));
  }

  static std::vector<std::size_t> layer_sizes(std::size_t inputs) {
    return {inputs, kMlpHidden[0], kMlpHidden[1], kMlpHidden[2], 1};
  }

  static std::size_t parameter_count(std::size_t inputs) {
    const auto sizes = layer_sizes(inputs);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) total += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return total;
  }

  /// Glorot-uniform weights, zero biases.
  void initialize(Seed seed) {
    Rng rng = make_rng(derive_seed(seed, "mlp.init"));
    const auto sizes = layer_sizes(inputs_);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      const auto w_count = static_cast<Eigen::Index>(sizes[l] * sizes[l + 1]);
      for (Eigen::Index k = 0; k < w_count; ++k) params_(offset + k) = u(rng);
      offset += w_count;
      for (std::size_t k = 0; k < sizes[l + 1]; ++k) params_(offset++) = 0.0;
    }
  }

  std::size_t inputs() const noexcept { return inputs_; }
  const Eigen::VectorXd& parameters() const noexcept { return params_; }
  Eigen::VectorXd& parameters() noexcept { return params_; }

  /// Pre-sigmoid output per row.
  template <class Derived>
  Eigen::VectorXd decision(const Eigen::MatrixBase<Derived>& X) const {
    using S = typename Derived::Scalar;
    std::vector<Mat<S>> acts;
    return forward<S>(X, params_, acts).template cast<double>();
  }

  /// Summed cross-entropy over (X, t in {-1,+1}) and its gradient w.r.t. params.
  template <class Derived, class DerivedT>
  double loss_gradient(const Eigen::MatrixBase<Derived>& X, const Eigen::MatrixBase<DerivedT>& t,
                       const Eigen::VectorXd& params, Eigen::VectorXd* grad) const {
    using S = typename Derived::Scalar;
    require(X.cols() == static_cast<Eigen::Index>(inputs_) && X.rows() == t.size(), "MlpModel: dimension mismatch");
    std::vector<Mat<S>> acts;
    const Vec<S> z = forward<S>(X, params, acts);
    double loss = 0.0;
    Mat<S> delta(z.size(), 1);
    for (Eigen::Index r = 0; r < z.size(); ++r) {
      const double tz = static_cast<double>(t(r)) * static_cast<double>(z(r));
      loss += softplus(-tz);
      // d/dz softplus(-t z) = sigmoid(z) - y with y = (t + 1) / 2
      delta(r, 0) = static_cast<S>(sigmoid(static_cast<double>(z(r))) - 0.5 * (static_cast<double>(t(r)) + 1.0));
    }
    if (!grad) return loss;

    const auto sizes = layer_sizes(inputs_);
    const std::size_t layers = sizes.size() - 1;
    grad->resize(params.size());
    std::vector<Eigen::Index> offsets(layers);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      offsets[l] = offset;
      offset += static_cast<Eigen::Index>(sizes[l] * sizes[l + 1] + sizes[l + 1]);
    }
    for (std::size_t l = layers; l-- > 0;) {
      const auto in = static_cast<Eigen::Index>(sizes[l]);
      const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
      const Mat<S>& a_in = acts[l];
      Eigen::Map<Eigen::MatrixXd>(grad->data() + offsets[l], in, out) = (a_in.transpose() * delta).template cast<double>();
      grad->segment(offsets[l] + in * out, out) = delta.colwise().sum().transpose().template cast<double>();
      if (l == 0) break;
      const Eigen::Map<const Eigen::MatrixXd> W(params.data() + offsets[l], in, out);
      Mat<S> back = delta * W.cast<S>().transpose();
      delta = back.cwiseProduct(a_in.cwiseProduct((Mat<S>::Ones(a_in.rows(), a_in.cols()) - a_in)));
    }
    return loss;
  }

 private:
  /// acts[l] holds the input to layer l (acts[0] = X).
  template <class S, class Derived>
  Vec<S> forward(const Eigen::MatrixBase<Derived>& X, const Eigen::VectorXd& params, std::vector<Mat<S>>& acts) const {
    require(X.cols() == static_cast<Eigen::Index>(inputs_), "MlpModel: input width mismatch");
    const auto sizes = layer_sizes(inputs_);
    acts.clear();
    acts.emplace_back(X);
    Eigen::Index offset = 0;
    Mat<S> h;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes[l]);
      const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
      const Eigen::Map<const Eigen::MatrixXd> W(params.data() + offset, in, out);
      offset += in * out;
      const Eigen::Map<const Eigen::VectorXd> b(params.data() + offset, out);
      offset += out;
      h = (acts.back() * W.cast<S>()).rowwise() + b.cast<S>().transpose();
      if (l + 2 < sizes.size()) {
        h = h.unaryExpr([](S v) { return static_cast<S>(sigmoid(static_cast<double>(v))); });
        acts.push_back(h);
      }
    }
    return h.col(0);
  }

  std::size_t inputs_ = 0;
  Eigen::VectorXd params_;

 public:
  TrainingTrace trace;
  Eigen::VectorXd step_sizes;
};

template <class S>
MlpModel train_mlp(const Mat<S>& X, const Vec<S>& t, const Mat<S>& X_val, const Vec<S>& t_val,
                   MlpOptions options = {}) {
  require(X.rows() > 0, "train_mlp: empty training split");
  require(X.rows() == t.size() && X_val.rows() == t_val.size(), "train_mlp: dimension mismatch");
  const bool has_val = X_val.rows() > 0;
  MlpModel model(static_cast<std::size_t>(X.cols()));
  model.initialize(options.seed);
  auto loss_grad = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) { return model.loss_gradient(X, t, p, &g); };
  auto accuracy = [&](const Eigen::VectorXd& p) {
    MlpModel probe = model;
    probe.parameters() = p;
    return has_val ? sign_accuracy(probe, X_val, t_val) : sign_accuracy(probe, X, t);
  };
  model.parameters() =
      rprop_train(model.parameters(), loss_grad, accuracy, options.rprop, options.stopping, model.trace, &model.step_sizes);
  return model;
}

template <class S = double>
MlpModel train_mlp(const CrpDataset& ds, const Split& split, MlpOptions options = {}) {
  require(!split.train.empty(), "train_mlp: empty training split");
  return train_mlp<S>(feature_matrix<S>(ds, split.train), sign_labels<S>(ds, split.train),
                      feature_matrix<S>(ds, split.validation), sign_labels<S>(ds, split.validation), options);
}

}  // namespace rsopuf::attacks

#pragma once

// (mu/mu_w, lambda)-CMA-ES with full covariance adaptation, and the
// evolution-strategy modeling attack built on it. The attack searches the
// delay-vector space directly; a candidate's fitness is its response accuracy
// 1 - HD(R', R)/l on a fixed reference CRP batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/puf.hpp"
#include "rsopuf/random.hpp"

namespace rsopuf::attacks {

/// Default population size 4 + floor(3 ln d).
inline std::size_t default_population(std::size_t dimension) {
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

/// Ask/tell CMA-ES minimizer with the standard strategy parameters.
class CmaEs {
 public:
  CmaEs(Eigen::VectorXd mean, double sigma, std::size_t lambda, Seed seed)
      : dim_(mean.size()), lambda_(lambda ? lambda : default_population(static_cast<std::size_t>(mean.size()))),
        mean_(std::move(mean)), sigma_(sigma), rng_(make_rng(derive_seed(seed, "cmaes.sample"))) {
    require(dim_ >= 1 && sigma_ > 0.0 && lambda_ >= 2, "CmaEs: invalid configuration");
    const double d = static_cast<double>(dim_);
    mu_ = lambda_ / 2;
    weights_.resize(static_cast<Eigen::Index>(mu_));
    for (std::size_t i = 0; i < mu_; ++i) {
      weights_(static_cast<Eigen::Index>(i)) = std::log(static_cast<double>(mu_) + 0.5) - std::log(static_cast<double>(i + 1));
    }
    weights_ /= weights_.sum();
    mueff_ = 1.0 / weights_.squaredNorm();
    cs_ = (mueff_ + 2.0) / (d + mueff_ + 5.0);
    ds_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (d + 1.0)) - 1.0) + cs_;
    cc_ = (4.0 + mueff_ / d) / (d + 4.0 + 2.0 * mueff_ / d);
    c1_ = 2.0 / ((d + 1.3) * (d + 1.3) + mueff_);
    cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) / ((d + 2.0) * (d + 2.0) + mueff_));
    chi_n_ = std::sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d));
    reset_state();
  }

  std::size_t lambda() const noexcept { return lambda_; }
  std::size_t mu() const noexcept { return mu_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  double sigma() const noexcept { return sigma_; }
  const Eigen::MatrixXd& covariance() const noexcept { return C_; }

  /// Samples lambda candidates as matrix columns.
  Eigen::MatrixXd ask() {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd z(dim_, static_cast<Eigen::Index>(lambda_));
    for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = normal(rng_);
    y_ = B_ * D_.asDiagonal() * z;
    return (sigma_ * y_).colwise() + mean_;
  }

  /// Updates the distribution from the costs of the last ask() (lower is better).
  void tell(const std::vector<double>& costs) {
    require(costs.size() == lambda_ && y_.cols() == static_cast<Eigen::Index>(lambda_), "CmaEs::tell: call ask() first");
    std::vector<std::size_t> order(lambda_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });

    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(dim_);
    for (std::size_t i = 0; i < mu_; ++i) y_w += weights_(static_cast<Eigen::Index>(i)) * y_.col(static_cast<Eigen::Index>(order[i]));
    mean_ += sigma_ * y_w;

    const Eigen::VectorXd c_inv_sqrt_yw = B_ * (B_.transpose() * y_w).cwiseQuotient(D_);
    ps_ = (1.0 - cs_) * ps_ + std::sqrt(cs_ * (2.0 - cs_) * mueff_) * c_inv_sqrt_yw;
    ++generation_;
    const double ps_norm = ps_.norm();
    const double hsig_threshold = (1.4 + 2.0 / (static_cast<double>(dim_) + 1.0)) * chi_n_;
    const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs_, 2.0 * static_cast<double>(generation_))) < hsig_threshold;
    pc_ = (1.0 - cc_) * pc_ + (hsig ? std::sqrt(cc_ * (2.0 - cc_) * mueff_) : 0.0) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(dim_, dim_);
    for (std::size_t i = 0; i < mu_; ++i) {
      const auto col = y_.col(static_cast<Eigen::Index>(order[i]));
      rank_mu.noalias() += weights_(static_cast<Eigen::Index>(i)) * col * col.transpose();
    }
    const double delta_h = hsig ? 0.0 : cc_ * (2.0 - cc_);
    C_ = (1.0 - c1_ - cmu_) * C_ + c1_ * (pc_ * pc_.transpose() + delta_h * C_) + cmu_ * rank_mu;
    sigma_ *= std::exp((cs_ / ds_) * (ps_norm / chi_n_ - 1.0));

    if (static_cast<double>(generation_ - eigen_generation_) >
        static_cast<double>(lambda_) / ((c1_ + cmu_) * static_cast<double>(dim_) * 10.0)) {
      decompose();
    }
  }

  /// Restarts around `mean` with an isotropic distribution.
  void restart(Eigen::VectorXd mean, double sigma) {
    require(mean.size() == dim_ && sigma > 0.0, "CmaEs::restart: invalid arguments");
    mean_ = std::move(mean);
    sigma_ = sigma;
    reset_state();
  }

 private:
  void reset_state() {
    C_ = Eigen::MatrixXd::Identity(dim_, dim_);
    B_ = Eigen::MatrixXd::Identity(dim_, dim_);
    D_ = Eigen::VectorXd::Ones(dim_);
    ps_ = Eigen::VectorXd::Zero(dim_);
    pc_ = Eigen::VectorXd::Zero(dim_);
    generation_ = 0;
    eigen_generation_ = 0;
  }

  void decompose() {
    eigen_generation_ = generation_;
    C_ = 0.5 * (C_ + C_.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(C_);
    B_ = solver.eigenvectors();
    D_ = solver.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
  }

  Eigen::Index dim_;
  std::size_t lambda_;
  std::size_t mu_ = 0;
  Eigen::VectorXd mean_;
  double sigma_;
  Rng rng_;
  Eigen::VectorXd weights_;
  double mueff_ = 0, cs_ = 0, ds_ = 0, cc_ = 0, c1_ = 0, cmu_ = 0, chi_n_ = 0;
  Eigen::MatrixXd C_, B_, y_;
  Eigen::VectorXd D_, ps_, pc_;
  std::size_t generation_ = 0;
  std::size_t eigen_generation_ = 0;
};

struct CmaesOptions {
  std::size_t generations = 1000;
  std::size_t population = 0;  // 0 -> default_population(n + 1)
  double sigma0 = 1.0;
  std::size_t stagnation_restart = 50;
  double target_fitness = 1.0;  // stop once reached
  Seed seed{};
};

struct EsModel {
  DelayVector best;
  double best_fitness = 0.0;
  double sigma = 0.0;
  std::size_t generations = 0;
  std::size_t restarts = 0;
  std::size_t population = 0;
  /// Best-so-far fitness after each generation.
  std::vector<double> fitness_trace;

  template <class Derived>
  Eigen::VectorXd decision(const Eigen::MatrixBase<Derived>& X) const {
    using S = typename Derived::Scalar;
    const Eigen::Map<const Eigen::VectorXd> w(best.omega.data(), static_cast<Eigen::Index>(best.size()));
    return (X * w.cast<S>()).template cast<double>();
  }
};

/// Fitness 1 - HD(R', R)/l for every candidate column of W.
template <class Derived, class DerivedT>
std::vector<double> delay_vector_fitness(const Eigen::MatrixBase<Derived>& X, const Eigen::MatrixBase<DerivedT>& t,
                                         const Eigen::MatrixXd& W) {
  using S = typename Derived::Scalar;
  const Mat<S> Z = X * W.cast<S>();
  std::vector<double> fit(static_cast<std::size_t>(W.cols()));
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    std::size_t agree = 0;
    for (Eigen::Index r = 0; r < Z.rows(); ++r) agree += ((Z(r, k) >= 0) ? 1 : -1) == static_cast<int>(t(r));
    fit[static_cast<std::size_t>(k)] = static_cast<double>(agree) / static_cast<double>(Z.rows());
  }
  return fit;
}

/// Evolves delay vectors against a fixed reference batch (X rows = phi, t = +-1).
template <class S>
EsModel train_cmaes(const Mat<S>& X, const Vec<S>& t, CmaesOptions options = {}) {
  require(X.rows() > 0 && X.rows() == t.size(), "train_cmaes: empty or mismatched reference batch");
  const Eigen::Index d = X.cols();
  Rng init_rng = make_rng(derive_seed(options.seed, "cmaes.init"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd start(d);
  for (Eigen::Index i = 0; i < d; ++i) start(i) = normal(init_rng);

  CmaEs es(start, options.sigma0, options.population, options.seed);
  EsModel model;
  model.population = es.lambda();
  Eigen::VectorXd best = start;
  double best_fit = delay_vector_fitness(X, t, Eigen::MatrixXd(start))[0];
  std::size_t since_improvement = 0;

  for (std::size_t g = 0; g < options.generations && best_fit < options.target_fitness; ++g) {
    const Eigen::MatrixXd candidates = es.ask();
    const auto fit = delay_vector_fitness(X, t, candidates);
    std::vector<double> cost(fit.size());
    for (std::size_t k = 0; k < fit.size(); ++k) cost[k] = -fit[k];
    es.tell(cost);
    const auto top = static_cast<std::size_t>(std::max_element(fit.begin(), fit.end()) - fit.begin());
    if (fit[top] > best_fit) {
      best_fit = fit[top];
      best = candidates.col(static_cast<Eigen::Index>(top));
      since_improvement = 0;
    } else if (++since_improvement >= options.stagnation_restart) {
      // The fitness only depends on the direction of w, so the restart step is relative to |best|.
      es.restart(best, options.sigma0 * best.norm() / std::sqrt(static_cast<double>(d)));
      ++model.restarts;
      since_improvement = 0;
    }
    model.fitness_trace.push_back(best_fit);
    model.generations = g + 1;
  }
  model.best = DelayVector{std::vector<double>(best.data(), best.data() + best.size())};
  model.best_fitness = best_fit;
  model.sigma = es.sigma();
  return model;
}

}  // namespace rsopuf::attacks

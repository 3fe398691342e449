#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "json.hpp"

#include "rsopuf/attacks/cmaes.hpp"
#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/lr.hpp"
#include "rsopuf/attacks/mlp.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/io.hpp"

namespace rsopuf::attacks {

enum class Method { Lr, Mlp, Cmaes };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Lr: return "lr";
    case Method::Mlp: return "mlp";
    case Method::Cmaes: return "cmaes";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "lr") return Method::Lr;
  if (s == "mlp") return Method::Mlp;
  if (s == "cmaes") return Method::Cmaes;
  throw ContractViolation("unknown attack method '" + std::string(s) + "'");
}

using AttackModel = std::variant<LrModel, MlpModel, EsModel>;

/// Fraction of test rows whose predicted sign (decision >= 0 -> +1) matches t.
template <class Derived, class DerivedT>
double evaluate(const AttackModel& model, const Eigen::MatrixBase<Derived>& X, const Eigen::MatrixBase<DerivedT>& t) {
  require(X.rows() > 0, "evaluate: empty test set");
  return std::visit([&](const auto& m) { return sign_accuracy(m, X, t); }, model);
}

template <class S = double>
double evaluate(const AttackModel& model, const CrpDataset& ds, std::span<const std::size_t> test) {
  require(!test.empty(), "evaluate: empty test set");
  return evaluate(model, feature_matrix<S>(ds, test), sign_labels<S>(ds, test));
}

struct AttackReport {
  Method method = Method::Lr;
  std::size_t n = 0;
  std::size_t m = 0;  // 0 for raw datasets
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double accuracy = 0.0;
  double seconds = 0.0;
  nlohmann::json hyperparameters = nlohmann::json::object();
};

inline std::string attack_csv_header() { return "method,n,m,train_size,accuracy,seconds"; }

inline std::string to_csv(const AttackReport& r) {
  return std::string(to_string(r.method)) + ',' + std::to_string(r.n) + ',' + std::to_string(r.m) + ',' +
         std::to_string(r.train_size) + ',' + format_double(r.accuracy) + ',' + format_double(r.seconds);
}

inline nlohmann::json to_json(const AttackReport& r) {
  return {{"method", to_string(r.method)}, {"n", r.n},           {"m", r.m},
          {"train_size", r.train_size},    {"test_size", r.test_size}, {"accuracy", r.accuracy},
          {"seconds", r.seconds},          {"hyperparameters", r.hyperparameters}};
}

}  // namespace rsopuf::attacks

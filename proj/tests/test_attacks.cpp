#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "rsopuf/attacks/cmaes.hpp"
#include "rsopuf/attacks/cnn_export.hpp"
#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/evaluate.hpp"
#include "rsopuf/attacks/lr.hpp"
#include "rsopuf/attacks/mlp.hpp"
#include "rsopuf/attacks/rprop.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/rso.hpp"

using namespace rsopuf;
using namespace rsopuf::attacks;

namespace {

// Central differences on an arbitrary loss.
template <class F>
Eigen::VectorXd numeric_gradient(F&& loss, Eigen::VectorXd x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = loss(x);
    x(i) = keep - h;
    const double down = loss(x);
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

CrpDataset noise_free(std::size_t n, std::size_t count, std::uint64_t seed) {
  HarvestOptions o;
  o.noisy = false;
  return harvest_raw(sample_instance(n, Seed{seed}), count, Seed{seed + 100}, o);
}

std::vector<std::size_t> all_rows(const CrpDataset& ds) {
  std::vector<std::size_t> r(ds.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return r;
}

}  // namespace

TEST(LrGradient, MatchesFiniteDifferences) {
  const auto ds = noise_free(16, 200, 1);
  const auto X = feature_matrix<double>(ds);
  const auto t = sign_labels<double>(ds);
  Rng rng(2);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd w(X.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = normal(rng);
    Eigen::VectorXd analytic;
    lr_loss_gradient(X, t, w, &analytic);
    const auto numeric = numeric_gradient([&](const Eigen::VectorXd& v) { return lr_loss_gradient(X, t, v, nullptr); }, w, 1e-5);
    EXPECT_LE((analytic - numeric).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(MlpGradient, MatchesFiniteDifferences) {
  const auto ds = noise_free(8, 40, 3);
  const auto X = feature_matrix<double>(ds);
  const auto t = sign_labels<double>(ds);
  MlpModel model(X.cols());
  model.initialize(Seed{4});
  // Non-zero biases so their gradient path is exercised too.
  Rng rng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Eigen::VectorXd p = model.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += u(rng);
  Eigen::VectorXd analytic;
  model.loss_gradient(X, t, p, &analytic);
  const auto numeric =
      numeric_gradient([&](const Eigen::VectorXd& v) { return model.loss_gradient(X, t, v, nullptr); }, p, 1e-5);
  EXPECT_EQ(analytic.size(), static_cast<Eigen::Index>(MlpModel::parameter_count(X.cols())));
  EXPECT_LE((analytic - numeric).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(MlpModel, LayoutAndInit) {
  EXPECT_EQ(MlpModel::layer_sizes(65), (std::vector<std::size_t>{65, 35, 25, 25, 1}));
  EXPECT_EQ(MlpModel::parameter_count(65), 65u * 35 + 35 + 35 * 25 + 25 + 25 * 25 + 25 + 25 + 1);
  MlpModel a(65), b(65);
  a.initialize(Seed{1});
  b.initialize(Seed{1});
  EXPECT_EQ(a.parameters(), b.parameters());
  const double limit = std::sqrt(6.0 / (65 + 35));
  EXPECT_LE(a.parameters().head(65 * 35).cwiseAbs().maxCoeff(), limit);
  EXPECT_EQ(a.parameters().segment(65 * 35, 35).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Rprop, StepsStayInBoundsAndFollowSigns) {
  RpropParams params;
  Rprop r(3, params);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g(3);
  g << 1.0, -1.0, 0.0;
  r.update(w, g);
  EXPECT_DOUBLE_EQ(w(0), -params.delta0);
  EXPECT_DOUBLE_EQ(w(1), params.delta0);
  EXPECT_DOUBLE_EQ(w(2), 0.0);
  for (int k = 0; k < 200; ++k) r.update(w, g);  // same sign forever -> capped growth
  EXPECT_DOUBLE_EQ(r.step_sizes()(0), params.delta_max);
  for (int k = 0; k < 200; ++k) {
    g = -g;  // alternating sign -> shrink to the floor
    r.update(w, g);
  }
  EXPECT_DOUBLE_EQ(r.step_sizes()(0), params.delta_min);
  EXPECT_GE(r.step_sizes().minCoeff(), params.delta_min);
  EXPECT_LE(r.step_sizes().maxCoeff(), params.delta_max);
  RpropParams bad;
  bad.delta0 = 100.0;
  EXPECT_THROW(Rprop(2, bad), ContractViolation);
}

TEST(LrTraining, TraceRespectsStepBounds) {
  const auto ds = noise_free(32, 2000, 6);
  const auto split = split_dataset(ds.size(), Seed{1});
  const auto model = train_lr(ds, split);
  ASSERT_FALSE(model.trace.step_min.empty());
  for (std::size_t e = 0; e < model.trace.epochs; ++e) {
    EXPECT_GE(model.trace.step_min[e], 1e-6);
    EXPECT_LE(model.trace.step_max[e], 50.0);
  }
  EXPECT_LT(model.trace.loss.back(), model.trace.loss.front());
}

TEST(LrTraining, SeparableToyCaseIsPerfect) {
  // n = 2: all four challenges, labels from a fixed delay vector.
  const auto p = sample_instance(2, Seed{7});
  CrpDataset ds;
  ds.n = 2;
  for (const char* s : {"00", "01", "10", "11"}) {
    const auto c = BitString::from_string(s);
    ds.records.push_back({c, eval(p, c).value});
  }
  const auto rows = all_rows(ds);
  Split split{rows, {}, rows};
  const auto model = train_lr(ds, split);
  EXPECT_DOUBLE_EQ(evaluate(AttackModel{model}, ds, rows), 1.0);
}

TEST(LrTraining, PredictionsInvariantToPositiveScaling) {
  const auto ds = noise_free(32, 3000, 8);
  const auto split = split_dataset(ds.size(), Seed{2});
  auto model = train_lr(ds, split);
  const auto X = feature_matrix<double>(ds, split.test);
  const auto t = sign_labels<double>(ds, split.test);
  const double acc = sign_accuracy(model, X, t);
  model.w *= 17.5;
  EXPECT_DOUBLE_EQ(sign_accuracy(model, X, t), acc);
}

TEST(LrTraining, RecoversDirectionOfTrueDelays) {
  const auto p = sample_instance(64, Seed{9});
  HarvestOptions o;
  o.noisy = false;
  const auto ds = harvest_raw(p, 10000, Seed{10}, o);
  const auto model = train_lr(ds, split_dataset(ds.size(), Seed{3}));
  Rng rng(11);
  std::size_t agree = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto c = BitString::random(rng, 64);
    agree += (model.decision(c) >= 0.0) == (delta(p, c) >= 0.0);
  }
  EXPECT_GE(agree / 10000.0, 0.95);
  const auto omega = model.as_delay_vector();
  EXPECT_EQ(omega.size(), 65u);
}

TEST(LrTraining, EmptyTrainingSplitThrows) {
  const auto ds = noise_free(8, 10, 12);
  EXPECT_THROW(train_lr(ds, Split{}), ContractViolation);
}

TEST(Cmaes, BestSoFarIsMonotone) {
  const auto ds = noise_free(16, 1000, 13);
  CmaesOptions o;
  o.generations = 150;
  o.seed = Seed{1};
  const auto model = train_cmaes(feature_matrix<double>(ds), sign_labels<double>(ds), o);
  ASSERT_FALSE(model.fitness_trace.empty());
  for (std::size_t g = 1; g < model.fitness_trace.size(); ++g) {
    EXPECT_GE(model.fitness_trace[g], model.fitness_trace[g - 1]);
  }
  EXPECT_DOUBLE_EQ(model.best_fitness, model.fitness_trace.back());
}

TEST(Cmaes, ZeroGenerationsIsChance) {
  const auto train = noise_free(64, 2000, 14);
  CmaesOptions o;
  o.generations = 0;
  const auto model = train_cmaes(feature_matrix<double>(train), sign_labels<double>(train), o);
  EXPECT_EQ(model.generations, 0u);
  const auto test = harvest_raw(sample_instance(64, Seed{14}), 10000, Seed{999}, HarvestOptions{false, false});
  EXPECT_NEAR(evaluate(AttackModel{model}, test, all_rows(test)), 0.5, 0.1);
}

TEST(Cmaes, RecoversEightStagePuf) {
  const auto p = sample_instance(8, Seed{15});
  HarvestOptions o;
  o.noisy = false;
  const auto train = harvest_raw(p, 2000, Seed{16}, o);
  CmaesOptions co;
  co.generations = 200;
  co.seed = Seed{2};
  const auto model = train_cmaes(feature_matrix<double>(train), sign_labels<double>(train), co);
  const auto test = harvest_raw(p, 10000, Seed{17}, o);
  EXPECT_GE(evaluate(AttackModel{model}, test, all_rows(test)), 0.99);
}

TEST(Cmaes, DelayVectorFitnessCountsAgreement) {
  Eigen::MatrixXd X(4, 2);
  X << 1, 1, 1, -1, -1, 1, -1, -1;
  Eigen::VectorXd t(4);
  t << 1, 1, -1, -1;
  Eigen::MatrixXd W(2, 2);
  W << 1, -1, 0, 0;
  const auto f = delay_vector_fitness(X, t, W);
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
}

TEST(MlpTraining, ConstantDatasetIsLearned) {
  const auto base = noise_free(16, 400, 18);
  CrpDataset ds = base;
  for (auto& r : ds.records) r.response = 1;
  const auto split = split_dataset(ds.size(), Seed{4});
  MlpOptions o;
  o.stopping.max_epochs = 100;
  const auto model = train_mlp(ds, split, o);
  EXPECT_DOUBLE_EQ(evaluate(AttackModel{model}, ds, split.test), 1.0);
}

TEST(MlpTraining, LearnsRawPuf) {
  const auto ds = noise_free(32, 6000, 19);
  const auto split = split_dataset(ds.size(), Seed{5});
  MlpOptions o;
  o.stopping.max_epochs = 300;
  o.seed = Seed{6};
  const auto model = train_mlp(ds, split, o);
  EXPECT_GE(evaluate(AttackModel{model}, ds, split.test), 0.9);
}

TEST(Evaluate, PerfectFlippedAndRecount) {
  const auto p = sample_instance(32, Seed{20});
  HarvestOptions o;
  o.noisy = false;
  const auto ds = harvest_raw(p, 3000, Seed{21}, o);
  const auto rows = all_rows(ds);
  LrModel truth;
  truth.w = Eigen::Map<const Eigen::VectorXd>(p.omega().omega.data(), 33);
  EXPECT_DOUBLE_EQ(evaluate(AttackModel{truth}, ds, rows), 1.0);

  const auto trained = train_lr(ds, split_dataset(ds.size(), Seed{6}));
  LrModel flipped = trained;
  flipped.w = -flipped.w;
  // Sign flip complements every prediction except exact ties (z = 0); none occur here.
  const double acc = evaluate(AttackModel{trained}, ds, rows);
  EXPECT_NEAR(evaluate(AttackModel{flipped}, ds, rows), 1.0 - acc, 1e-12);

  std::size_t correct = 0;
  for (const auto& rec : ds.records) correct += (trained.decision(rec.challenge) >= 0.0 ? 1 : 0) == rec.response;
  EXPECT_DOUBLE_EQ(acc, static_cast<double>(correct) / ds.size());

  EXPECT_THROW(evaluate(AttackModel{trained}, ds, std::vector<std::size_t>{}), ContractViolation);
}

TEST(Method, ParseAndPrint) {
  for (auto m : {Method::Lr, Method::Mlp, Method::Cmaes}) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("svm"), ContractViolation);
}

TEST(AttackReport, CsvAndJson) {
  AttackReport r{Method::Cmaes, 64, 8, 70000, 10000, 0.5123, 1.5, {{"generations", 1000}}};
  EXPECT_EQ(attack_csv_header(), "method,n,m,train_size,accuracy,seconds");
  EXPECT_EQ(to_csv(r).substr(0, 22), "cmaes,64,8,70000,0.512");
  EXPECT_EQ(to_json(r).at("hyperparameters").at("generations").get<int>(), 1000);
}

TEST(Dataset, RoundTripAndMalformed) {
  const auto ds = harvest_raw(sample_instance(16, Seed{22}), 50, Seed{23});
  const auto text = write_dataset(ds, "hello");
  const auto back = parse_dataset(text);
  EXPECT_EQ(back.n, 16u);
  EXPECT_EQ(back.records, ds.records);
  EXPECT_EQ(back.provenance, Provenance::Raw);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_THROW(parse_dataset(""), ParseError);
  EXPECT_THROW(parse_dataset("n=4 provenance=raw\n"), ParseError);
  std::string bad = text;
  bad += "0101 1\n";  // wrong length for n = 16
  EXPECT_THROW(parse_dataset(bad), ParseError);
  std::string bad_bit = write_dataset(noise_free(4, 1, 1));
  bad_bit[bad_bit.size() - 2] = '7';
  EXPECT_THROW(parse_dataset(bad_bit), ParseError);
}

TEST(Dataset, SplitIsDisjointAndExhaustive) {
  for (std::size_t size : {0u, 1u, 10u, 997u}) {
    const auto s = split_dataset(size, Seed{24});
    std::set<std::size_t> all;
    for (auto v : {&s.train, &s.validation, &s.test}) {
      for (auto i : *v) EXPECT_TRUE(all.insert(i).second);
    }
    EXPECT_EQ(all.size(), size);
    if (size) EXPECT_EQ(*all.rbegin(), size - 1);
  }
  const auto s = split_dataset(1000, Seed{24});
  EXPECT_EQ(s.train.size(), 700u);
  EXPECT_EQ(s.validation.size(), 200u);
  EXPECT_EQ(s.test.size(), 100u);
  EXPECT_EQ(split_dataset(1000, Seed{24}).test, s.test);
  EXPECT_NE(split_dataset(1000, Seed{25}).test, s.test);
}

TEST(Dataset, HarvestRawOptions) {
  const auto p = sample_instance(8, Seed{26});
  EXPECT_TRUE(harvest_raw(p, 0, Seed{1}).empty());
  HarvestOptions unique;
  unique.unique_challenges = true;
  const auto ds = harvest_raw(p, 256, Seed{1}, unique);
  std::set<BitString> seen;
  for (const auto& r : ds.records) EXPECT_TRUE(seen.insert(r.challenge).second);
  EXPECT_THROW(harvest_raw(p, 257, Seed{1}, unique), ContractViolation);

  const auto big = harvest_raw(sample_instance(64, Seed{27}), 20000, Seed{2});
  double ones = 0;
  for (const auto& r : big.records) ones += r.response;
  EXPECT_NEAR(ones / big.size(), 0.5, 0.05);
}

TEST(Dataset, NoisyHarvestMatchesFlipRate) {
  const auto base = sample_instance(64, Seed{28});
  const auto p = base.with_noise_sigma(calibrate_noise(base, 0.05));
  const auto ds = harvest_raw(p, 20000, Seed{3});
  std::size_t flips = 0;
  for (const auto& r : ds.records) flips += eval(base, r.challenge).value != r.response;
  EXPECT_NEAR(static_cast<double>(flips) / ds.size(), 0.05, 0.01);
}

TEST(Dataset, FeatureMatrixRowsArePhi) {
  const auto ds = noise_free(12, 20, 29);
  const auto X = feature_matrix<float>(ds);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto phi = feature_transform(ds.records[r].challenge);
    for (std::size_t i = 0; i < phi.size(); ++i) ASSERT_EQ(X(r, i), static_cast<float>(phi[i]));
  }
  const auto t = sign_labels<float>(ds);
  for (std::size_t r = 0; r < ds.size(); ++r) EXPECT_EQ(t(r), ds.records[r].response ? 1.f : -1.f);
}

TEST(HarvestRso, RecordsAndDeobfuscation) {
  const auto p = sample_instance(32, Seed{30});
  const auto bank = provision_bank(p, 4, 1, Seed{31});
  const auto set = derive_set(p, bank);
  SeededTrng trng(Seed{32});
  Rng rng(33);
  std::vector<ObfuscatedExchange> ex;
  for (int s = 0; s < 10; ++s) ex.push_back(obfuscate(set, trng, p, random_challenges(rng, 32, 32)));
  const auto ds = harvest_rso(ex, Seed{5});
  EXPECT_EQ(ds.size(), 10u * 32u);
  EXPECT_EQ(ds.provenance, Provenance::Rso);
  // Knowing (i, j) recovers plain CRPs of the PUF at Key_i xor C.
  for (std::size_t s = 0; s < ex.size(); ++s) {
    const auto [c, r_prime] = deobfuscate(set, ex[s]);
    for (std::size_t k = 0; k < 32; ++k) {
      const auto& rec = ds.records[s * 32 + k];
      EXPECT_EQ(rec.challenge, c[k]);
      EXPECT_EQ(rec.response ^ set.key(ex[s].key_j)[k], eval(p, set.key(ex[s].key_i) ^ rec.challenge).value);
      EXPECT_EQ(r_prime[k], eval(p, set.key(ex[s].key_i) ^ rec.challenge).value);
    }
  }
  EXPECT_TRUE(harvest_rso({}).empty());
  auto broken = ex;
  broken[3].r_hat = BitString(5);
  EXPECT_THROW(harvest_rso(broken), ParseError);
}

TEST(HarvestRso, ZeroKeysDegenerateToRawCrps) {
  const auto p = sample_instance(32, Seed{34});
  ObfuscationSet zero({BitString(32), BitString(32)});
  SeededTrng trng(Seed{35});
  Rng rng(36);
  std::vector<ObfuscatedExchange> ex;
  for (int s = 0; s < 50; ++s) ex.push_back(obfuscate(zero, trng, p, random_challenges(rng, 32, 32)));
  const auto ds = harvest_rso(ex);
  for (const auto& r : ds.records) ASSERT_EQ(r.response, eval(p, r.challenge).value);
  EXPECT_GE(train_lr(ds, split_dataset(ds.size(), Seed{7})).trace.validation_accuracy.back(), 0.9);
}

TEST(CnnExport, HandTensor) {
  // C = 1011, stages read right to left.
  const auto c = BitString::from_string("1011");
  const auto t = transform_challenge(c);
  EXPECT_EQ(t.rows, 2u);
  EXPECT_EQ(t.cols, 4u);
  // X_4 = +1; X_3 = (-1)^{C_4} = -1; X_2 = X_3 (-1)^{C_3} = +1; X_1 = X_2 (-1)^{C_2} = +1
  EXPECT_EQ(t.values, (std::vector<int>{1, 1, -1, 1, -1, -1, 1, -1}));
  const auto e = extend_challenge(c);
  EXPECT_EQ(e.rows, 4u);
  // U_i = X_i (-1)^{C_i}
  EXPECT_EQ(std::vector<int>(e.values.begin() + 8, e.values.end()), (std::vector<int>{-1, 1, 1, -1, 1, -1, -1, 1}));

  const auto zero = extend_challenge(BitString(4));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(zero.at(0, i), 1);
    EXPECT_EQ(zero.at(1, i), -1);
    EXPECT_EQ(zero.at(2, i), 1);
    EXPECT_EQ(zero.at(3, i), -1);
  }
}

TEST(CnnExport, RowsAreRelatedToPhi) {
  // X_i equals the parity feature of the following stage: X_i = phi_{i+1}, X_n = 1.
  Rng rng(37);
  for (int k = 0; k < 100; ++k) {
    const auto c = BitString::random(rng, 24);
    const auto phi = feature_transform(c);
    const auto t = transform_challenge(c);
    for (std::size_t i = 0; i + 1 < 24; ++i) ASSERT_EQ(t.at(0, i), static_cast<int>(phi[i + 1]));
    ASSERT_EQ(t.at(0, 23), 1);
  }
}

TEST(CnnExport, FileLayout) {
  const auto ds = noise_free(6, 3, 38);
  const auto text = export_cnn_tensor(ds);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "cnn n=6 rows=4 samples=3");
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3u * 5u);
  EXPECT_EQ(export_cnn_tensor(ds, false).substr(0, 24), "cnn n=6 rows=2 samples=3");
}

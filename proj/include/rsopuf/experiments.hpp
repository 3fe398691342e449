#pragma once

// Reproducible experiment drivers behind the command-line tool. Each command
// takes a plain config struct, embeds that config in every artifact it
// produces, and returns the artifact text so callers decide where it goes.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rsopuf/attacks/cmaes.hpp"
#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/evaluate.hpp"
#include "rsopuf/attacks/lr.hpp"
#include "rsopuf/attacks/mlp.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/io.hpp"
#include "rsopuf/metrics.hpp"
#include "rsopuf/protocol.hpp"
#include "rsopuf/puf.hpp"
#include "rsopuf/random.hpp"
#include "rsopuf/rso.hpp"

namespace rsopuf::experiments {

using nlohmann::json;

// ---------------------------------------------------------------------------
// gen

struct GenConfig {
  std::size_t n = 64;
  std::uint64_t seed = 1;
  double flip_target = 0.05;
  std::size_t check_challenges = 2000;
  std::size_t check_repetitions = 10;
};

inline json to_json(const GenConfig& c) {
  return {{"command", "gen"},           {"n", c.n},
          {"seed", c.seed},             {"flip_target", c.flip_target},
          {"check_challenges", c.check_challenges}, {"check_repetitions", c.check_repetitions}};
}

struct GenResult {
  PufInstance instance;
  double measured_flip_rate = 0.0;
  std::string file;
};

/// Samples an instance, calibrates its noise to the target flip rate and
/// measures the rate it actually achieves on fresh challenges.
inline GenResult cmd_gen(const GenConfig& config) {
  require(config.n >= 1, "gen: n must be >= 1");
  require(config.flip_target >= 0.0 && config.flip_target < 0.5, "gen: flip target must lie in [0, 0.5)");
  const Seed seed{config.seed};
  PufInstance base = sample_instance(config.n, seed);
  const double sigma = calibrate_noise(base, config.flip_target);
  PufInstance p = base.with_noise_sigma(sigma);
  Rng rng = make_rng(derive_seed(seed, "gen.check"));
  const auto check = random_challenges(rng, config.n, config.check_challenges);
  NoiseStream noise(derive_seed(seed, "gen.check.noise"));
  const double measured = sigma > 0.0 ? measure_flip_rate(p, check, config.check_repetitions, noise) : 0.0;
  const std::map<std::string, std::string> meta{{"config", to_json(config).dump()},
                                                {"target_flip_rate", format_double(config.flip_target)},
                                                {"measured_flip_rate", format_double(measured)}};
  std::string file = to_record(p, meta);
  return {std::move(p), measured, std::move(file)};
}

inline PufInstance load_instance(const std::filesystem::path& path) { return parse_record(read_file(path)).instance; }

// ---------------------------------------------------------------------------
// collect

enum class CollectMode { Raw, Rso };

inline CollectMode parse_collect_mode(std::string_view s) {
  if (s == "raw") return CollectMode::Raw;
  if (s == "rso") return CollectMode::Rso;
  throw ContractViolation("collect: mode must be raw or rso, got '" + std::string(s) + "'");
}

struct CollectConfig {
  std::size_t count = 10000;
  CollectMode mode = CollectMode::Raw;
  std::size_t m = 2;
  std::uint64_t seed = 1;
  bool noisy = true;
  bool unique_challenges = false;
  // RSO sessions run with a static key set unless updates are enabled. With
  // updates on and banks == 0, enough banks are provisioned for the campaign.
  bool updates = false;
  std::size_t banks = 0;
  double epsilon = 0.05;
  double tau = 13.0 / 64.0;
};

inline json to_json(const CollectConfig& c) {
  return {{"command", "collect"},
          {"count", c.count},
          {"mode", c.mode == CollectMode::Raw ? "raw" : "rso"},
          {"m", c.m},
          {"seed", c.seed},
          {"noisy", c.noisy},
          {"unique_challenges", c.unique_challenges},
          {"updates", c.updates},
          {"banks", c.banks},
          {"epsilon", c.epsilon},
          {"tau", c.tau}};
}

struct CollectResult {
  attacks::CrpDataset dataset;
  std::size_t sessions = 0;
  std::size_t accepts = 0;
  std::size_t updates = 0;
  std::vector<std::string> transcript_lines;
  std::string file;
};

/// Banks a campaign of `sessions` needs when keys update every time the
/// counter reaches N_min (the counter grows by n per session).
inline std::size_t banks_needed(std::size_t sessions, std::size_t n, std::size_t n_min) {
  if (sessions == 0) return 1;
  const std::size_t per_bank = (n_min + n - 1) / n;
  return (sessions - 1) / per_bank + 1;
}

/// One provisioned device enrolled at a fresh server.
struct CampaignSetup {
  CampaignSetup(const PufInstance& p, std::size_t m, std::size_t banks, Seed seed, ServerConfig server_config,
                EnrollmentOptions enrollment = {})
      : device(provision_device("dev-" + std::to_string(seed.value), p, m, banks, derive_seed(seed, "campaign.device"))),
        server(server_config) {
    server.enroll(device, enrollment);
  }

  Device device;
  Server server;
};

inline CollectResult cmd_collect(const PufInstance& instance, const CollectConfig& config) {
  const Seed seed{config.seed};
  const PufInstance p = config.noisy ? instance : instance.with_noise_sigma(0.0);
  CollectResult out;
  if (config.mode == CollectMode::Raw) {
    out.dataset = attacks::harvest_raw(p, config.count, derive_seed(seed, "collect.raw"),
                                       {config.noisy, config.unique_challenges});
    out.dataset.seed = seed;
  } else {
    require(config.m >= 2, "collect: rso mode needs m >= 2");
    const std::size_t n = p.n();
    out.sessions = (config.count + n - 1) / n;
    ServerConfig sc{config.tau, config.epsilon, config.updates, derive_seed(seed, "collect.server")};
    const std::size_t banks =
        config.banks ? config.banks
                     : (config.updates ? banks_needed(out.sessions, n, n_min_rso(n, config.epsilon, config.m)) : 1);
    CampaignSetup setup(p, config.m, banks, seed, sc);
    std::vector<ObfuscatedExchange> observed;
    observed.reserve(out.sessions);
    Device* devices[] = {&setup.device};
    const auto report = run_campaign(setup.server, devices, out.sessions, [&](const AuthTranscript& t) {
      ObfuscatedExchange ex;
      ex.c = t.c;
      ex.r_hat = t.r_hat;
      observed.push_back(std::move(ex));
      out.transcript_lines.push_back(to_json(t).dump());
    });
    out.accepts = report.accepts;
    out.updates = report.updates.size();
    out.dataset = attacks::harvest_rso(observed, seed);
  }
  out.file = attacks::write_dataset(out.dataset, "config=" + to_json(config).dump());
  return out;
}

/// Pulls the embedded config object out of a dataset file, if present.
inline std::optional<json> dataset_config(std::string_view text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    if (line.starts_with("# config=")) return json::parse(line.substr(9), nullptr, false);
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// attack

struct AttackConfig {
  attacks::Method method = attacks::Method::Lr;
  std::uint64_t seed = 1;
  std::size_t test_size = 10000;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  std::size_t generations = 1000;
  std::size_t m = 0;  // recorded in the report; 0 for raw data
};

inline json to_json(const AttackConfig& c) {
  return {{"command", "attack"},      {"method", attacks::to_string(c.method)},
          {"seed", c.seed},           {"test_size", c.test_size},
          {"max_epochs", c.max_epochs}, {"patience", c.patience},
          {"generations", c.generations}, {"m", c.m}};
}

struct AttackResult {
  attacks::AttackReport report;
  attacks::AttackModel model;
};

/// Trains on the 70/20 part of a shuffled split and tests either on the 10%
/// part (capped at test_size) or, when `reference` is given, on test_size fresh
/// noise-free CRPs of the reference instance.
inline AttackResult cmd_attack(const attacks::CrpDataset& ds, const AttackConfig& config,
                               const PufInstance* reference = nullptr) {
  using namespace attacks;
  require(ds.n >= 1, "attack: dataset has no stage count");
  if (ds.size() < 10) throw ContractViolation("attack: dataset too small to split");
  const Seed seed{config.seed};
  const Split split = split_dataset(ds.size(), derive_seed(seed, "attack.split"));
  if (split.train.empty() || split.test.empty()) throw ContractViolation("attack: dataset too small to split");

  const auto start = std::chrono::steady_clock::now();
  const Mat<float> X = feature_matrix<float>(ds, split.train);
  const Vec<float> t = sign_labels<float>(ds, split.train);
  const Mat<float> Xv = feature_matrix<float>(ds, split.validation);
  const Vec<float> tv = sign_labels<float>(ds, split.validation);
  EarlyStopping stopping{config.max_epochs, config.patience};
  AttackModel model;
  json hyper;
  switch (config.method) {
    case Method::Lr: {
      LrOptions opts;
      opts.stopping = stopping;
      model = train_lr<float>(X, t, Xv, tv, opts);
      hyper = {{"max_epochs", stopping.max_epochs}, {"patience", stopping.patience},
               {"epochs", std::get<LrModel>(model).trace.epochs}};
      break;
    }
    case Method::Mlp: {
      MlpOptions opts;
      opts.stopping = stopping;
      opts.seed = derive_seed(seed, "attack.mlp");
      model = train_mlp<float>(X, t, Xv, tv, opts);
      hyper = {{"hidden", kMlpHidden}, {"max_epochs", stopping.max_epochs}, {"patience", stopping.patience},
               {"epochs", std::get<MlpModel>(model).trace.epochs}};
      break;
    }
    case Method::Cmaes: {
      CmaesOptions opts;
      opts.generations = config.generations;
      opts.seed = derive_seed(seed, "attack.cmaes");
      const EsModel es = train_cmaes<float>(X, t, opts);
      hyper = {{"generations", es.generations}, {"population", es.population}, {"restarts", es.restarts}};
      model = es;
      break;
    }
  }

  AttackReport report;
  report.method = config.method;
  report.n = ds.n;
  report.m = config.m;
  report.train_size = split.train.size();
  if (reference && ds.provenance == Provenance::Raw) {
    require(reference->n() == ds.n, "attack: reference instance stage count differs from dataset");
    const auto fresh = harvest_raw(*reference, config.test_size, derive_seed(seed, "attack.test"), {false, false});
    report.test_size = fresh.size();
    report.accuracy = evaluate(model, feature_matrix<float>(fresh), sign_labels<float>(fresh));
  } else {
    std::vector<std::size_t> test(split.test.begin(),
                                  split.test.begin() + static_cast<std::ptrdiff_t>(std::min(split.test.size(), config.test_size)));
    report.test_size = test.size();
    report.accuracy = evaluate<float>(model, ds, test);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.hyperparameters = std::move(hyper);
  return {std::move(report), std::move(model)};
}

/// CSV block: config comment then the report row; a header precedes the first row.
inline std::string append_report(std::string existing, const attacks::AttackReport& report, const json& config) {
  if (existing.empty()) existing = attacks::attack_csv_header() + '\n';
  existing += "# config=" + config.dump() + '\n';
  existing += attacks::to_csv(report) + '\n';
  return existing;
}

// ---------------------------------------------------------------------------
// sweep-keys

struct SweepConfig {
  std::vector<std::size_t> m_values{2, 4, 8, 16, 32};
  std::vector<attacks::Method> methods{attacks::Method::Lr, attacks::Method::Mlp, attacks::Method::Cmaes};
  std::size_t count = 100000;
  std::uint64_t seed = 1;
  std::size_t generations = 1000;
  std::size_t max_epochs = 500;
  unsigned jobs = 1;
};

inline json to_json(const SweepConfig& c) {
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.emplace_back(attacks::to_string(m));
  return {{"command", "sweep-keys"}, {"m", c.m_values}, {"methods", methods}, {"count", c.count},
          {"seed", c.seed},          {"generations", c.generations}, {"max_epochs", c.max_epochs}};
}

struct SweepResult {
  std::vector<attacks::AttackReport> rows;
  std::string csv;
};

/// One RSO dataset per m, every method attacked on it. Runs for distinct m may
/// proceed on separate threads; results are ordered by (m, method) regardless.
inline SweepResult cmd_sweep_keys(const PufInstance& instance, const SweepConfig& config) {
  require(!config.m_values.empty() && !config.methods.empty(), "sweep-keys: empty m or method list");
  auto run_m = [&](std::size_t m) {
    CollectConfig cc;
    cc.count = config.count;
    cc.mode = CollectMode::Rso;
    cc.m = m;
    cc.seed = derive_seed(Seed{config.seed}, "sweep.collect", m).value;
    const auto data = cmd_collect(instance, cc);
    std::vector<attacks::AttackReport> rows;
    for (auto method : config.methods) {
      AttackConfig ac;
      ac.method = method;
      ac.seed = derive_seed(Seed{config.seed}, "sweep.attack", m).value;
      ac.generations = config.generations;
      ac.max_epochs = config.max_epochs;
      ac.m = m;
      rows.push_back(cmd_attack(data.dataset, ac).report);
    }
    return rows;
  };

  std::vector<std::vector<attacks::AttackReport>> per_m(config.m_values.size());
  const std::size_t jobs = std::max<unsigned>(1, config.jobs);
  for (std::size_t base = 0; base < config.m_values.size(); base += jobs) {
    std::vector<std::future<std::vector<attacks::AttackReport>>> batch;
    for (std::size_t k = base; k < std::min(base + jobs, config.m_values.size()); ++k) {
      batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, run_m, config.m_values[k]));
    }
    for (std::size_t k = 0; k < batch.size(); ++k) per_m[base + k] = batch[k].get();
  }

  SweepResult out;
  out.csv = "# config=" + to_json(config).dump() + '\n' + attacks::attack_csv_header() + '\n';
  for (auto& rows : per_m) {
    for (auto& r : rows) {
      out.csv += attacks::to_csv(r) + '\n';
      out.rows.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// authstats

struct AuthStatsConfig {
  std::size_t n = 64;
  double p_inter = 0.5;
  double p_intra = 0.05;
  EerRule rule = EerRule::Crossing;
  std::string row = "1";
};

inline EerRule parse_eer_rule(std::string_view s) {
  if (s == "minmax") return EerRule::MinMax;
  if (s == "crossing") return EerRule::Crossing;
  throw ContractViolation("authstats: rule must be minmax or crossing");
}

inline json to_json(const AuthStatsConfig& c) {
  return {{"command", "authstats"}, {"n", c.n}, {"p_inter", c.p_inter}, {"p_intra", c.p_intra},
          {"rule", to_string(c.rule)}, {"row", c.row}};
}

struct AuthStatsResult {
  AuthStatsRow row;
  std::string csv;
};

inline AuthStatsResult cmd_authstats(const AuthStatsConfig& config) {
  if (!(config.p_inter >= 0.0 && config.p_inter <= 1.0 && config.p_intra >= 0.0 && config.p_intra <= 1.0)) {
    throw ContractViolation("authstats: probabilities must lie in [0, 1]");
  }
  require(config.n >= 1, "authstats: n must be >= 1");
  AuthStatsRow row{config.row, config.p_inter, config.p_intra, eer_search(config.n, config.p_inter, config.p_intra, config.rule)};
  std::string csv = "# config=" + to_json(config).dump() + '\n' + auth_stats_csv_header() + '\n' + to_csv(row) + '\n';
  return {std::move(row), std::move(csv)};
}

// ---------------------------------------------------------------------------
// protocol

struct ProtocolConfig {
  std::size_t m = 2;
  std::size_t sessions = 100;
  std::size_t banks = 0;  // 0: as many as the campaign needs
  double epsilon = 0.05;
  double tau = 13.0 / 64.0;
  std::uint64_t seed = 1;
  bool noisy = true;
  bool updates = true;
  bool lr_enrollment = false;
  std::size_t enrollment_crps = 10000;
};

inline json to_json(const ProtocolConfig& c) {
  return {{"command", "protocol"}, {"m", c.m},         {"sessions", c.sessions},
          {"banks", c.banks},      {"epsilon", c.epsilon}, {"tau", c.tau},
          {"seed", c.seed},        {"noisy", c.noisy}, {"updates", c.updates},
          {"lr_enrollment", c.lr_enrollment}, {"enrollment_crps", c.enrollment_crps}};
}

struct ProtocolResult {
  CampaignReport report;
  std::size_t n_min = 0;
  std::string transcript;  // JSON lines
  std::string report_json;
};

inline ProtocolResult cmd_protocol(const PufInstance& instance, const ProtocolConfig& config) {
  require(config.m >= 2, "protocol: m must be >= 2");
  const Seed seed{config.seed};
  const PufInstance p = config.noisy ? instance : instance.with_noise_sigma(0.0);
  ProtocolResult out;
  out.n_min = n_min_rso(p.n(), config.epsilon, config.m);
  const std::size_t banks = config.banks ? config.banks : (config.updates ? banks_needed(config.sessions, p.n(), out.n_min) : 1);
  ServerConfig sc{config.tau, config.epsilon, config.updates, derive_seed(seed, "protocol.server")};
  EnrollmentOptions eo{config.lr_enrollment ? EnrollmentMode::LrModel : EnrollmentMode::GroundTruth,
                       config.enrollment_crps, derive_seed(seed, "protocol.enroll")};
  CampaignSetup setup(p, config.m, banks, seed, sc, eo);
  Device* devices[] = {&setup.device};
  out.report = run_campaign(setup.server, devices, config.sessions,
                            [&](const AuthTranscript& t) { out.transcript += to_json(t).dump() + '\n'; });
  json r = to_json(out.report);
  r["config"] = to_json(config);
  r["n"] = p.n();
  r["n_min_rso"] = out.n_min;
  r["exposed_crps"] = config.sessions * p.n();
  out.report_json = r.dump(2) + '\n';
  return out;
}

}  // namespace rsopuf::experiments

#pragma once

// Device/server authentication over RSO.
//
// The server keeps a parametric model of every enrolled PUF plus the key sets
// recorded at manufacturing test. Per session it issues n fresh challenges and
// all m^2 candidate first halves Key_j ^ model(Key_i ^ [C]); the device
// obfuscates, accepts locally if any candidate first half is within tau of its
// own, and returns its second half, which the server matches against the m^2
// candidate second halves. Every session exposes n CRPs; once the counter has
// reached N_min for RSO the next issue carries a key-update command.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/attacks/lr.hpp"
#include "rsopuf/bits.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/metrics.hpp"
#include "rsopuf/puf.hpp"
#include "rsopuf/random.hpp"
#include "rsopuf/rso.hpp"

namespace rsopuf {

/// Largest Hamming distance accepted on a half of `length` bits. The
/// fractional threshold applies per half; the epsilon absorbs 13/64-style
/// fractions that are exact in the unsplit word.
inline std::size_t allowed_flips(double tau, std::size_t length) {
  require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
  return static_cast<std::size_t>(std::floor(tau * static_cast<double>(length) + 1e-9));
}

inline bool half_matches(const BitString& a, const BitString& b, double tau) {
  return a.size() == b.size() && hd(a, b) <= allowed_flips(tau, a.size());
}

// ---------------------------------------------------------------------------
// Device

class Device {
 public:
  Device(std::string id, PufInstance puf, ChallengeBank bank, std::unique_ptr<TrngSource> trng)
      : id_(std::move(id)), puf_(std::move(puf)), bank_(std::move(bank)), keys_(derive_set(puf_, bank_)),
        trng_(std::move(trng)), noise_(puf_.noise_stream(0)) {
    require(!id_.empty(), "Device: empty id");
    require(trng_ != nullptr, "Device: missing TRNG");
  }

  const std::string& id() const noexcept { return id_; }
  const PufInstance& puf() const noexcept { return puf_; }
  const ChallengeBank& bank() const noexcept { return bank_; }
  const ObfuscationSet& keys() const noexcept { return keys_; }
  const TrngSource& trng() const noexcept { return *trng_; }

  /// Switches to the next stored bank; throws DeviceRetired when none is left.
  void update_keys() { keys_ = update_set(bank_, puf_); }

  ObfuscatedExchange obfuscate(std::span<const Challenge> c) {
    NoiseStream* noise = puf_.noise_sigma() > 0.0 ? &noise_ : nullptr;
    return rsopuf::obfuscate(keys_, *trng_, puf_, c, noise);
  }

 private:
  std::string id_;
  PufInstance puf_;
  ChallengeBank bank_;
  ObfuscationSet keys_;
  std::unique_ptr<TrngSource> trng_;
  NoiseStream noise_;
};

/// Manufacturing test: provisions bank_count key sets of m * n stable challenges.
inline Device provision_device(std::string id, PufInstance puf, std::size_t m, std::size_t bank_count, Seed seed,
                               StabilityPolicy policy = {}) {
  auto bank = provision_bank(puf, m, bank_count, derive_seed(seed, "device.bank"), policy);
  return Device(std::move(id), std::move(puf), std::move(bank),
                std::make_unique<SeededTrng>(derive_seed(seed, "device.trng")));
}

// ---------------------------------------------------------------------------
// Messages

struct ChallengeMessage {
  std::uint64_t session = 0;
  std::string device_id;
  bool update_keys = false;            // apply the next key set before responding
  std::vector<Challenge> c;            // [C]
  std::vector<BitString> r_a;          // m^2 candidates, index i * m + j
};

struct DeviceReply {
  std::uint64_t session = 0;
  std::optional<BitString> r_hat_b;    // empty: local reject
};

/// What the device did in a session (not transmitted).
struct DeviceOutcome {
  DeviceReply reply;
  ObfuscatedExchange exchange;
  std::optional<std::size_t> matched;  // first matching candidate index
};

/// Processes an issued challenge set: applies a pending key update, obfuscates
/// (noisy), and releases the second half if any candidate first half is within
/// tau. Malformed messages throw ProtocolError.
inline DeviceOutcome device_respond(Device& device, const ChallengeMessage& msg, double tau) {
  const std::size_t n = device.puf().n();
  if (msg.device_id != device.id()) throw ProtocolError("device_respond: message addressed to another device");
  if (msg.c.size() != n) throw ProtocolError("device_respond: challenge set must hold n challenges");
  for (const auto& c : msg.c) {
    if (c.size() != n) throw ProtocolError("device_respond: malformed challenge");
  }
  if (msg.update_keys) device.update_keys();
  if (msg.r_a.size() != device.keys().m() * device.keys().m()) {
    throw ProtocolError("device_respond: expected m^2 candidate halves");
  }

  DeviceOutcome out;
  out.exchange = device.obfuscate(msg.c);
  out.reply.session = msg.session;
  for (std::size_t k = 0; k < msg.r_a.size(); ++k) {
    if (half_matches(out.exchange.r_hat_a, msg.r_a[k], tau)) {
      out.matched = k;
      out.reply.r_hat_b = out.exchange.r_hat_b;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Server

enum class EnrollmentMode { GroundTruth, LrModel };

struct EnrollmentOptions {
  EnrollmentMode mode = EnrollmentMode::GroundTruth;
  std::size_t training_crps = 10000;
  Seed seed{};
};

struct ServerConfig {
  double tau = 13.0 / 64.0;
  double epsilon = 0.05;
  bool updates_enabled = true;
  Seed seed{};
};

enum class Verdict { Accept, Reject };

inline const char* to_string(Verdict v) { return v == Verdict::Accept ? "accept" : "reject"; }

struct KeyUpdateEvent {
  std::string device_id;
  std::uint64_t session = 0;
  std::size_t counter_before = 0;
  std::size_t new_bank = 0;
};

class Server {
 public:
  explicit Server(ServerConfig config) : config_(config), rng_(make_rng(derive_seed(config.seed, "server.issue"))) {
    require(config_.epsilon > 0.0 && config_.epsilon < 1.0, "Server: epsilon must lie in (0, 1)");
    require(config_.tau >= 0.0 && config_.tau <= 1.0, "Server: tau must lie in [0, 1]");
  }

  const ServerConfig& config() const noexcept { return config_; }

  /// Records the device's parametric model and its provisioned key sets.
  void enroll(const Device& device, EnrollmentOptions options = {}) {
    std::lock_guard lock(mutex_);
    if (entries_.count(device.id())) throw ProtocolError("enroll: duplicate device id '" + device.id() + "'");
    const PufInstance& p = device.puf();
    Entry e;
    if (options.mode == EnrollmentMode::GroundTruth) {
      e.model = std::make_unique<PufInstance>(p.omega(), 0.0, p.seed());
    } else {
      const auto ds = attacks::harvest_raw(p, options.training_crps, derive_seed(options.seed, "enroll.crps"));
      const auto split = attacks::split_dataset(ds.size(), derive_seed(options.seed, "enroll.split"), 0.8, 0.2);
      const auto lr = attacks::train_lr(ds, split);
      e.model = std::make_unique<PufInstance>(lr.as_delay_vector(), 0.0, p.seed());
    }
    // Key sets are read off the stored challenges at test time, one per bank.
    const ChallengeBank& bank = device.bank();
    for (std::size_t b = 0; b < bank.bank_count(); ++b) {
      ChallengeBank view(bank.m(), bank.n(), std::vector<std::vector<KeyGroup>>{bank.bank(b)}, bank.policy());
      e.key_sets.push_back(derive_set(p, view, false));
    }
    e.active = bank.active_bank();
    e.n = p.n();
    e.n_min = n_min_rso(p.n(), config_.epsilon, bank.m());
    entries_.emplace(device.id(), std::move(e));
  }

  bool enrolled(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return entries_.count(id) != 0;
  }

  std::size_t counter(const std::string& id) const { return entry(id).counter; }
  std::size_t n_min(const std::string& id) const { return entry(id).n_min; }
  std::size_t active_bank(const std::string& id) const { return entry(id).active; }
  const ObfuscationSet& keys(const std::string& id) const {
    const Entry& e = entry(id);
    return e.key_sets[e.active];
  }
  const PufInstance& model(const std::string& id) const { return *entry(id).model; }
  std::size_t used_challenges(const std::string& id) const { return entry(id).used.size(); }
  const std::vector<KeyUpdateEvent>& update_events() const noexcept { return updates_; }

  /// Candidate second halves of the open session (empty if none is open).
  std::vector<BitString> open_candidates(const std::string& id) const {
    const Entry& e = entry(id);
    return e.open ? e.open->r_b : std::vector<BitString>{};
  }

  ChallengeMessage issue(const std::string& id) {
    std::lock_guard lock(mutex_);
    Entry& e = entry_mut(id);
    ChallengeMessage msg;
    msg.session = next_session_++;
    msg.device_id = id;
    if (config_.updates_enabled && e.counter >= e.n_min) {
      if (e.active + 1 >= e.key_sets.size()) throw DeviceRetired("issue: device '" + id + "' has no key set left");
      updates_.push_back({id, msg.session, e.counter, e.active + 1});
      ++e.active;
      e.counter = 0;
      msg.update_keys = true;
    }
    msg.c = fresh_challenges(e);
    const ObfuscationSet& keys = e.key_sets[e.active];
    const std::size_t m = keys.m();

    // model(Key_i ^ [C]) depends only on i; XOR with Key_j afterwards.
    Session s;
    s.id = msg.session;
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<Challenge> masked;
      masked.reserve(e.n);
      for (const auto& c : msg.c) masked.push_back(keys.key(i) ^ c);
      const ResponseWord r_prime = eval_response_word(*e.model, masked);
      for (std::size_t j = 0; j < m; ++j) {
        auto [a, b] = split_halves(keys.key(j) ^ r_prime);
        msg.r_a.push_back(std::move(a));
        s.r_b.push_back(std::move(b));
      }
    }
    e.open = std::move(s);
    e.counter += e.n;
    return msg;
  }

  /// Closes the session. An absent reply (device-side reject or lost message)
  /// rejects; a session id that is not the open one, including one already
  /// closed, rejects without touching the open session.
  Verdict verify(const std::string& id, std::uint64_t session, const std::optional<BitString>& r_hat_b) {
    std::lock_guard lock(mutex_);
    Entry& e = entry_mut(id);
    if (!e.open && e.closed.empty()) throw ProtocolError("verify: no session was opened for '" + id + "'");
    if (!e.open || e.open->id != session) return Verdict::Reject;
    Session s = std::move(*e.open);
    e.open.reset();
    e.closed.insert(s.id);
    if (!r_hat_b) return Verdict::Reject;
    for (const auto& cand : s.r_b) {
      if (half_matches(*r_hat_b, cand, config_.tau)) return Verdict::Accept;
    }
    return Verdict::Reject;
  }

 private:
  struct Session {
    std::uint64_t id = 0;
    std::vector<BitString> r_b;
  };

  struct Entry {
    std::unique_ptr<PufInstance> model;
    std::vector<ObfuscationSet> key_sets;
    std::size_t active = 0;
    std::size_t n = 0;
    std::size_t n_min = 0;
    std::size_t counter = 0;
    std::set<BitString> used;
    std::optional<Session> open;
    std::set<std::uint64_t> closed;
  };

  const Entry& entry(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ProtocolError("unknown device id '" + id + "'");
    return it->second;
  }

  Entry& entry_mut(const std::string& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ProtocolError("unknown device id '" + id + "'");
    return it->second;
  }

  std::vector<Challenge> fresh_challenges(Entry& e) {
    if (e.n < 64) {
      const double space = std::ldexp(1.0, static_cast<int>(e.n));
      if (static_cast<double>(e.used.size() + e.n) > space) throw ProtocolError("issue: challenge space exhausted");
    }
    std::vector<Challenge> out;
    out.reserve(e.n);
    while (out.size() < e.n) {
      auto c = BitString::random(rng_, e.n);
      if (e.used.insert(c).second) out.push_back(std::move(c));
    }
    return out;
  }

  ServerConfig config_;
  Rng rng_;
  std::map<std::string, Entry> entries_;
  std::vector<KeyUpdateEvent> updates_;
  std::uint64_t next_session_ = 1;
  mutable std::recursive_mutex mutex_;
};

// ---------------------------------------------------------------------------
// Transport and transcripts

/// In-process transport. Overrides may drop (nullopt) or rewrite messages.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual std::optional<ChallengeMessage> to_device(ChallengeMessage msg) { return msg; }
  virtual std::optional<DeviceReply> to_server(DeviceReply reply) { return reply; }
};

struct AuthTranscript {
  std::uint64_t session = 0;
  std::string device_id;
  bool update_keys = false;
  std::vector<Challenge> c;
  std::vector<BitString> r_a;
  // Device internals. The full obfuscated word is what an eavesdropper
  // accumulates over sessions; the key indices are hidden state.
  std::size_t key_i = 0;
  std::size_t key_j = 0;
  ResponseWord r_hat;
  ResponseWord r_hat_a;
  std::optional<BitString> r_hat_b;
  bool delivered = true;
  std::optional<std::size_t> device_match;
  Verdict server_verdict = Verdict::Reject;
  std::size_t counter = 0;

  Verdict outcome() const { return server_verdict; }
};

inline nlohmann::json to_json(const AuthTranscript& t) {
  nlohmann::json j{{"session", t.session},
                   {"device", t.device_id},
                   {"n", t.c.size()},
                   {"update", t.update_keys},
                   {"C", hex_list(t.c)},
                   {"R_a", hex_list(t.r_a)},
                   {"i", t.key_i},
                   {"j", t.key_j},
                   {"R_hat", t.r_hat.to_hex()},
                   {"R_hat_a", t.r_hat_a.to_hex()},
                   {"R_hat_b", t.r_hat_b ? nlohmann::json(t.r_hat_b->to_hex()) : nlohmann::json(nullptr)},
                   {"delivered", t.delivered},
                   {"device_verdict", t.device_match ? "match" : "reject"},
                   {"device_match", t.device_match ? nlohmann::json(*t.device_match) : nlohmann::json(nullptr)},
                   {"server_verdict", to_string(t.server_verdict)},
                   {"outcome", to_string(t.outcome())},
                   {"counter", t.counter}};
  return j;
}

/// Adversary view of a transcript line: issued [C] and the obfuscated word.
inline ObfuscatedExchange observed_exchange(const nlohmann::json& j) {
  try {
    const std::size_t n = j.at("n").get<std::size_t>();
    ObfuscatedExchange ex;
    for (const auto& h : j.at("C")) ex.c.push_back(BitString::from_hex(h.get<std::string>(), n));
    if (ex.c.size() != n) throw ParseError("transcript: expected n challenges");
    ex.r_hat = BitString::from_hex(j.at("R_hat").get<std::string>(), n);
    std::tie(ex.r_hat_a, ex.r_hat_b) = split_halves(ex.r_hat);
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("transcript: ") + e.what());
  }
}

/// One full session over `channel`.
inline AuthTranscript run_session(Server& server, Device& device, Channel& channel) {
  AuthTranscript t;
  ChallengeMessage msg = server.issue(device.id());
  t.session = msg.session;
  t.device_id = device.id();
  t.update_keys = msg.update_keys;
  t.c = msg.c;
  t.r_a = msg.r_a;
  auto delivered = channel.to_device(std::move(msg));
  std::optional<DeviceReply> reply;
  if (delivered) {
    DeviceOutcome out = device_respond(device, *delivered, server.config().tau);
    t.key_i = out.exchange.key_i;
    t.key_j = out.exchange.key_j;
    t.r_hat = out.exchange.r_hat;
    t.r_hat_a = out.exchange.r_hat_a;
    t.r_hat_b = out.reply.r_hat_b;
    t.device_match = out.matched;
    reply = channel.to_server(out.reply);
  }
  t.delivered = delivered.has_value() && reply.has_value();
  t.server_verdict = server.verify(device.id(), reply ? reply->session : t.session,
                                   reply ? reply->r_hat_b : std::optional<BitString>{});
  t.counter = server.counter(device.id());
  return t;
}

struct CampaignReport {
  std::size_t sessions = 0;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t device_rejects = 0;
  std::vector<KeyUpdateEvent> updates;
  std::map<std::string, std::vector<std::size_t>> counters;  // after each session
};

inline nlohmann::json to_json(const CampaignReport& r) {
  auto updates = nlohmann::json::array();
  for (const auto& u : r.updates) {
    updates.push_back({{"device", u.device_id},
                       {"session", u.session},
                       {"counter_before", u.counter_before},
                       {"new_bank", u.new_bank}});
  }
  return {{"sessions", r.sessions},   {"accepts", r.accepts},   {"rejects", r.rejects},
          {"device_rejects", r.device_rejects}, {"updates", updates}, {"counters", r.counters}};
}

using AdversaryHook = std::function<void(const AuthTranscript&)>;

/// Round-robin sessions over the devices; every transcript goes to `adversary`.
inline CampaignReport run_campaign(Server& server, std::span<Device* const> devices, std::size_t sessions,
                                   const AdversaryHook& adversary = {}, Channel* channel = nullptr) {
  require(!devices.empty(), "run_campaign: need at least one device");
  Channel passthrough;
  Channel& ch = channel ? *channel : passthrough;
  CampaignReport report;
  const std::size_t updates_before = server.update_events().size();
  for (std::size_t s = 0; s < sessions; ++s) {
    Device& d = *devices[s % devices.size()];
    const AuthTranscript t = run_session(server, d, ch);
    ++report.sessions;
    if (t.outcome() == Verdict::Accept) ++report.accepts;
    else ++report.rejects;
    if (!t.device_match) ++report.device_rejects;
    report.counters[d.id()].push_back(t.counter);
    if (adversary) adversary(t);
  }
  const auto& ev = server.update_events();
  report.updates.assign(ev.begin() + static_cast<std::ptrdiff_t>(updates_before), ev.end());
  return report;
}

}  // namespace rsopuf

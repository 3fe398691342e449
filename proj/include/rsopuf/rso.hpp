#pragma once

// Random set-based obfuscation.
//
// At test time m*n stable challenges are banked per key set. Evaluating each
// group of n challenges noise-free yields one n-bit key; the m keys form the
// obfuscation set. Per exchange a TRNG picks indices i and j; every challenge
// of the issued set [C] is XORed with Key_i before reaching the PUF, and the
// resulting response word R' is XORed with Key_j. The obfuscated word is
// split into a first half (matched on the device) and a second half (matched
// by the server).

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rsopuf/bits.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/puf.hpp"
#include "rsopuf/random.hpp"

namespace rsopuf {

class StabilityFailure : public Error {
 public:
  using Error::Error;
};

/// A challenge is stable if |delta| >= k * noise_sigma.
struct StabilityPolicy {
  double k = 4.0;
  friend bool operator==(const StabilityPolicy&, const StabilityPolicy&) = default;
};

inline bool is_stable(const PufInstance& p, const Challenge& c, StabilityPolicy policy) {
  return std::abs(delta(p, c)) >= policy.k * p.noise_sigma();
}

/// Seeded source of uniformly random candidate challenges with a hard limit.
class CandidateStream {
 public:
  CandidateStream(std::size_t n, Seed seed, std::size_t limit) : n_(n), rng_(make_rng(seed)), remaining_(limit) {}

  std::optional<Challenge> next() {
    if (remaining_ == 0) return std::nullopt;
    --remaining_;
    return BitString::random(rng_, n_);
  }

  std::size_t remaining() const noexcept { return remaining_; }

 private:
  std::size_t n_;
  Rng rng_;
  std::size_t remaining_;
};

struct StableSelection {
  std::vector<Challenge> challenges;
  StabilityPolicy policy;
  std::size_t examined = 0;
};

inline StableSelection select_stable_challenges(const PufInstance& p, CandidateStream& stream, std::size_t count,
                                                StabilityPolicy policy = {}) {
  StableSelection out{{}, policy, 0};
  out.challenges.reserve(count);
  while (out.challenges.size() < count) {
    auto c = stream.next();
    if (!c) throw StreamExhausted("select_stable_challenges: candidate stream exhausted");
    require(c->size() == p.n(), "select_stable_challenges: candidate length mismatch");
    ++out.examined;
    if (is_stable(p, *c, policy)) out.challenges.push_back(std::move(*c));
  }
  return out;
}

/// n challenges whose noise-free responses form one key.
using KeyGroup = std::vector<Challenge>;

/// Stored obfuscation challenges: bank_count key sets of m groups of n challenges.
class ChallengeBank {
 public:
  ChallengeBank(std::size_t m, std::size_t n, std::vector<std::vector<KeyGroup>> banks, StabilityPolicy policy,
                std::size_t active = 0)
      : m_(m), n_(n), banks_(std::move(banks)), policy_(policy), active_(active) {
    require(m_ >= 2, "ChallengeBank: m must be >= 2");
    require(!banks_.empty(), "ChallengeBank: no banks");
    require(active_ < banks_.size(), "ChallengeBank: active bank out of range");
    for (const auto& bank : banks_) {
      require(bank.size() == m_, "ChallengeBank: bank must hold m key groups");
      for (const auto& group : bank) {
        require(group.size() == n_, "ChallengeBank: key group must hold n challenges");
        for (const auto& c : group) require(c.size() == n_, "ChallengeBank: challenge length must be n");
      }
    }
  }

  std::size_t m() const noexcept { return m_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t bank_count() const noexcept { return banks_.size(); }
  std::size_t active_bank() const noexcept { return active_; }
  StabilityPolicy policy() const noexcept { return policy_; }
  const std::vector<KeyGroup>& active() const { return banks_[active_]; }
  const std::vector<KeyGroup>& bank(std::size_t index) const { return banks_.at(index); }
  bool has_next() const noexcept { return active_ + 1 < banks_.size(); }

  void advance() {
    if (!has_next()) throw DeviceRetired("challenge bank exhausted: device retired");
    ++active_;
  }

  /// Storage for one key set: m * n challenges of n bits.
  std::size_t stored_bits_per_bank() const noexcept { return m_ * n_ * n_; }

  friend bool operator==(const ChallengeBank&, const ChallengeBank&) = default;

 private:
  std::size_t m_;
  std::size_t n_;
  std::vector<std::vector<KeyGroup>> banks_;
  StabilityPolicy policy_;
  std::size_t active_;
};

/// Manufacturing-test provisioning: selects m*n stable challenges per bank.
inline ChallengeBank provision_bank(const PufInstance& p, std::size_t m, std::size_t bank_count, Seed seed,
                                    StabilityPolicy policy = {}, std::size_t max_candidates = 0) {
  require(bank_count >= 1, "provision_bank: need at least one bank");
  const std::size_t needed = m * p.n() * bank_count;
  CandidateStream stream(p.n(), derive_seed(seed, "rso.bank"), max_candidates ? max_candidates : needed * 64);
  std::vector<std::vector<KeyGroup>> banks(bank_count, std::vector<KeyGroup>(m));
  for (auto& bank : banks) {
    for (auto& group : bank) group = select_stable_challenges(p, stream, p.n(), policy).challenges;
  }
  return ChallengeBank(m, p.n(), std::move(banks), policy);
}

class ObfuscationSet {
 public:
  explicit ObfuscationSet(std::vector<BitString> keys) : keys_(std::move(keys)) {
    require(keys_.size() >= 2, "ObfuscationSet: m must be >= 2");
    for (const auto& k : keys_) require(k.size() == keys_[0].size() && !k.empty(), "ObfuscationSet: key lengths");
  }

  std::size_t m() const noexcept { return keys_.size(); }
  std::size_t n() const noexcept { return keys_[0].size(); }
  const BitString& key(std::size_t index) const { return keys_.at(index); }
  const std::vector<BitString>& keys() const noexcept { return keys_; }

  friend bool operator==(const ObfuscationSet&, const ObfuscationSet&) = default;

 private:
  std::vector<BitString> keys_;
};

/// Keys from the active bank by noise-free evaluation. With verify_stability the
/// bank is re-checked against p's noise level first (device side).
inline ObfuscationSet derive_set(const PufInstance& p, const ChallengeBank& bank, bool verify_stability = true) {
  require(bank.n() == p.n(), "derive_set: bank and PUF stage counts differ");
  std::vector<BitString> keys;
  keys.reserve(bank.m());
  for (const auto& group : bank.active()) {
    if (verify_stability) {
      for (const auto& c : group) {
        if (!is_stable(p, c, bank.policy())) throw StabilityFailure("derive_set: stored challenge is not stable");
      }
    }
    keys.push_back(eval_response_word(p, group));
  }
  return ObfuscationSet(std::move(keys));
}

/// Advances to the next bank and derives its keys. Old keys are never reused.
inline ObfuscationSet update_set(ChallengeBank& bank, const PufInstance& p, bool verify_stability = true) {
  bank.advance();
  return derive_set(p, bank, verify_stability);
}

// ---------------------------------------------------------------------------
// Key-index source

class TrngSource {
 public:
  virtual ~TrngSource() = default;

  /// Uniform index in [0, m). Every draw is appended to the log.
  std::size_t draw(std::size_t m) {
    require(m >= 1, "TrngSource: m must be >= 1");
    const std::size_t v = next(m);
    require(v < m, "TrngSource: index out of range");
    log_.push_back(v);
    return v;
  }

  const std::vector<std::size_t>& draws() const noexcept { return log_; }

 protected:
  virtual std::size_t next(std::size_t m) = 0;

 private:
  std::vector<std::size_t> log_;
};

class SeededTrng final : public TrngSource {
 public:
  explicit SeededTrng(Seed seed) : rng_(make_rng(derive_seed(seed, "rso.trng"))) {}

 protected:
  std::size_t next(std::size_t m) override { return std::uniform_int_distribution<std::size_t>(0, m - 1)(rng_); }

 private:
  Rng rng_;
};

/// Replays a fixed index sequence (cyclically).
class ScriptedTrng final : public TrngSource {
 public:
  explicit ScriptedTrng(std::vector<std::size_t> script) : script_(std::move(script)) {
    require(!script_.empty(), "ScriptedTrng: empty script");
  }

 protected:
  std::size_t next(std::size_t) override { return script_[pos_++ % script_.size()]; }

 private:
  std::vector<std::size_t> script_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Exchange

struct ObfuscatedExchange {
  std::size_t key_i = 0;
  std::size_t key_j = 0;
  std::vector<Challenge> c;        // issued challenge set [C]
  std::vector<Challenge> c_prime;  // Key_i xor C[k]
  ResponseWord r_prime;
  ResponseWord r_hat;
  ResponseWord r_hat_a;
  ResponseWord r_hat_b;
};

/// First ceil(n/2) bits, remainder.
inline std::pair<BitString, BitString> split_halves(const BitString& word) {
  const std::size_t first = (word.size() + 1) / 2;
  return {word.slice(0, first), word.slice(first, word.size() - first)};
}

inline ObfuscatedExchange obfuscate_with(const ObfuscationSet& set, std::size_t key_i, std::size_t key_j,
                                         const PufInstance& p, std::span<const Challenge> c,
                                         NoiseStream* noise = nullptr) {
  require(set.n() == p.n(), "obfuscate: set and PUF stage counts differ");
  require(c.size() == p.n(), "obfuscate: expected n challenges");
  require(key_i < set.m() && key_j < set.m(), "obfuscate: key index out of range");
  ObfuscatedExchange ex;
  ex.key_i = key_i;
  ex.key_j = key_j;
  ex.c.assign(c.begin(), c.end());
  ex.c_prime.reserve(c.size());
  for (const auto& ck : c) ex.c_prime.push_back(set.key(key_i) ^ ck);
  ex.r_prime = eval_response_word(p, ex.c_prime, noise);
  ex.r_hat = set.key(key_j) ^ ex.r_prime;
  std::tie(ex.r_hat_a, ex.r_hat_b) = split_halves(ex.r_hat);
  return ex;
}

/// Draws i then j independently from the TRNG; i == j is allowed.
inline ObfuscatedExchange obfuscate(const ObfuscationSet& set, TrngSource& trng, const PufInstance& p,
                                    std::span<const Challenge> c, NoiseStream* noise = nullptr) {
  const std::size_t i = trng.draw(set.m());
  const std::size_t j = trng.draw(set.m());
  return obfuscate_with(set, i, j, p, c, noise);
}

/// Recovers ([C], R') from an exchange given the keys it used.
inline std::pair<std::vector<Challenge>, ResponseWord> deobfuscate(const ObfuscationSet& set,
                                                                   const ObfuscatedExchange& ex) {
  std::vector<Challenge> c;
  c.reserve(ex.c_prime.size());
  for (const auto& cp : ex.c_prime) c.push_back(set.key(ex.key_i) ^ cp);
  return {std::move(c), set.key(ex.key_j) ^ ex.r_hat};
}

// ---------------------------------------------------------------------------
// CRP thresholds

/// ceil((n+1) / (2 eps)); values within 1e-9 relative of an integer snap to it.
inline std::size_t n_min_arbiter(std::size_t n, double epsilon) {
  require(epsilon > 0.0 && epsilon < 1.0, "n_min_arbiter: epsilon must lie in (0, 1)");
  const double x = static_cast<double>(n + 1) / (2.0 * epsilon);
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * x) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

inline std::size_t n_min_rso(std::size_t n, double epsilon, std::size_t m) {
  require(m >= 1, "n_min_rso: m must be >= 1");
  return m * m * n_min_arbiter(n, epsilon);
}

inline double log10_binomial(double n, double k) {
  return (std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)) / std::log(10.0);
}

/// log10 of m^2 / C(N_rso, N_arbiter).
inline double extraction_probability(std::size_t n, double epsilon, std::size_t m) {
  const auto n_arb = static_cast<double>(n_min_arbiter(n, epsilon));
  const auto n_rso = static_cast<double>(n_min_rso(n, epsilon, m));
  return 2.0 * std::log10(static_cast<double>(m)) - log10_binomial(n_rso, n_arb);
}

/// log10 of m^(2 N_arbiter).
inline double brute_force_model_count(std::size_t n, double epsilon, std::size_t m) {
  require(m >= 1, "brute_force_model_count: m must be >= 1");
  return 2.0 * static_cast<double>(n_min_arbiter(n, epsilon)) * std::log10(static_cast<double>(m));
}

// ---------------------------------------------------------------------------
// Challenge bank file:
//   m=<m> n=<n> bank_count=<b> stability_k=<k> active_bank=<a>
//   then b*m*n challenge bitstrings, bank-major then key-group-major.

inline std::string write_bank(const ChallengeBank& bank) {
  std::ostringstream out;
  out << "m=" << bank.m() << " n=" << bank.n() << " bank_count=" << bank.bank_count()
      << " stability_k=" << format_double(bank.policy().k) << " active_bank=" << bank.active_bank() << '\n';
  for (std::size_t b = 0; b < bank.bank_count(); ++b) {
    for (const auto& group : bank.bank(b)) {
      for (const auto& c : group) out << c.to_string() << '\n';
    }
  }
  return out.str();
}

inline ChallengeBank parse_bank(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("bank file: missing header");
  auto fields = parse_header_fields(line);
  auto get = [&](const char* key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError(std::string("bank file: missing ") + key);
    return it->second;
  };
  const auto m = parse_u64(get("m"));
  const auto n = parse_u64(get("n"));
  const auto count = parse_u64(get("bank_count"));
  const double k = parse_double(get("stability_k"));
  const auto active = fields.count("active_bank") ? parse_u64(fields["active_bank"]) : 0;
  std::vector<std::vector<KeyGroup>> banks(count, std::vector<KeyGroup>(m));
  for (auto& bank : banks) {
    for (auto& group : bank) {
      for (std::size_t c = 0; c < n; ++c) {
        if (!std::getline(in, line)) throw ParseError("bank file: truncated");
        group.push_back(BitString::from_string(line));
      }
    }
  }
  return ChallengeBank(m, n, std::move(banks), StabilityPolicy{k}, active);
}

// Exchange log: one JSON object per line.

inline nlohmann::json hex_list(std::span<const Challenge> cs) {
  auto arr = nlohmann::json::array();
  for (const auto& c : cs) arr.push_back(c.to_hex());
  return arr;
}

inline nlohmann::json to_json(const ObfuscatedExchange& ex, std::uint64_t session) {
  return nlohmann::json{{"session", session},
                        {"n", ex.r_hat.size()},
                        {"i", ex.key_i},
                        {"j", ex.key_j},
                        {"C", hex_list(ex.c)},
                        {"C_prime", hex_list(ex.c_prime)},
                        {"R_prime", ex.r_prime.to_hex()},
                        {"R_hat", ex.r_hat.to_hex()},
                        {"R_hat_a", ex.r_hat_a.to_hex()},
                        {"R_hat_b", ex.r_hat_b.to_hex()}};
}

inline ObfuscatedExchange exchange_from_json(const nlohmann::json& j) {
  try {
    ObfuscatedExchange ex;
    const std::size_t n = j.at("n").get<std::size_t>();
    ex.key_i = j.at("i").get<std::size_t>();
    ex.key_j = j.at("j").get<std::size_t>();
    for (const auto& h : j.at("C")) ex.c.push_back(BitString::from_hex(h.get<std::string>(), n));
    for (const auto& h : j.at("C_prime")) ex.c_prime.push_back(BitString::from_hex(h.get<std::string>(), n));
    if (ex.c.size() != n || ex.c_prime.size() != n) throw ParseError("exchange: expected n challenges");
    ex.r_prime = BitString::from_hex(j.at("R_prime").get<std::string>(), n);
    ex.r_hat = BitString::from_hex(j.at("R_hat").get<std::string>(), n);
    const std::size_t first = (n + 1) / 2;
    ex.r_hat_a = BitString::from_hex(j.at("R_hat_a").get<std::string>(), first);
    ex.r_hat_b = BitString::from_hex(j.at("R_hat_b").get<std::string>(), n - first);
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("exchange: ") + e.what());
  }
}

}  // namespace rsopuf

#pragma once

// Arbiter PUF simulation under the additive linear delay model.
//
// An n-stage instance is fully described by its (n+1)-dimensional delay
// vector omega. The response to a challenge C is sign(omega . phi(C)) where
// phi^l(C) = prod_{i=l..n} (1 - 2 C_i) and phi^{n+1} = 1. Stage 1 is the stage
// nearest the pulse source. Measurement noise is additive Gaussian on the
// delay difference, drawn from a caller-owned NoiseStream.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rsopuf/bits.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/io.hpp"
#include "rsopuf/random.hpp"

namespace rsopuf {

using Challenge = BitString;
using ResponseWord = BitString;

/// Parity feature vector phi(C); the last entry is always 1.
struct FeatureVector {
  std::vector<double> phi;

  std::size_t size() const noexcept { return phi.size(); }
  double operator[](std::size_t i) const { return phi[i]; }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Delay parameters omega^1..omega^{n+1}.
struct DelayVector {
  std::vector<double> omega;

  std::size_t size() const noexcept { return omega.size(); }
  double operator[](std::size_t i) const { return omega[i]; }
  friend bool operator==(const DelayVector&, const DelayVector&) = default;
};

/// Response bit; value 1 <-> sign +1, value 0 <-> sign -1.
struct ResponseBit {
  std::uint8_t value = 0;

  int sign() const noexcept { return value ? 1 : -1; }
  static ResponseBit from_sign(int t) noexcept { return ResponseBit{static_cast<std::uint8_t>(t > 0 ? 1 : 0)}; }
  friend bool operator==(ResponseBit, ResponseBit) = default;
};

class PufInstance {
 public:
  PufInstance(DelayVector omega, double noise_sigma, Seed seed)
      : omega_(std::move(omega)), noise_sigma_(noise_sigma), seed_(seed) {
    require(omega_.size() >= 2, "PufInstance: need at least one stage");
    for (double w : omega_.omega) require(std::isfinite(w), "PufInstance: delay vector must be finite");
    require(std::isfinite(noise_sigma_) && noise_sigma_ >= 0.0, "PufInstance: noise_sigma must be >= 0");
  }

  std::size_t n() const noexcept { return omega_.size() - 1; }
  const DelayVector& omega() const noexcept { return omega_; }
  double noise_sigma() const noexcept { return noise_sigma_; }
  Seed seed() const noexcept { return seed_; }

  PufInstance with_noise_sigma(double sigma) const { return PufInstance(omega_, sigma, seed_); }

  /// Fresh noise stream for this instance. Each worker should own its own.
  NoiseStream noise_stream(std::uint64_t stream_index = 0) const {
    return NoiseStream(derive_seed(seed_, "puf.noise", stream_index));
  }

  friend bool operator==(const PufInstance& a, const PufInstance& b) {
    return a.omega_ == b.omega_ && a.noise_sigma_ == b.noise_sigma_ && a.seed_ == b.seed_;
  }

 private:
  DelayVector omega_;
  double noise_sigma_;
  Seed seed_;
};

inline FeatureVector feature_transform(const Challenge& c) {
  const std::size_t n = c.size();
  FeatureVector f{std::vector<double>(n + 1, 1.0)};
  for (std::size_t l = n; l-- > 0;) f.phi[l] = f.phi[l + 1] * (c[l] ? -1.0 : 1.0);
  return f;
}

/// Noise-free delay difference omega . phi(c).
inline double delta(const PufInstance& p, const Challenge& c) {
  require(c.size() == p.n(), "delta: challenge length does not match stage count");
  const auto& w = p.omega().omega;
  // Accumulate from the last stage so phi is built on the fly.
  double parity = 1.0;
  double sum = w[p.n()];
  for (std::size_t l = p.n(); l-- > 0;) {
    parity *= c[l] ? -1.0 : 1.0;
    sum += w[l] * parity;
  }
  return sum;
}

/// Delta = 0 resolves to +1.
inline ResponseBit response_from_delta(double d) noexcept { return ResponseBit::from_sign(d >= 0.0 ? 1 : -1); }

inline ResponseBit eval(const PufInstance& p, const Challenge& c) { return response_from_delta(delta(p, c)); }

inline ResponseBit eval(const PufInstance& p, const Challenge& c, NoiseStream& noise) {
  const double d = delta(p, c);
  if (p.noise_sigma() == 0.0) return response_from_delta(d);
  return response_from_delta(d + p.noise_sigma() * noise.standard_normal());
}

/// Evaluates n challenges into an n-bit word. A null stream means noise-free.
inline ResponseWord eval_response_word(const PufInstance& p, std::span<const Challenge> cs,
                                       NoiseStream* noise = nullptr) {
  require(cs.size() == p.n(), "eval_response_word: expected exactly n challenges");
  ResponseWord word(cs.size());
  for (std::size_t k = 0; k < cs.size(); ++k) {
    word.set(k, (noise ? eval(p, cs[k], *noise) : eval(p, cs[k])).value);
  }
  return word;
}

/// Composes omega from per-stage delay differences (uncrossed, crossed).
///
/// delta0[i] is top-minus-bottom delay of stage i+1 when uncrossed, delta1[i]
/// the same quantity when crossed (bottom->top minus top->bottom).
inline DelayVector compose_delay_vector(std::span<const double> delta0, std::span<const double> delta1) {
  require(delta0.size() == delta1.size() && !delta0.empty(), "compose_delay_vector: size mismatch");
  const std::size_t n = delta0.size();
  DelayVector w{std::vector<double>(n + 1)};
  w.omega[0] = 0.5 * (delta0[0] - delta1[0]);
  for (std::size_t i = 1; i < n; ++i) {
    w.omega[i] = 0.5 * (delta0[i - 1] + delta1[i - 1] + delta0[i] - delta1[i]);
  }
  w.omega[n] = 0.5 * (delta0[n - 1] + delta1[n - 1]);
  return w;
}

/// omega entries i.i.d. Normal(0, 1); noise-free until calibrated.
inline PufInstance sample_instance(std::size_t n, Seed seed) {
  require(n >= 1, "sample_instance: n must be >= 1");
  Rng rng = make_rng(derive_seed(seed, "puf.omega"));
  std::normal_distribution<double> normal(0.0, 1.0);
  DelayVector w{std::vector<double>(n + 1)};
  for (auto& x : w.omega) x = normal(rng);
  return PufInstance(std::move(w), 0.0, seed);
}

inline std::vector<Challenge> random_challenges(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<Challenge> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(BitString::random(rng, n));
  return out;
}

/// Probability that a noisy evaluation differs from the noise-free one, for a fixed delta.
inline double flip_probability(double delta_value, double sigma) {
  if (sigma == 0.0) return 0.0;
  // Exact zero flips whenever the noise is negative.
  if (delta_value == 0.0) return 0.5;
  return 0.5 * std::erfc(std::abs(delta_value) / (sigma * std::sqrt(2.0)));
}

/// Mean flip probability over a challenge sample.
inline double expected_flip_rate(const PufInstance& p, double sigma, std::span<const Challenge> challenges) {
  require(!challenges.empty(), "expected_flip_rate: empty challenge sample");
  double sum = 0.0;
  for (const auto& c : challenges) sum += flip_probability(delta(p, c), sigma);
  return sum / static_cast<double>(challenges.size());
}

struct CalibrationOptions {
  std::size_t sample_size = 20000;
  double rate_tolerance = 1e-5;
  int max_iterations = 200;
};

/// Finds the noise sigma whose expected per-bit flip rate (noisy vs noise-free)
/// over a seeded random challenge sample equals target_flip_rate.
inline double calibrate_noise(const PufInstance& p, double target_flip_rate, CalibrationOptions options = {}) {
  require(target_flip_rate >= 0.0 && target_flip_rate < 0.5, "calibrate_noise: target must lie in [0, 0.5)");
  if (target_flip_rate == 0.0) return 0.0;

  Rng rng = make_rng(derive_seed(p.seed(), "puf.calibrate"));
  const auto sample = random_challenges(rng, p.n(), options.sample_size);
  std::vector<double> deltas;
  deltas.reserve(sample.size());
  bool any_nonzero = false;
  for (const auto& c : sample) {
    deltas.push_back(delta(p, c));
    any_nonzero = any_nonzero || deltas.back() != 0.0;
  }
  if (!any_nonzero) throw CalibrationFailure("calibrate_noise: all delays are zero; flip rate is 0.5 for any noise");

  auto rate = [&](double sigma) {
    double sum = 0.0;
    for (double d : deltas) sum += flip_probability(d, sigma);
    return sum / static_cast<double>(deltas.size());
  };

  double lo = 0.0;
  double norm2 = 0.0;
  for (double w : p.omega().omega) norm2 += w * w;
  double hi = std::max(1.0, std::sqrt(norm2));
  int guard = 0;
  while (rate(hi) < target_flip_rate) {
    hi *= 2.0;
    if (++guard > 200) throw CalibrationFailure("calibrate_noise: target flip rate unreachable");
  }
  for (int it = 0; it < options.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rate(mid);
    if (std::abs(r - target_flip_rate) <= options.rate_tolerance) return mid;
    (r < target_flip_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Monte-Carlo flip rate: each challenge is evaluated `repetitions` times with noise
/// and compared with its noise-free response.
inline double measure_flip_rate(const PufInstance& p, std::span<const Challenge> challenges, std::size_t repetitions,
                                NoiseStream& noise) {
  require(!challenges.empty() && repetitions > 0, "measure_flip_rate: empty sample");
  std::size_t flips = 0;
  for (const auto& c : challenges) {
    const auto ref = eval(p, c);
    for (std::size_t r = 0; r < repetitions; ++r) flips += eval(p, c, noise) != ref;
  }
  return static_cast<double>(flips) / static_cast<double>(challenges.size() * repetitions);
}

// ---------------------------------------------------------------------------
// Text record: key=value lines. Doubles use the shortest round-trip form.

inline constexpr std::string_view kPufRecordFormat = "rsopuf-puf-instance/1";

/// A serialized instance plus free-form metadata lines (calibration target, measured rate, ...).
struct PufRecord {
  PufInstance instance;
  std::map<std::string, std::string> metadata;
};

inline std::string to_record(const PufInstance& p, const std::map<std::string, std::string>& metadata = {}) {
  std::ostringstream out;
  out << "format=" << kPufRecordFormat << '\n';
  out << "n=" << p.n() << '\n';
  out << "noise_sigma=" << format_double(p.noise_sigma()) << '\n';
  out << "seed=" << p.seed().value << '\n';
  out << "omega=";
  for (std::size_t i = 0; i < p.omega().size(); ++i) out << (i ? "," : "") << format_double(p.omega()[i]);
  out << '\n';
  for (const auto& [k, v] : metadata) out << k << '=' << v << '\n';
  return out.str();
}

inline PufRecord parse_record(std::string_view text) {
  std::map<std::string, std::string> fields;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("instance record: line without '=': " + line);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const char* key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError(std::string("instance record: missing field ") + key);
    std::string v = it->second;
    fields.erase(it);
    return v;
  };
  if (take("format") != kPufRecordFormat) throw ParseError("instance record: unsupported format");
  const auto n = parse_u64(take("n"));
  const double sigma = parse_double(take("noise_sigma"));
  const Seed seed{parse_u64(take("seed"))};
  DelayVector w;
  const std::string omega = take("omega");
  std::size_t start = 0;
  while (start <= omega.size()) {
    const auto comma = omega.find(',', start);
    const auto end = comma == std::string::npos ? omega.size() : comma;
    w.omega.push_back(parse_double(std::string_view(omega).substr(start, end - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (w.size() != n + 1) throw ParseError("instance record: omega length does not match n");
  return PufRecord{PufInstance(std::move(w), sigma, seed), std::move(fields)};
}

}  // namespace rsopuf

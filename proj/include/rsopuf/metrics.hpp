#pragma once

// Hamming-distance statistics and the binomial authentication-quality
// formulas (FAR, FRR, success probability, equal error rate).
//
// Binomial tails are evaluated in exact rational arithmetic. The caller's
// double probabilities are converted exactly (every finite double is a dyadic
// rational), so no cancellation happens at 1e-11 scales; conversion back to
// double happens only at the reporting boundary.

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include "json.hpp"

#include "rsopuf/bits.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/puf.hpp"

namespace rsopuf {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline std::size_t hd(const BitString& x, const BitString& y) {
  require(x.size() == y.size(), "hd: length mismatch");
  std::size_t d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d += x[i] != y[i];
  return d;
}

inline double fhd(const BitString& x, const BitString& y) {
  require(!x.empty(), "fhd: empty strings");
  return static_cast<double>(hd(x, y)) / static_cast<double>(x.size());
}

/// Mean FHD over all unordered pairs.
inline double mean_pairwise_hd(std::span<const BitString> set) {
  require(set.size() >= 2, "mean_pairwise_hd: need at least two strings");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = i + 1; j < set.size(); ++j, ++pairs) sum += fhd(set[i], set[j]);
  }
  return sum / static_cast<double>(pairs);
}

struct Uniqueness {
  /// Sum over u<v of FHD scaled by 2/(s(s+1)), as the uniqueness formula is usually printed.
  double printed_normalization = 0.0;
  /// Conventional mean over the s(s-1)/2 pairs. This is the value near 0.5 for ideal PUFs.
  double pairwise_mean = 0.0;
  std::size_t instances = 0;
};

inline Uniqueness uniqueness_from_responses(std::span<const BitString> responses) {
  const std::size_t s = responses.size();
  require(s >= 2, "uniqueness: need at least two instances");
  double sum = 0.0;
  for (std::size_t u = 0; u < s; ++u) {
    for (std::size_t v = u + 1; v < s; ++v) sum += fhd(responses[u], responses[v]);
  }
  const double sd = static_cast<double>(s);
  return Uniqueness{2.0 / (sd * (sd + 1.0)) * sum, 2.0 / (sd * (sd - 1.0)) * sum, s};
}

/// Responses of every instance to the same challenge list, compared pairwise.
inline Uniqueness uniqueness(std::span<const PufInstance> instances, std::span<const Challenge> challenges) {
  require(instances.size() >= 2, "uniqueness: need at least two instances");
  require(!challenges.empty(), "uniqueness: empty challenge set");
  std::vector<BitString> responses;
  responses.reserve(instances.size());
  for (const auto& p : instances) {
    BitString r(challenges.size());
    for (std::size_t k = 0; k < challenges.size(); ++k) r.set(k, eval(p, challenges[k]).value);
    responses.push_back(std::move(r));
  }
  return uniqueness_from_responses(responses);
}

struct HdStats {
  double inter_mean = 0.0;
  double intra_mean = 0.0;
  double p_inter = 0.0;
  double p_intra = 0.0;
  std::size_t inter_samples = 0;
  std::size_t intra_samples = 0;
};

struct HdStatsOptions {
  std::size_t words = 200;            // challenge words of n challenges each
  std::size_t repetitions = 5;        // noisy re-measurements per word (intra)
  std::size_t min_bit_samples = 10000;
};

/// Inter-HD across instance pairs (noise-free), intra-HD of noisy re-evaluations
/// against the noise-free reference word. Means are FHD; estimators are per-bit
/// disagreement probabilities pooled over all compared bits.
inline HdStats measure_hd_stats(std::span<const PufInstance> instances, Seed seed, HdStatsOptions options = {}) {
  require(instances.size() >= 2, "measure_hd_stats: need at least two instances");
  const std::size_t n = instances[0].n();
  for (const auto& p : instances) require(p.n() == n, "measure_hd_stats: stage counts differ");

  Rng rng = make_rng(derive_seed(seed, "metrics.hdstats"));
  std::size_t inter_bits = 0, inter_diff = 0, intra_bits = 0, intra_diff = 0;
  double inter_sum = 0.0, intra_sum = 0.0;
  std::size_t inter_words = 0, intra_words = 0;
  std::vector<NoiseStream> noise;
  noise.reserve(instances.size());
  for (std::size_t u = 0; u < instances.size(); ++u) noise.push_back(instances[u].noise_stream(u));

  for (std::size_t w = 0; w < options.words; ++w) {
    const auto cs = random_challenges(rng, n, n);
    std::vector<ResponseWord> ref;
    for (const auto& p : instances) ref.push_back(eval_response_word(p, cs));
    for (std::size_t u = 0; u < ref.size(); ++u) {
      for (std::size_t v = u + 1; v < ref.size(); ++v) {
        const auto d = hd(ref[u], ref[v]);
        inter_diff += d;
        inter_bits += n;
        inter_sum += static_cast<double>(d) / static_cast<double>(n);
        ++inter_words;
      }
      for (std::size_t r = 0; r < options.repetitions; ++r) {
        const auto d = hd(ref[u], eval_response_word(instances[u], cs, &noise[u]));
        intra_diff += d;
        intra_bits += n;
        intra_sum += static_cast<double>(d) / static_cast<double>(n);
        ++intra_words;
      }
    }
  }
  require(inter_bits >= options.min_bit_samples && intra_bits >= options.min_bit_samples,
          "measure_hd_stats: sample below declared minimum");
  return HdStats{inter_sum / static_cast<double>(inter_words), intra_sum / static_cast<double>(intra_words),
                 static_cast<double>(inter_diff) / static_cast<double>(inter_bits),
                 static_cast<double>(intra_diff) / static_cast<double>(intra_bits), inter_bits, intra_bits};
}

// ---------------------------------------------------------------------------
// Binomial tails

inline Rational exact_probability(double p) {
  require(std::isfinite(p) && p >= 0.0 && p <= 1.0, "probability must lie in [0, 1]");
  return Rational(p);
}

/// P(X <= k) for k = 0..n, X ~ Binomial(n, p), exact.
/// With p = a/D every term shares the denominator D^n, so the partial sums are
/// accumulated as integers and normalized once per entry.
inline std::vector<Rational> binomial_cdf_table(std::size_t n, const Rational& p) {
  require(p >= 0 && p <= 1, "binomial tail: probability out of range");
  const BigInt a = boost::multiprecision::numerator(p);
  const BigInt d = boost::multiprecision::denominator(p);
  const BigInt b = d - a;
  std::vector<BigInt> a_pow(n + 1), b_pow(n + 1);
  a_pow[0] = b_pow[0] = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    a_pow[i] = a_pow[i - 1] * a;
    b_pow[i] = b_pow[i - 1] * b;
  }
  BigInt d_n = 1;
  for (std::size_t i = 0; i < n; ++i) d_n *= d;
  std::vector<Rational> cdf(n + 1);
  BigInt sum = 0, coeff = 1;  // C(n,i) by C(n,i) = C(n,i-1) (n-i+1) / i
  for (std::size_t i = 0; i <= n; ++i) {
    if (i > 0) coeff = coeff * static_cast<unsigned long long>(n - i + 1) / static_cast<unsigned long long>(i);
    sum += coeff * a_pow[i] * b_pow[n - i];
    cdf[i] = Rational(sum, d_n);
  }
  return cdf;
}

inline Rational binomial_cdf_exact(std::size_t n, std::size_t k, const Rational& p) {
  require(k <= n, "binomial tail: n_tolerance exceeds n");
  return binomial_cdf_table(n, p)[k];
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

inline Rational far_exact(std::size_t n, std::size_t n_tolerance, double p_inter) {
  return binomial_cdf_exact(n, n_tolerance, exact_probability(p_inter));
}

/// Probability that an unrelated response lands within n_tolerance flips.
inline double far(std::size_t n, std::size_t n_tolerance, double p_inter) {
  return to_double(far_exact(n, n_tolerance, p_inter));
}

inline Rational p_suc_exact(std::size_t n, std::size_t n_tolerance, double p_intra) {
  return binomial_cdf_exact(n, n_tolerance, exact_probability(p_intra));
}

inline double p_suc(std::size_t n, std::size_t n_tolerance, double p_intra) {
  return to_double(p_suc_exact(n, n_tolerance, p_intra));
}

inline Rational frr_exact(std::size_t n, std::size_t n_tolerance, double p_intra) {
  return 1 - p_suc_exact(n, n_tolerance, p_intra);
}

inline double frr(std::size_t n, std::size_t n_tolerance, double p_intra) {
  return to_double(frr_exact(n, n_tolerance, p_intra));
}

/// How n_EER is chosen from the FAR/FRR curves.
enum class EerRule {
  /// argmin over n_tolerance of max(FAR, FRR); ties go to the smaller tolerance.
  MinMax,
  /// The tolerance on either side of the FAR/FRR crossing where the two rates are
  /// closest in ratio (|log FAR - log FRR|). This is the rule behind the published
  /// 32/64/128-bit performance table; it can differ from MinMax by one step.
  Crossing,
};

inline const char* to_string(EerRule rule) { return rule == EerRule::MinMax ? "minmax" : "crossing"; }

struct AuthQuality {
  std::size_t n = 0;
  std::size_t n_tolerance = 0;
  double far = 0.0;
  double frr = 0.0;
  std::size_t n_eer = 0;
  double eer = 0.0;
  EerRule rule = EerRule::MinMax;
};

inline AuthQuality eer_search(std::size_t n, double p_inter, double p_intra, EerRule rule = EerRule::MinMax) {
  require(n >= 1, "eer_search: n must be >= 1");
  const Rational pi = exact_probability(p_inter);
  const Rational pa = exact_probability(p_intra);
  std::vector<Rational> far_v(n + 1), frr_v(n + 1);
  const auto far_cdf = binomial_cdf_table(n, pi);
  const auto intra_cdf = binomial_cdf_table(n, pa);
  for (std::size_t t = 0; t <= n; ++t) {
    far_v[t] = far_cdf[t];
    frr_v[t] = 1 - intra_cdf[t];
  }
  std::size_t best = 0;
  if (rule == EerRule::MinMax) {
    Rational best_max = std::max(far_v[0], frr_v[0]);
    for (std::size_t t = 1; t <= n; ++t) {
      const Rational m = std::max(far_v[t], frr_v[t]);
      if (m < best_max) best_max = m, best = t;
    }
  } else {
    std::size_t cross = 0;
    while (cross < n && far_v[cross] < frr_v[cross]) ++cross;
    best = cross;
    if (cross > 0) {
      auto log_gap = [&](std::size_t t) {
        const double a = to_double(far_v[t]), b = to_double(frr_v[t]);
        if (a <= 0.0 || b <= 0.0) return std::numeric_limits<double>::infinity();
        return std::abs(std::log(a) - std::log(b));
      };
      if (log_gap(cross - 1) <= log_gap(cross)) best = cross - 1;
    }
  }
  AuthQuality q;
  q.n = n;
  q.n_tolerance = best;
  q.far = to_double(far_v[best]);
  q.frr = to_double(frr_v[best]);
  q.n_eer = best;
  q.eer = std::max(q.far, q.frr);
  q.rule = rule;
  return q;
}

// ---------------------------------------------------------------------------
// Performance-table rows

struct AuthStatsRow {
  std::string row;
  double p_inter = 0.0;
  double p_intra = 0.0;
  AuthQuality quality;
};

inline std::string auth_stats_csv_header() { return "row,p_inter,p_intra,n,n_EER,FAR,FRR,EER,rule"; }

inline std::string to_csv(const AuthStatsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%s,%zu,%zu,%.6e,%.6e,%.6e,%s", r.row.c_str(),
                format_double(r.p_inter).c_str(), format_double(r.p_intra).c_str(), r.quality.n, r.quality.n_eer,
                r.quality.far, r.quality.frr, r.quality.eer, to_string(r.quality.rule));
  return buf;
}

inline nlohmann::json to_json(const AuthStatsRow& r) {
  return nlohmann::json{{"row", r.row},        {"p_inter", r.p_inter},   {"p_intra", r.p_intra},
                        {"n", r.quality.n},    {"n_EER", r.quality.n_eer}, {"FAR", r.quality.far},
                        {"FRR", r.quality.frr}, {"EER", r.quality.eer},  {"rule", to_string(r.quality.rule)}};
}

}  // namespace rsopuf

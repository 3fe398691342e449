#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsopuf/bits.hpp"
#include "rsopuf/errors.hpp"
#include "rsopuf/io.hpp"
#include "rsopuf/puf.hpp"
#include "rsopuf/random.hpp"
#include "rsopuf/rso.hpp"

namespace rsopuf::attacks {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Provenance { Raw, Rso };

inline const char* to_string(Provenance p) { return p == Provenance::Raw ? "raw" : "rso"; }

inline Provenance parse_provenance(std::string_view s) {
  if (s == "raw") return Provenance::Raw;
  if (s == "rso") return Provenance::Rso;
  throw ParseError("unknown provenance '" + std::string(s) + "'");
}

struct CrpRecord {
  Challenge challenge;
  std::uint8_t response = 0;
  friend bool operator==(const CrpRecord&, const CrpRecord&) = default;
};

struct CrpDataset {
  std::size_t n = 0;
  std::vector<CrpRecord> records;
  Provenance provenance = Provenance::Raw;
  Seed seed{};

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
};

/// Disjoint index sets covering the dataset.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  Seed shuffle_seed{};
};

/// Shuffled 70/20/10 train/validation/test split.
inline Split split_dataset(std::size_t size, Seed seed, double train_fraction = 0.7, double validation_fraction = 0.2) {
  require(train_fraction > 0.0 && validation_fraction >= 0.0 && train_fraction + validation_fraction <= 1.0,
          "split_dataset: invalid fractions");
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(derive_seed(seed, "attacks.split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(size)));
  const auto n_val = std::min(size - n_train,
                              static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(size))));
  Split s;
  s.shuffle_seed = seed;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

struct HarvestOptions {
  bool noisy = true;
  bool unique_challenges = false;
};

/// Uniform random challenges answered by the PUF (noisy by default).
inline CrpDataset harvest_raw(const PufInstance& p, std::size_t count, Seed seed, HarvestOptions options = {}) {
  require(!options.unique_challenges || p.n() >= 63 || count <= (std::size_t{1} << p.n()),
          "harvest_raw: more unique challenges requested than exist");
  CrpDataset ds{p.n(), {}, Provenance::Raw, seed};
  ds.records.reserve(count);
  Rng rng = make_rng(derive_seed(seed, "attacks.harvest"));
  NoiseStream noise(derive_seed(seed, "attacks.harvest.noise"));
  std::set<BitString> seen;
  while (ds.records.size() < count) {
    auto c = BitString::random(rng, p.n());
    if (options.unique_challenges && !seen.insert(c).second) continue;
    const auto r = options.noisy ? eval(p, c, noise) : eval(p, c);
    ds.records.push_back({std::move(c), r.value});
  }
  return ds;
}

/// Adversary view of obfuscated exchanges: issued challenge C[k] paired with
/// obfuscated response bit R_hat[k]. Key indices and C' are discarded.
inline CrpDataset harvest_rso(std::span<const ObfuscatedExchange> exchanges, Seed seed = {}) {
  CrpDataset ds;
  ds.provenance = Provenance::Rso;
  ds.seed = seed;
  if (exchanges.empty()) return ds;
  ds.n = exchanges.front().c.size();
  ds.records.reserve(exchanges.size() * ds.n);
  for (const auto& ex : exchanges) {
    if (ex.c.size() != ds.n || ex.r_hat.size() != ds.n) throw ParseError("harvest_rso: malformed exchange");
    for (std::size_t k = 0; k < ds.n; ++k) {
      if (ex.c[k].size() != ds.n) throw ParseError("harvest_rso: malformed challenge");
      ds.records.push_back({ex.c[k], ex.r_hat[k]});
    }
  }
  return ds;
}

/// Feature matrix (rows = phi of selected records) in scalar type S.
template <class S = double>
Mat<S> feature_matrix(const CrpDataset& ds, std::span<const std::size_t> rows) {
  Mat<S> X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.n + 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = ds.records[rows[r]].challenge;
    S parity = 1;
    X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(ds.n)) = 1;
    for (std::size_t l = ds.n; l-- > 0;) {
      parity *= c[l] ? S(-1) : S(1);
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) = parity;
    }
  }
  return X;
}

template <class S = double>
Mat<S> feature_matrix(const CrpDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return feature_matrix<S>(ds, all);
}

/// Response labels as signs; value 1 maps to +1, value 0 to -1.
template <class S = double>
Vec<S> sign_labels(const CrpDataset& ds, std::span<const std::size_t> rows) {
  Vec<S> t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) t(static_cast<Eigen::Index>(r)) = ds.records[rows[r]].response ? 1 : -1;
  return t;
}

template <class S = double>
Vec<S> sign_labels(const CrpDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return sign_labels<S>(ds, all);
}

// Dataset file: "n=<n> provenance=<raw|rso> seed=<s>", optional '#' lines,
// then "<challenge bits> <response bit>" per record.

inline std::string write_dataset(const CrpDataset& ds, const std::string& comment = {}) {
  std::string out;
  out.reserve(ds.size() * (ds.n + 3) + 64);
  out += "n=" + std::to_string(ds.n) + " provenance=" + to_string(ds.provenance) +
         " seed=" + std::to_string(ds.seed.value) + '\n';
  if (!comment.empty()) out += "# " + comment + '\n';
  for (const auto& r : ds.records) {
    out += r.challenge.to_string();
    out += ' ';
    out += static_cast<char>('0' + r.response);
    out += '\n';
  }
  return out;
}

inline CrpDataset parse_dataset(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset: missing header");
  auto fields = parse_header_fields(line);
  if (!fields.count("n") || !fields.count("provenance") || !fields.count("seed")) {
    throw ParseError("dataset: header must carry n, provenance and seed");
  }
  CrpDataset ds;
  ds.n = parse_u64(fields["n"]);
  ds.provenance = parse_provenance(fields["provenance"]);
  ds.seed = Seed{parse_u64(fields["seed"])};
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp != ds.n || line.size() != ds.n + 2) {
      throw ParseError("dataset: malformed record '" + line + "'");
    }
    const char r = line[sp + 1];
    if (r != '0' && r != '1') throw ParseError("dataset: response must be 0 or 1");
    ds.records.push_back({BitString::from_string(std::string_view(line).substr(0, sp)),
                          static_cast<std::uint8_t>(r - '0')});
  }
  return ds;
}

}  // namespace rsopuf::attacks

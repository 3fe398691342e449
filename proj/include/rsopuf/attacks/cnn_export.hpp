#pragma once

// Path-indicator tensors for external CNN tooling.
//
// Stages are read right to left. Row X holds, per stage input i, which arbiter
// input (+1 -> a_1, -1 -> a_-1) the top signal ends up on after the remaining
// stages i+1..n, so X_n = +1 always; Y = -X is the partner signal. The 4 x n
// extension appends the path the top signal is on when it enters stage i
// (U_i = parity of crossings in stages i..n) and its partner L = -U, so every
// column carries both the pre- and post-stage routing of the pair.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "rsopuf/attacks/dataset.hpp"
#include "rsopuf/bits.hpp"

namespace rsopuf::attacks {

struct PathTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> values;  // row-major

  int at(std::size_t r, std::size_t c) const { return values.at(r * cols + c); }
};

inline PathTensor transform_challenge(const Challenge& c) {
  const std::size_t n = c.size();
  PathTensor t{2, n, std::vector<int>(2 * n)};
  int parity = 1;
  for (std::size_t i = n; i-- > 0;) {
    t.values[i] = parity;
    t.values[n + i] = -parity;
    parity *= c[i] ? -1 : 1;
  }
  return t;
}

inline PathTensor extend_challenge(const Challenge& c) {
  const std::size_t n = c.size();
  const PathTensor base = transform_challenge(c);
  PathTensor t{4, n, std::vector<int>(4 * n)};
  std::copy(base.values.begin(), base.values.end(), t.values.begin());
  for (std::size_t i = 0; i < n; ++i) {
    const int u = base.at(0, i) * (c[i] ? -1 : 1);
    t.values[2 * n + i] = u;
    t.values[3 * n + i] = -u;
  }
  return t;
}

// File: "cnn n=<n> rows=<2|4> samples=<count>", then per CRP a line
// "response=<bit>" followed by `rows` lines of space-separated +-1 values.
inline std::string export_cnn_tensor(const CrpDataset& ds, bool extended = true) {
  const std::size_t rows = extended ? 4 : 2;
  std::string out = "cnn n=" + std::to_string(ds.n) + " rows=" + std::to_string(rows) +
                    " samples=" + std::to_string(ds.size()) + '\n';
  for (const auto& rec : ds.records) {
    const PathTensor t = extended ? extend_challenge(rec.challenge) : transform_challenge(rec.challenge);
    out += "response=";
    out += static_cast<char>('0' + rec.response);
    out += '\n';
    for (std::size_t r = 0; r < t.rows; ++r) {
      for (std::size_t c = 0; c < t.cols; ++c) {
        if (c) out += ' ';
        out += t.at(r, c) > 0 ? "1" : "-1";
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace rsopuf::attacks

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsopuf/errors.hpp"
#include "rsopuf/random.hpp"

namespace rsopuf {

/// Fixed-length string of binary values. Index 0 is the first (leftmost) bit.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::size_t length, std::uint8_t fill = 0) : bits_(length, fill ? 1 : 0) {}
  BitString(std::initializer_list<int> values) {
    bits_.reserve(values.size());
    for (int v : values) {
      require(v == 0 || v == 1, "BitString: values must be 0 or 1");
      bits_.push_back(static_cast<std::uint8_t>(v));
    }
  }

  /// Parses a string of '0'/'1' characters.
  static BitString from_string(std::string_view text) {
    BitString out;
    out.bits_.reserve(text.size());
    for (char ch : text) {
      if (ch != '0' && ch != '1') throw ParseError("BitString: invalid character in '" + std::string(text) + "'");
      out.bits_.push_back(static_cast<std::uint8_t>(ch - '0'));
    }
    return out;
  }

  /// Parses big-endian hex (first bit = MSB of first digit); trailing pad bits must be zero.
  static BitString from_hex(std::string_view hex, std::size_t length) {
    if (hex.size() != (length + 3) / 4) throw ParseError("BitString: hex length does not match bit length");
    BitString out(length);
    for (std::size_t d = 0; d < hex.size(); ++d) {
      const char ch = hex[d];
      int nibble;
      if (ch >= '0' && ch <= '9') nibble = ch - '0';
      else if (ch >= 'a' && ch <= 'f') nibble = ch - 'a' + 10;
      else if (ch >= 'A' && ch <= 'F') nibble = ch - 'A' + 10;
      else throw ParseError("BitString: invalid hex digit");
      for (int b = 0; b < 4; ++b) {
        const std::size_t pos = d * 4 + static_cast<std::size_t>(b);
        const std::uint8_t bit = static_cast<std::uint8_t>((nibble >> (3 - b)) & 1);
        if (pos < length) out.bits_[pos] = bit;
        else if (bit) throw ParseError("BitString: non-zero hex padding");
      }
    }
    return out;
  }

  static BitString random(Rng& rng, std::size_t length) {
    BitString out(length);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < length; ++i) {
      if (i % 64 == 0) word = rng();
      out.bits_[i] = static_cast<std::uint8_t>(word & 1u);
      word >>= 1;
    }
    return out;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  bool empty() const noexcept { return bits_.empty(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, std::uint8_t v) { bits_[i] = v ? 1 : 0; }
  void flip(std::size_t i) { bits_[i] ^= 1u; }
  std::span<const std::uint8_t> values() const noexcept { return bits_; }

  std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  BitString slice(std::size_t begin, std::size_t length) const {
    require(begin + length <= size(), "BitString::slice out of range");
    BitString out;
    out.bits_.assign(bits_.begin() + static_cast<std::ptrdiff_t>(begin),
                     bits_.begin() + static_cast<std::ptrdiff_t>(begin + length));
    return out;
  }

  BitString operator~() const {
    BitString out = *this;
    for (auto& b : out.bits_) b ^= 1u;
    return out;
  }

  BitString& operator^=(const BitString& other) {
    require(other.size() == size(), "BitString xor: length mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] ^= other.bits_[i];
    return *this;
  }

  friend BitString operator^(BitString lhs, const BitString& rhs) { return lhs ^= rhs; }
  friend bool operator==(const BitString&, const BitString&) = default;
  friend auto operator<=>(const BitString&, const BitString&) = default;

  std::string to_string() const {
    std::string out(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = static_cast<char>('0' + bits_[i]);
    return out;
  }

  std::string to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out((bits_.size() + 3) / 4, '0');
    for (std::size_t d = 0; d < out.size(); ++d) {
      int nibble = 0;
      for (int b = 0; b < 4; ++b) {
        const std::size_t pos = d * 4 + static_cast<std::size_t>(b);
        nibble = (nibble << 1) | (pos < bits_.size() ? bits_[pos] : 0);
      }
      out[d] = digits[nibble];
    }
    return out;
  }

 private:
  std::vector<std::uint8_t> bits_;
};

inline BitString concat(const BitString& a, const BitString& b) {
  BitString out(a.size() + b.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) out.set(a.size() + i, b[i]);
  return out;
}

}  // namespace rsopuf

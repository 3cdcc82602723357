#pragma once

#include <cmath>
#include <cstdint>

namespace momex {

/// Philox4x32-10 counter-based generator. A (key, counter) pair maps to four
/// 32-bit words; streams keyed by (seed, stream) are independent and a draw
/// at a given counter value never depends on scheduling, so parallel
/// simulations are reproducible bit-for-bit at any thread count.
class Philox {
public:
  Philox(std::uint64_t seed, std::uint64_t stream)
      : key0_(static_cast<std::uint32_t>(seed)),
        key1_(static_cast<std::uint32_t>(seed >> 32)),
        ctr2_(static_cast<std::uint32_t>(stream)),
        ctr3_(static_cast<std::uint32_t>(stream >> 32)) {}

  /// Uniform double in (0, 1), never exactly 0 or 1.
  double uniform() {
    refill_if_needed();
    std::uint64_t hi = buf_[pos_];
    std::uint64_t lo = buf_[pos_ + 1];
    pos_ += 2;
    std::uint64_t u = (hi << 32) | lo;
    return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586477 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

private:
  static std::uint32_t mulhi(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::uint32_t>(
        (static_cast<std::uint64_t>(a) * b) >> 32);
  }
  static std::uint32_t mullo(std::uint32_t a, std::uint32_t b) {
    return a * b;
  }

  void refill_if_needed() {
    if (pos_ < 4) return;
    std::uint32_t c0 = static_cast<std::uint32_t>(block_);
    std::uint32_t c1 = static_cast<std::uint32_t>(block_ >> 32);
    std::uint32_t c2 = ctr2_, c3 = ctr3_;
    std::uint32_t k0 = key0_, k1 = key1_;
    for (int round = 0; round < 10; round++) {
      std::uint32_t hi0 = mulhi(0xD2511F53u, c0), lo0 = mullo(0xD2511F53u, c0);
      std::uint32_t hi1 = mulhi(0xCD9E8D57u, c2), lo1 = mullo(0xCD9E8D57u, c2);
      std::uint32_t n0 = hi1 ^ c1 ^ k0;
      std::uint32_t n1 = lo1;
      std::uint32_t n2 = hi0 ^ c3 ^ k1;
      std::uint32_t n3 = lo0;
      c0 = n0; c1 = n1; c2 = n2; c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    buf_[0] = c0; buf_[1] = c1; buf_[2] = c2; buf_[3] = c3;
    block_++;
    pos_ = 0;
  }

  std::uint32_t key0_, key1_;
  std::uint32_t ctr2_, ctr3_;
  std::uint64_t block_ = 0;
  std::uint32_t buf_[4] = {0, 0, 0, 0};
  unsigned pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace momex

// Counter-based random number generation (Philox4x32-10) with explicit,
// splittable streams. Every stochastic routine in this library takes an Rng
// (or derives one from a key), which makes runs reproducible bit-for-bit for
// a fixed seed, independent of evaluation order or worker count.
//
// Distributions are pinned algorithms (Box-Muller, Marsaglia-Tsang) rather
// than std:: distributions, whose outputs are implementation-defined.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace rrfb {

// SplitMix64 finalizer; used to mix seeds and stream ids into Philox keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : master_(mix64(mix64(seed) ^ mix64(~stream))) {
    key_[0] = static_cast<std::uint32_t>(master_);
    key_[1] = static_cast<std::uint32_t>(master_ >> 32);
    ctr_[0] = ctr_[1] = ctr_[2] = ctr_[3] = 0;
  }

  // Independent derived stream; deterministic function of (this stream, id).
  Rng split(std::uint64_t id) const {
    return Rng(master_, 0x5851F42D4C957F2DULL ^ id);
  }

  std::uint64_t next_u64() {
    if (pos_ >= 4) refill();
    std::uint64_t lo = buf_[pos_], hi = buf_[pos_ + 1];
    pos_ += 2;
    return lo | (hi << 32);
  }

  std::uint32_t next_u32() {
    if (pos_ >= 4) refill();
    return buf_[pos_++];
  }

  // Uniform on the open interval (0, 1); safe for log().
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Gamma(shape, 1), shape > 0. Marsaglia-Tsang squeeze for shape >= 1;
  // boost via Gamma(shape+1) * U^{1/shape} below 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      double u = uniform01();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

 private:
  void refill() {
    std::uint32_t c0 = ctr_[0], c1 = ctr_[1], c2 = ctr_[2], c3 = ctr_[3];
    std::uint32_t k0 = key_[0], k1 = key_[1];
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ULL * c0;
      std::uint64_t p1 = 0xCD9E8D57ULL * c2;
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      c0 = hi1 ^ c1 ^ k0;
      c1 = lo1;
      c2 = hi0 ^ c3 ^ k1;
      c3 = lo0;
      k0 += 0x9E3779B9U;
      k1 += 0xBB67AE85U;
    }
    buf_[0] = c0;
    buf_[1] = c1;
    buf_[2] = c2;
    buf_[3] = c3;
    pos_ = 0;
    if (++ctr_[0] == 0 && ++ctr_[1] == 0 && ++ctr_[2] == 0) ++ctr_[3];
  }

  std::uint64_t master_;
  std::uint32_t key_[2];
  std::uint32_t ctr_[4];
  std::uint32_t buf_[4];
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rrfb

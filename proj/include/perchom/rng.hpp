#pragma once

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function
// of (seed, stream id, counter), so any point of the sample space can be
// regenerated independently: per-cell point clouds, per-sample experiment
// streams, and local resampling all key off the same seed without coupling.

#include <array>
#include <cmath>
#include <cstdint>

namespace perchom {

namespace philox {

constexpr uint32_t MUL_A = 0xD2511F53u;
constexpr uint32_t MUL_B = 0xCD9E8D57u;
constexpr uint32_t WEYL_A = 0x9E3779B9u;
constexpr uint32_t WEYL_B = 0xBB67AE85u;

using Ctr = std::array<uint32_t, 4>;
using Key = std::array<uint32_t, 2>;

inline Ctr block(Ctr c, Key k) {
  for (int round = 0; round < 10; ++round) {
    if (round != 0) {
      k[0] += WEYL_A;
      k[1] += WEYL_B;
    }
    const uint64_t pa = uint64_t(MUL_A) * c[0];
    const uint64_t pb = uint64_t(MUL_B) * c[2];
    c = {uint32_t(pb >> 32) ^ c[1] ^ k[0], uint32_t(pb),
         uint32_t(pa >> 32) ^ c[3] ^ k[1], uint32_t(pa)};
  }
  return c;
}

}  // namespace philox

// Stream purposes; occupy the top byte of the counter so substreams with
// different purposes can never collide.
enum class StreamId : uint32_t {
  cloud = 1,       // Poisson points, keyed per unit cell
  experiment = 2,  // per-sample experiment draws (directions, offsets, ...)
  test = 3,        // unit-test scratch streams
};

// Sequential view of one keyed substream. (seed, id, hi, lo) select the
// substream; draws then advance a 24-bit block counter (each block yields
// four 32-bit words, plenty for any single substream used here).
class Stream {
 public:
  Stream(uint64_t seed, StreamId id, uint32_t hi, uint64_t lo)
      : key_{uint32_t(seed), uint32_t(seed >> 32)},
        base_{uint32_t(lo), uint32_t(lo >> 32), hi, uint32_t(id) << 24} {}

  uint32_t next_u32() {
    if (have_ == 0) refill();
    return buf_[--have_];
  }

  uint64_t next_u64() {
    const uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform on (0,1); never returns an endpoint, so logs are safe.
  double unit() { return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * unit(); }

  // Knuth product method; fine for the small per-cell intensities used here.
  uint32_t poisson(double lambda) {
    const double limit = std::exp(-lambda);
    uint32_t n = 0;
    double prod = unit();
    while (prod > limit) {
      ++n;
      prod *= unit();
    }
    return n;
  }

  double normal() {
    const double r = std::sqrt(-2.0 * std::log(unit()));
    return r * std::cos(6.283185307179586476925286766559 * unit());
  }

 private:
  void refill() {
    philox::Ctr c = base_;
    c[3] |= block_;
    block_ = (block_ + 1) & 0x00FFFFFFu;
    buf_ = philox::block(c, key_);
    have_ = 4;
  }

  philox::Key key_;
  philox::Ctr base_;
  uint32_t block_ = 0;
  int have_ = 0;
  philox::Ctr buf_{};
};

}  // namespace perchom

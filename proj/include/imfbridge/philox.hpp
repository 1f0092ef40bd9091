#pragma once

#include <array>
#include <cstdint>

namespace imfb {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Independent stream of uniforms and standard normals for one
/// (seed, particle, domain) triple. Draws are a pure function of the triple
/// and the draw index.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t particle, std::uint32_t domain) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        particle_(particle),
        domain_(domain) {}

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    if (pos_ == 4) refill();
    return (static_cast<double>(buf_[pos_++]) + 0.5) * 0x1p-32;
  }

  double normal() noexcept;

 private:
  void refill() noexcept {
    buf_ = Philox4x32::block({block_++, static_cast<std::uint32_t>(particle_),
                              static_cast<std::uint32_t>(particle_ >> 32), domain_},
                             key_);
    pos_ = 0;
  }

  Philox4x32::Key key_;
  std::uint64_t particle_;
  std::uint32_t domain_;
  std::uint32_t block_ = 0;
  Philox4x32::Counter buf_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace imfb

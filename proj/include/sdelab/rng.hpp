#pragma once

#include <array>
#include <cstdint>

namespace sdelab {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// Stream derivation: the 64-bit Philox key is SplitMix64(master_seed ^
// SplitMix64(channel)); the 128-bit counter is (block index, stream_id).
// A stream is therefore a pure function of (master_seed, stream_id, channel)
// and never depends on how paths are distributed over workers.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key);
};

std::uint64_t splitmix64(std::uint64_t x);

struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
};

// Channels separate independent noise sources attached to one sample path.
// Driver d of a model reads channel d.
namespace channel {
inline constexpr std::uint32_t kDriver0 = 0;
inline constexpr std::uint32_t kRefine = 64;  // bridge subdivision of increments
inline constexpr std::uint32_t kBridge = 65;  // crossing tests between nodes
inline constexpr std::uint32_t kAux = 66;     // anything else a procedure needs
}  // namespace channel

// Value-like generator state. Copyable, movable, no shared state.
//
// Gaussian sampling is Box-Muller on 53-bit uniforms in (0,1); each call to
// normal() is one draw (the second Box-Muller variate is cached). Bit-level
// output is only stable within one build; cross-platform comparisons use
// statistical tolerances.
class Stream {
 public:
  Stream() = default;
  Stream(SeedSpec seed, std::uint32_t channel);

  std::uint64_t next_u64();
  // Uniform in the open interval (0,1).
  double uniform();
  double normal();

  std::uint64_t blocks_consumed() const { return block_; }

 private:
  void refill();

  Philox4x32::Key key_{};
  std::uint64_t stream_id_ = 0;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int buffered_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

Stream derive_stream(SeedSpec seed, std::uint32_t channel = channel::kDriver0);

}  // namespace sdelab

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace storyboard {

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive combination of seed components into one 64-bit seed.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull);
std::uint64_t fnv1a(std::span<const float> values, std::uint64_t h = 1469598103934665603ull);

// mt19937_64 with platform-independent conversions to uniform and normal
// variates (std distributions are implementation-defined).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace storyboard

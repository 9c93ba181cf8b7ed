#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

namespace cmrl {

using Rng = std::mt19937_64;

// Seed for stream `name` derived from a root seed. Streams are independent of
// each other, so adding a consumer never perturbs existing ones.
std::uint64_t stream_seed(std::uint64_t root, std::string_view name);
inline Rng make_stream(std::uint64_t root, std::string_view name) {
  return Rng(stream_seed(root, name));
}

// Uniform double in [0, 1) using the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline int uniform_int(Rng& rng, int n) {
  return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

// The named streams of one training run.
struct RngStreams {
  Rng env;
  Rng init;
  Rng action;
  Rng derangement;

  static RngStreams from_seed(std::uint64_t seed);
  std::map<std::string, std::string> serialize() const;
  static RngStreams deserialize(const std::map<std::string, std::string>& state);
};

}  // namespace cmrl

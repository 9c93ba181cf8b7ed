#include "cmrl/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace cmrl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(splitmix64(root) ^ fnv1a(name));
}

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& text) {
  std::istringstream is(text);
  Rng rng;
  is >> rng;
  if (!is) throw std::runtime_error("corrupt rng state");
  return rng;
}

RngStreams RngStreams::from_seed(std::uint64_t seed) {
  return {make_stream(seed, "env"), make_stream(seed, "init"), make_stream(seed, "action-sampling"),
          make_stream(seed, "derangement")};
}

std::map<std::string, std::string> RngStreams::serialize() const {
  return {{"env", serialize_rng(env)},
          {"init", serialize_rng(init)},
          {"action-sampling", serialize_rng(action)},
          {"derangement", serialize_rng(derangement)}};
}

RngStreams RngStreams::deserialize(const std::map<std::string, std::string>& state) {
  auto get = [&](const char* k) {
    auto it = state.find(k);
    if (it == state.end()) throw std::runtime_error(std::string("missing rng stream: ") + k);
    return deserialize_rng(it->second);
  };
  return {get("env"), get("init"), get("action-sampling"), get("derangement")};
}

}  // namespace cmrl

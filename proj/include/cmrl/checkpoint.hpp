#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "cmrl/nn.hpp"

namespace cmrl {

inline constexpr int kCheckpointFormat = 1;

// A checkpoint directory holds manifest.json (format version, environment
// fingerprint, update, rng states, resolved config, tensor table) and
// params.bin, a flat little-endian float64 blob of values then Adam moments.
struct Checkpoint {
  int format_version = kCheckpointFormat;
  std::string env_fingerprint;
  std::int64_t update = 0;
  std::map<std::string, std::string> rng;
  std::string config;
  nn::ParamStore params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

// Throws if the files are missing or corrupt, or when expected_fingerprint
// is non-empty and differs from the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::string& expected_fingerprint = {});

}  // namespace cmrl

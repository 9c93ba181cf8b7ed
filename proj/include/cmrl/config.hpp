#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cmrl/trainer.hpp"

namespace cmrl::cli {

// Flat "section.key = value" document; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
KeyValues read_config_file(const std::filesystem::path& path);

// Applies "key=value". Short aliases: lr, seed.
void apply_override(KeyValues& kv, const std::string& assignment);

struct ExperimentConfig {
  trainer::TrainConfig train;
  std::vector<double> sweep_lr;
  std::vector<double> sweep_lambda;
  std::vector<std::uint64_t> sweep_seeds;
  std::string out_dir = "runs";
};

// Strict: unknown keys and malformed values are errors naming the key.
// Unset keys take defaults that depend on env.kind and agent.kind.
ExperimentConfig resolve_config(const KeyValues& kv);

// Every key with its resolved value, one per line in a fixed order. The
// output parses back to the same configuration.
std::string render_config(const ExperimentConfig& cfg);

std::vector<std::string> known_keys();

}  // namespace cmrl::cli

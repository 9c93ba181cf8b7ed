#include "cmrl/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cmrl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
            << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("short write to " + p.string());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = ckpt.format_version;
  manifest["env_fingerprint"] = ckpt.env_fingerprint;
  manifest["update"] = ckpt.update;
  manifest["adam_step"] = ckpt.params.step_count();
  json rng = json::object();
  for (const auto& [name, state] : ckpt.rng) rng[name] = state;
  manifest["rng"] = rng;
  manifest["config"] = ckpt.config;

  std::string blob;
  blob.reserve(ckpt.params.scalar_count() * 3 * 8);
  json table = json::array();
  auto emit = [&](const std::string& name, const nn::Tensor& t) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    for (double v : t.data()) put_f64(blob, v);
  };
  for (const auto& e : ckpt.params.entries()) emit(e.name, e.value);
  for (const auto& e : ckpt.params.entries()) emit("adam_m/" + e.name, e.adam_m);
  for (const auto& e : ckpt.params.entries()) emit("adam_v/" + e.name, e.adam_v);
  manifest["tensors"] = table;

  write_file(dir / "params.bin", blob);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir, const std::string& expected_fingerprint) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  const std::string blob = read_file(dir / "params.bin");
  Checkpoint ckpt;
  ckpt.format_version = manifest.at("format_version").get<int>();
  if (ckpt.format_version != kCheckpointFormat) {
    throw std::runtime_error("unsupported checkpoint format " + std::to_string(ckpt.format_version));
  }
  ckpt.env_fingerprint = manifest.at("env_fingerprint").get<std::string>();
  if (!expected_fingerprint.empty() && expected_fingerprint != ckpt.env_fingerprint) {
    throw std::runtime_error("checkpoint " + dir.string() + " was trained on '" +
                             ckpt.env_fingerprint + "', expected '" + expected_fingerprint + "'");
  }
  ckpt.update = manifest.at("update").get<std::int64_t>();
  for (const auto& [name, state] : manifest.at("rng").items()) {
    ckpt.rng[name] = state.get<std::string>();
  }
  ckpt.config = manifest.at("config").get<std::string>();

  auto read_tensor = [&](const json& entry) {
    const nn::Shape shape = entry.at("shape").get<nn::Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    nn::Tensor t(shape);
    if (offset + t.size() * 8 > blob.size()) {
      throw std::runtime_error("checkpoint blob too short for " + entry.at("name").get<std::string>());
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(blob, offset + 8 * i);
    return t;
  };
  const json& table = manifest.at("tensors");
  if (table.size() % 3 != 0) throw std::runtime_error("checkpoint tensor table is malformed");
  const std::size_t n = table.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    ckpt.params.add(table[i].at("name").get<std::string>(), read_tensor(table[i]));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = ckpt.params.entries()[i];
    const json& m = table[n + i];
    const json& v = table[2 * n + i];
    if (m.at("name").get<std::string>() != "adam_m/" + e.name ||
        v.at("name").get<std::string>() != "adam_v/" + e.name) {
      throw std::runtime_error("checkpoint Adam moments out of order for " + e.name);
    }
    e.adam_m = read_tensor(m);
    e.adam_v = read_tensor(v);
    if (e.adam_m.shape() != e.value.shape() || e.adam_v.shape() != e.value.shape()) {
      throw std::runtime_error("checkpoint Adam moment shape mismatch for " + e.name);
    }
  }
  ckpt.params.set_step_count(manifest.at("adam_step").get<std::int64_t>());
  return ckpt;
}

}  // namespace cmrl

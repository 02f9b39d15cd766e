#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "histcode/errors.hpp"
#include "histcode/hash.hpp"

namespace histcode {

/// FNV-1a over the raw bytes of a file, as a fixed-width hex string.
inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path);
  Fnv64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(h.digest()));
  return std::string(out);
}

/// Throws with the missing path named; every stage gates on its upstream
/// artifacts through this.
inline void require_artifact(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw MissingUpstreamArtifact("missing upstream artifact: " + path);
}

/// What produced the contents of one stage directory. Stored as
/// provenance.json next to the outputs; a rerun whose stage, config hash,
/// seed and input hashes all match an intact record is skipped.
struct Provenance {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::vector<std::string> outputs;           // paths, relative to the dir

  bool operator==(const Provenance&) const = default;
};

inline std::string provenance_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "provenance.json").string();
}

inline void write_provenance(const std::string& dir, const Provenance& p) {
  nlohmann::json j;
  j["stage"] = p.stage;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  j["inputs"] = p.inputs;
  j["outputs"] = p.outputs;
  std::ofstream out(provenance_path(dir), std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing provenance in " + dir);
}

inline bool load_provenance(const std::string& dir, Provenance* p) {
  std::ifstream in(provenance_path(dir), std::ios::binary);
  if (!in) return false;
  nlohmann::json j;
  try {
    in >> j;
    p->stage = j.at("stage").get<std::string>();
    p->config_hash = j.at("config_hash").get<std::string>();
    p->seed = j.at("seed").get<std::uint64_t>();
    p->inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    p->outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    return false;  // treat a mangled record as absent; the stage reruns
  }
  return true;
}

/// True when `dir` already holds this stage's outputs for exactly these
/// inputs: record matches and every listed output file is still present.
inline bool stage_is_current(const std::string& dir, const Provenance& want) {
  Provenance have;
  if (!load_provenance(dir, &have)) return false;
  if (have.stage != want.stage || have.config_hash != want.config_hash ||
      have.seed != want.seed || have.inputs != want.inputs)
    return false;
  for (const std::string& rel : have.outputs)
    if (!std::filesystem::exists(std::filesystem::path(dir) / rel))
      return false;
  return true;
}

}  // namespace histcode

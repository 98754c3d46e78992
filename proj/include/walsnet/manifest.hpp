// Reproducibility record written by every command: config snapshot, seeds,
// input digests, artifact version. Plus the flat key=value config format
// that flags can override.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "walsnet/common.hpp"

namespace walsnet {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::string artifact_version = kArtifactVersion;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> input_digests;  // path -> fnv1a64 hex
};

inline std::string fnv_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
  out.close();
  if (!out) throw ConfigError("cannot write file: " + path);
}

inline std::string digest_file(const std::string& path) {
  return fnv_hex(fnv1a64(read_file(path)));
}

inline std::string render_manifest(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["artifact_version"] = m.artifact_version;
  j["seed"] = m.seed;
  j["threads"] = m.threads;
  j["config"] = m.config;
  j["input_digests"] = m.input_digests;
  return j.dump(2) + "\n";
}

inline void write_manifest(const RunManifest& m, const std::string& dir) {
  write_file(dir + "/run_manifest.json", render_manifest(m));
}

// Flat `key = value` lines; '#' starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_kv_config(const std::string& text,
                                                          const std::string& file = "<config>") {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) throw ParseError(file, lineno, "expected `key = value`");
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty()) throw ParseError(file, lineno, "empty key");
    out[key] = value;
  }
  return out;
}

}  // namespace walsnet

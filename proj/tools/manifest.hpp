#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace brnlab::cli {

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Record of one command invocation, written atomically when the command completes.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::vector<std::filesystem::path> inputs;   // files or directories
  std::vector<std::filesystem::path> outputs;  // files or directories

  /// Checksums every input and output (recursively for directories) and writes the manifest.
  void write(const std::filesystem::path& path) const;
};

/// Sidecar manifest path for a file output: "report.json" -> "report.manifest.json".
std::filesystem::path sidecar_manifest(const std::filesystem::path& output);

}  // namespace brnlab::cli

#include "manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "brnlab/data_model.hpp"

namespace brnlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string() + " for checksumming");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 initialisation failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char digits[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += digits[md[i] >> 4];
    hex += digits[md[i] & 0xF];
  }
  return hex;
}

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json checksums(const fs::path& p, const fs::path& skip) {
  json out = json::array();
  if (fs::is_regular_file(p)) {
    out.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  } else if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && fs::weakly_canonical(e.path()) != skip) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.push_back({{"path", (p / f.lexically_relative(p)).generic_string()}, {"sha256", sha256_file(f)}});
    }
  }
  return out;
}

}  // namespace

void RunManifest::write(const fs::path& path) const {
  // The manifest may live inside an output directory; never checksum itself.
  const fs::path self = fs::weakly_canonical(path);
  auto collect = [&](const std::vector<fs::path>& paths) {
    json all = json::array();
    for (const auto& p : paths) {
      for (auto& entry : checksums(p, self)) all.push_back(std::move(entry));
    }
    return all;
  };
  json j = {{"tool", "brnlab"},
            {"command", command},
            {"argv", argv},
            {"config", config},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"timestamp", utc_timestamp()},
            {"inputs", collect(inputs)},
            {"outputs", collect(outputs)}};
  write_text_atomic(path, j.dump(2) + "\n");
}

fs::path sidecar_manifest(const fs::path& output) {
  fs::path p = output;
  return p.replace_extension().string() + ".manifest.json";
}

}  // namespace brnlab::cli

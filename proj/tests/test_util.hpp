#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "brnlab/autograd.hpp"
#include "brnlab/model.hpp"

namespace brnlab::testing {

inline Tensor<double> random_tensor(std::size_t s, std::size_t t, std::size_t c, std::mt19937_64& rng,
                                    double scale = 1.0) {
  Tensor<double> x(s, t, c);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : x.data) v = n(rng);
  return x;
}

/// Adds noise to every parameter so that biases are non-zero and no unit is
/// exactly at a ReLU kink.
inline void jitter(ParameterSet<double>& params, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < params.count(); ++i) {
    for (auto& v : params[i].values) v += n(rng);
  }
}

inline FeatureSequence random_sequence(const std::string& id, std::size_t length, std::size_t dim,
                                       std::mt19937_64& rng, double scale = 1.0) {
  FeatureSequence seq{id, length, dim, {}};
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < length * dim; ++i) seq.values.push_back(static_cast<float>(n(rng)));
  return seq;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("brnlab_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Tiny model shape used by gradient checks: S=2, T=16 (input 32), D=4, K=2.
inline ModelConfig tiny_model_config() {
  ModelConfig c = ModelConfig::desk(3, 2);
  c.backbone.hidden_dim = 4;
  c.backbone.num_levels = 2;
  c.input_length = 32;
  return c;
}

}  // namespace brnlab::testing

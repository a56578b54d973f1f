#pragma once

#include <random>

#include "permweld/align.hpp"
#include "permweld/data.hpp"
#include "permweld/nnet.hpp"

namespace testing {

inline permweld::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, float lo = -1.0f,
                                      float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  permweld::Matrix m(rows, cols);
  for (float& v : m.values()) v = u(rng);
  return m;
}

inline std::vector<permweld::Label> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<permweld::Label> y(n);
  for (auto& v : y) v = static_cast<permweld::Label>(u(rng));
  return y;
}

inline permweld::Dataset random_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed,
                                        const std::string& name = "rand") {
  std::mt19937_64 rng(seed);
  permweld::Dataset d;
  d.name = name;
  d.features = random_matrix(n, dim, rng, 0.0f, 1.0f);
  d.labels = random_labels(n, classes, rng);
  d.num_classes = classes;
  return d;
}

inline permweld::Permutation random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return permweld::Permutation(std::move(p));
}

inline permweld::PermutationSet random_permutation_set(const permweld::MlpSpec& spec, std::mt19937_64& rng) {
  permweld::PermutationSet pi;
  for (std::size_t k = 1; k + 1 < spec.layer_sizes.size(); ++k) {
    pi.layers.push_back(random_permutation(spec.layer_sizes[k], rng));
  }
  return pi;
}

inline permweld::MlpSpec spec_of(std::vector<std::size_t> sizes, bool bias = true) {
  permweld::MlpSpec s;
  s.layer_sizes = std::move(sizes);
  s.use_bias = bias;
  return s;
}

inline permweld::DatasetPtr share(permweld::Dataset d) {
  return std::make_shared<const permweld::Dataset>(std::move(d));
}

}  // namespace testing

#include <filesystem>
#include <fstream>

namespace testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("permweld-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing

#pragma once

#include "multisub/bundle.hpp"
#include "multisub/errors.hpp"
#include "multisub/rng.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

namespace multisub::testing {

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Mat random_unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return random_matrix(rows, cols, rng).rowwise().normalized();
}

// Kind of the multisub::Error thrown by f, or "" if nothing was thrown.
template <typename F>
std::string error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return "";
}

template <typename F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("multisub_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small valid bundle with every optional part present, float-exact values.
inline EmbeddingBundle small_bundle(std::size_t n, std::size_t K, std::size_t d_raw, std::size_t d_joint,
                                    std::size_t d_token, std::uint64_t seed) {
  Rng rng(seed);
  auto f = [](const Mat& m) { return multisub::round_to_float(m); };
  EmbeddingBundle b;
  Manifest& m = b.manifest;
  m.n = n;
  m.K = K;
  m.d_raw = d_raw;
  m.d_joint = d_joint;
  m.d_token = d_token;
  m.concept_name = "color";
  m.prompt_template = "a fruit with the color of *";
  for (std::size_t k = 0; k < K; ++k) m.reference_words.push_back("word" + std::to_string(k));
  b.raw_features = f(random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_raw), rng));
  b.projection_init = f(random_matrix(static_cast<Eigen::Index>(d_joint), static_cast<Eigen::Index>(d_raw), rng, 0.5));
  b.ref_token = f(random_matrix(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d_token), rng));
  b.ref_prompt = f(random_unit_rows(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d_joint), rng));
  b.ref_word_text = f(random_unit_rows(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d_joint), rng));
  return b;
}

}  // namespace multisub::testing

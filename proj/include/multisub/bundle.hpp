#pragma once

#include "multisub/matrix.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace multisub {

inline constexpr int kBundleVersion = 1;

struct ClassPromptsRef {
  std::string file;
  std::size_t rows = 0;
};

/// Contents of manifest.json. File names are relative to the bundle directory.
struct Manifest {
  int version = kBundleVersion;
  std::size_t n = 0;
  std::size_t d_raw = 0;
  std::size_t d_joint = 0;
  std::size_t d_token = 0;
  std::size_t K = 0;
  std::string concept_name;
  std::string prompt_template;
  std::vector<std::string> reference_words;

  std::string raw_features_file = "raw_features.f32";
  std::optional<std::string> projection_init_file;
  std::string ref_token_file = "ref_token.f32";
  std::string ref_prompt_file = "ref_prompt.f32";
  std::optional<std::string> ref_word_text_file;
  std::map<std::string, std::string> ground_truth_files;
  std::map<std::string, ClassPromptsRef> class_prompt_files;
};

/// An immutable, validated dataset: raw vision features plus the
/// reference-word bases for one user concept.
struct EmbeddingBundle {
  Manifest manifest;
  Mat raw_features;                    // n x d_raw
  std::optional<Mat> projection_init;  // d_joint x d_raw
  Mat ref_token;                       // K x d_token
  Mat ref_prompt;                      // K x d_joint, unit rows
  std::optional<Mat> ref_word_text;    // K x d_joint, unit rows
  std::map<std::string, Labels> ground_truth;
  // Per-clustering prompt for every ground-truth class (C x d_joint, unit rows).
  std::map<std::string, Mat> class_prompts;
};

inline constexpr double kTextNormTolerance = 1e-4;

/// Checks every manifest and bundle invariant; throws ValidationError
/// naming the offending file or field.
void validate(const EmbeddingBundle& bundle);

EmbeddingBundle load_bundle(const std::filesystem::path& dir);

/// Writes manifest.json and all payloads. The manifest's optional file
/// entries are rewritten to match which optional matrices are present.
void save_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& dir);

// Headerless little-endian payload I/O.
Mat read_f32(const std::filesystem::path& file, std::size_t rows, std::size_t cols);
void write_f32(const Mat& m, const std::filesystem::path& file);
Labels read_u32(const std::filesystem::path& file, std::optional<std::size_t> expected_len = {});
void write_u32(const Labels& labels, const std::filesystem::path& file);

}  // namespace multisub

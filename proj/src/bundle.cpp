#include "multisub/bundle.hpp"

#include "multisub/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace multisub {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr bool kLittleEndian = std::endian::native == std::endian::little;

template <typename T>
T from_le(T v) {
  if constexpr (!kLittleEndian) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
T to_le(T v) { return from_le(v); }

std::vector<char> read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("missing_file", "cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& file, const char* data, std::size_t size) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("unwritable_path", "cannot write " + file.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw ValidationError("unwritable_path", "failed writing " + file.string());
}

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  throw ValidationError("manifest_schema", "manifest.json: field '" + field + "' " + what);
}

const json& require(const json& j, const std::string& field) {
  auto it = j.find(field);
  if (it == j.end()) schema_error(field, "is missing");
  return *it;
}

std::size_t require_dim(const json& j, const std::string& field, std::size_t min) {
  const json& v = require(j, field);
  if (!v.is_number_unsigned()) schema_error(field, "must be a non-negative integer");
  const auto x = v.get<std::size_t>();
  if (x < min) schema_error(field, "must be >= " + std::to_string(min));
  return x;
}

std::string require_string(const json& j, const std::string& field) {
  const json& v = require(j, field);
  if (!v.is_string()) schema_error(field, "must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const std::string& field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) schema_error(field, "must be a string");
  return it->get<std::string>();
}

Manifest parse_manifest(const json& j) {
  if (!j.is_object()) schema_error("<root>", "must be an object");
  Manifest m;
  const json& version = require(j, "version");
  if (!version.is_number_integer()) schema_error("version", "must be an integer");
  m.version = version.get<int>();
  if (m.version != kBundleVersion) schema_error("version", "unsupported value " + std::to_string(m.version));
  m.n = require_dim(j, "n", 2);
  m.d_raw = require_dim(j, "d_raw", 1);
  m.d_joint = require_dim(j, "d_joint", 1);
  m.d_token = require_dim(j, "d_token", 1);
  m.K = require_dim(j, "K", 2);
  m.concept_name = require_string(j, "concept");
  m.prompt_template = require_string(j, "prompt_template");

  const json& words = require(j, "reference_words");
  if (!words.is_array()) schema_error("reference_words", "must be an array of strings");
  for (const auto& w : words) {
    if (!w.is_string()) schema_error("reference_words", "must be an array of strings");
    m.reference_words.push_back(w.get<std::string>());
  }

  const json& files = require(j, "files");
  if (!files.is_object()) schema_error("files", "must be an object");
  m.raw_features_file = require_string(files, "raw_features");
  m.projection_init_file = optional_string(files, "projection_init");
  m.ref_token_file = require_string(files, "ref_token");
  m.ref_prompt_file = require_string(files, "ref_prompt");
  m.ref_word_text_file = optional_string(files, "ref_word_text");

  if (auto it = j.find("ground_truth"); it != j.end()) {
    if (!it->is_object()) schema_error("ground_truth", "must be an object of name -> file");
    for (const auto& [name, file] : it->items()) {
      if (!file.is_string()) schema_error("ground_truth." + name, "must be a string");
      m.ground_truth_files[name] = file.get<std::string>();
    }
  }
  if (auto it = j.find("class_prompts"); it != j.end()) {
    if (!it->is_object()) schema_error("class_prompts", "must be an object");
    for (const auto& [name, entry] : it->items()) {
      if (!entry.is_object()) schema_error("class_prompts." + name, "must be an object");
      ClassPromptsRef ref;
      ref.file = require_string(entry, "file");
      ref.rows = require_dim(entry, "rows", 1);
      m.class_prompt_files[name] = ref;
    }
  }
  return m;
}

json manifest_to_json(const Manifest& m) {
  json files = {{"raw_features", m.raw_features_file},
                {"ref_token", m.ref_token_file},
                {"ref_prompt", m.ref_prompt_file}};
  if (m.projection_init_file) files["projection_init"] = *m.projection_init_file;
  if (m.ref_word_text_file) files["ref_word_text"] = *m.ref_word_text_file;
  json j = {{"version", m.version},
            {"n", m.n},
            {"d_raw", m.d_raw},
            {"d_joint", m.d_joint},
            {"d_token", m.d_token},
            {"K", m.K},
            {"concept", m.concept_name},
            {"prompt_template", m.prompt_template},
            {"reference_words", m.reference_words},
            {"files", files}};
  if (!m.ground_truth_files.empty()) j["ground_truth"] = m.ground_truth_files;
  if (!m.class_prompt_files.empty()) {
    json cp = json::object();
    for (const auto& [name, ref] : m.class_prompt_files) cp[name] = {{"file", ref.file}, {"rows", ref.rows}};
    j["class_prompts"] = cp;
  }
  return j;
}

void check_shape(const Mat& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
    throw ValidationError("shape_mismatch", os.str());
  }
}

void check_finite(const Mat& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        throw ValidationError("non_finite", what + ": non-finite value at row " + std::to_string(i) +
                                                ", col " + std::to_string(j));
      }
    }
  }
}

void check_unit_rows(const Mat& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (std::abs(norm - 1.0) > kTextNormTolerance) {
      throw ValidationError("not_normalized", what + ": row " + std::to_string(i) + " has norm " +
                                                  std::to_string(norm) + ", expected unit norm");
    }
  }
}

}  // namespace

Mat read_f32(const fs::path& file, std::size_t rows, std::size_t cols) {
  const std::vector<char> bytes = read_file(file);
  const std::size_t expected = rows * cols * sizeof(float);
  if (bytes.size() != expected) {
    throw ValidationError("byte_length", file.filename().string() + ": byte length " +
                                             std::to_string(bytes.size()) + " != " + std::to_string(rows) +
                                             "x" + std::to_string(cols) + "x4 = " + std::to_string(expected));
  }
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + (i * cols + j) * sizeof(float), sizeof(bits));
      const float v = std::bit_cast<float>(from_le(bits));
      if (!std::isfinite(v)) {
        throw ValidationError("non_finite", file.filename().string() + ": non-finite value at row " +
                                                std::to_string(i) + ", col " + std::to_string(j));
      }
      m(i, j) = v;
    }
  }
  return m;
}

void write_f32(const Mat& m, const fs::path& file) {
  std::vector<char> bytes(static_cast<std::size_t>(m.size()) * sizeof(float));
  std::size_t offset = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
      std::memcpy(bytes.data() + offset, &bits, sizeof(bits));
      offset += sizeof(bits);
    }
  }
  write_file(file, bytes.data(), bytes.size());
}

Labels read_u32(const fs::path& file, std::optional<std::size_t> expected_len) {
  const std::vector<char> bytes = read_file(file);
  if (bytes.size() % sizeof(std::uint32_t) != 0 ||
      (expected_len && bytes.size() != *expected_len * sizeof(std::uint32_t))) {
    std::string want = expected_len ? std::to_string(*expected_len * 4) : "a multiple of 4";
    throw ValidationError("byte_length", file.filename().string() + ": byte length " +
                                             std::to_string(bytes.size()) + ", expected " + want);
  }
  Labels labels(bytes.size() / sizeof(std::uint32_t));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + i * sizeof(v), sizeof(v));
    labels[i] = from_le(v);
  }
  return labels;
}

void write_u32(const Labels& labels, const fs::path& file) {
  std::vector<char> bytes(labels.size() * sizeof(std::uint32_t));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = to_le(labels[i]);
    std::memcpy(bytes.data() + i * sizeof(v), &v, sizeof(v));
  }
  write_file(file, bytes.data(), bytes.size());
}

void validate(const EmbeddingBundle& b) {
  const Manifest& m = b.manifest;
  if (m.version != kBundleVersion) schema_error("version", "unsupported value");
  if (m.n < 2) schema_error("n", "must be >= 2");
  if (m.K < 2) schema_error("K", "must be >= 2");
  if (m.d_raw < 1) schema_error("d_raw", "must be >= 1");
  if (m.d_joint < 1) schema_error("d_joint", "must be >= 1");
  if (m.d_token < 1) schema_error("d_token", "must be >= 1");
  if (std::count(m.prompt_template.begin(), m.prompt_template.end(), '*') != 1) {
    schema_error("prompt_template", "must contain exactly one '*'");
  }
  if (m.reference_words.size() != m.K) {
    schema_error("reference_words", "has " + std::to_string(m.reference_words.size()) + " entries, K = " +
                                        std::to_string(m.K));
  }

  check_shape(b.raw_features, m.n, m.d_raw, m.raw_features_file);
  check_finite(b.raw_features, m.raw_features_file);
  if (b.projection_init) {
    check_shape(*b.projection_init, m.d_joint, m.d_raw, "projection_init");
    check_finite(*b.projection_init, "projection_init");
  }
  check_shape(b.ref_token, m.K, m.d_token, m.ref_token_file);
  check_finite(b.ref_token, m.ref_token_file);
  check_shape(b.ref_prompt, m.K, m.d_joint, m.ref_prompt_file);
  check_finite(b.ref_prompt, m.ref_prompt_file);
  check_unit_rows(b.ref_prompt, m.ref_prompt_file);
  if (b.ref_word_text) {
    check_shape(*b.ref_word_text, m.K, m.d_joint, "ref_word_text");
    check_finite(*b.ref_word_text, "ref_word_text");
    check_unit_rows(*b.ref_word_text, "ref_word_text");
  }
  for (const auto& [name, labels] : b.ground_truth) {
    if (labels.size() != m.n) {
      throw ValidationError("shape_mismatch", "ground_truth." + name + ": length " + std::to_string(labels.size()) +
                                                  " != n = " + std::to_string(m.n));
    }
  }
  for (const auto& [name, prompts] : b.class_prompts) {
    const std::string what = "class_prompts." + name;
    if (!b.ground_truth.contains(name)) {
      throw ValidationError("manifest_schema", what + ": no ground truth with that name");
    }
    check_shape(prompts, static_cast<std::size_t>(prompts.rows()), m.d_joint, what);
    check_finite(prompts, what);
    check_unit_rows(prompts, what);
    const auto& labels = b.ground_truth.at(name);
    const auto max_label = *std::max_element(labels.begin(), labels.end());
    if (max_label >= prompts.rows()) {
      throw ValidationError("shape_mismatch", what + ": label " + std::to_string(max_label) +
                                                  " has no prompt row");
    }
  }
}

EmbeddingBundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const std::vector<char> text = read_file(manifest_path);
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError("manifest_schema", "manifest.json: " + std::string(e.what()));
  }

  EmbeddingBundle b;
  b.manifest = parse_manifest(j);
  const Manifest& m = b.manifest;
  b.raw_features = read_f32(dir / m.raw_features_file, m.n, m.d_raw);
  if (m.projection_init_file) b.projection_init = read_f32(dir / *m.projection_init_file, m.d_joint, m.d_raw);
  b.ref_token = read_f32(dir / m.ref_token_file, m.K, m.d_token);
  b.ref_prompt = read_f32(dir / m.ref_prompt_file, m.K, m.d_joint);
  if (m.ref_word_text_file) b.ref_word_text = read_f32(dir / *m.ref_word_text_file, m.K, m.d_joint);
  for (const auto& [name, file] : m.ground_truth_files) b.ground_truth[name] = read_u32(dir / file, m.n);
  for (const auto& [name, ref] : m.class_prompt_files) {
    b.class_prompts[name] = read_f32(dir / ref.file, ref.rows, m.d_joint);
  }
  validate(b);
  return b;
}

void save_bundle(const EmbeddingBundle& bundle, const fs::path& dir) {
  validate(bundle);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("unwritable_path", "cannot create " + dir.string() + ": " + ec.message());

  Manifest m = bundle.manifest;
  if (bundle.projection_init && !m.projection_init_file) m.projection_init_file = "projection_init.f32";
  if (!bundle.projection_init) m.projection_init_file.reset();
  if (bundle.ref_word_text && !m.ref_word_text_file) m.ref_word_text_file = "ref_word_text.f32";
  if (!bundle.ref_word_text) m.ref_word_text_file.reset();
  m.ground_truth_files.clear();
  for (const auto& [name, labels] : bundle.ground_truth) {
    auto it = bundle.manifest.ground_truth_files.find(name);
    m.ground_truth_files[name] = it != bundle.manifest.ground_truth_files.end() ? it->second : "gt_" + name + ".u32";
  }
  m.class_prompt_files.clear();
  for (const auto& [name, prompts] : bundle.class_prompts) {
    auto it = bundle.manifest.class_prompt_files.find(name);
    const std::string file = it != bundle.manifest.class_prompt_files.end() ? it->second.file
                                                                             : "class_prompts_" + name + ".f32";
    m.class_prompt_files[name] = {file, static_cast<std::size_t>(prompts.rows())};
  }

  write_f32(bundle.raw_features, dir / m.raw_features_file);
  if (bundle.projection_init) write_f32(*bundle.projection_init, dir / *m.projection_init_file);
  write_f32(bundle.ref_token, dir / m.ref_token_file);
  write_f32(bundle.ref_prompt, dir / m.ref_prompt_file);
  if (bundle.ref_word_text) write_f32(*bundle.ref_word_text, dir / *m.ref_word_text_file);
  for (const auto& [name, labels] : bundle.ground_truth) write_u32(labels, dir / m.ground_truth_files.at(name));
  for (const auto& [name, prompts] : bundle.class_prompts) {
    write_f32(prompts, dir / m.class_prompt_files.at(name).file);
  }

  const std::string text = manifest_to_json(m).dump(2) + "\n";
  write_file(dir / "manifest.json", text.data(), text.size());
}

}  // namespace multisub

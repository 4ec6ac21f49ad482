#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "multisub/bundle.hpp"
#include "multisub/errors.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstring>
#include <limits>

using namespace multisub;
using multisub::testing::TempDir;
using multisub::testing::error_kind;
using multisub::testing::error_message;
using multisub::testing::read_bytes;
using multisub::testing::small_bundle;
namespace fs = std::filesystem;

namespace {

EmbeddingBundle minimal_bundle() {
  EmbeddingBundle b;
  b.manifest.n = 2;
  b.manifest.K = 2;
  b.manifest.d_raw = b.manifest.d_joint = b.manifest.d_token = 2;
  b.manifest.concept_name = "color";
  b.manifest.prompt_template = "a fruit with the color of *";
  b.manifest.reference_words = {"red", "green"};
  b.raw_features = Mat::Identity(2, 2);
  b.ref_token = Mat::Identity(2, 2);
  b.ref_prompt = Mat::Identity(2, 2);
  return b;
}

void write_raw(const fs::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST_CASE("minimal bundle saves, loads and validates") {
  TempDir dir("minimal");
  save_bundle(minimal_bundle(), dir.path());
  const EmbeddingBundle b = load_bundle(dir.path());
  CHECK(b.manifest.n == 2);
  CHECK(b.raw_features == Mat::Identity(2, 2));
  CHECK_FALSE(b.ref_word_text.has_value());
  CHECK_FALSE(b.projection_init.has_value());
}

TEST_CASE("hand-written bundle in the external format is accepted") {
  // What an exporter in another language produces: JSON text plus raw
  // little-endian binary32 / uint32 payloads.
  TempDir dir("external");
  write_raw(dir.path() / "manifest.json", R"({
    "version": 1, "n": 3, "d_raw": 2, "d_joint": 2, "d_token": 3, "K": 2,
    "concept": "color", "prompt_template": "a fruit with the color of *",
    "reference_words": ["red", "green"],
    "files": {"raw_features": "u.f32", "projection_init": "w0.f32", "ref_token": "z.f32",
              "ref_prompt": "t.f32", "ref_word_text": "s.f32"},
    "ground_truth": {"color": "color.u32"}
  })");
  auto floats = [](std::initializer_list<float> v) {
    std::string s(v.size() * 4, '\0');
    std::size_t i = 0;
    for (float x : v) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      for (int b = 0; b < 4; ++b) s[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      ++i;
    }
    return s;
  };
  write_raw(dir.path() / "u.f32", floats({1, 2, 3, 4, 5, 6}));
  write_raw(dir.path() / "w0.f32", floats({1, 0, 0, 1}));
  write_raw(dir.path() / "z.f32", floats({0.5f, -1, 2, 0, 1, 0}));
  write_raw(dir.path() / "t.f32", floats({1, 0, 0, 1}));
  write_raw(dir.path() / "s.f32", floats({0.6f, 0.8f, 0.8f, -0.6f}));
  write_raw(dir.path() / "color.u32", std::string("\x01\0\0\0\0\0\0\0\x01\0\0\0", 12));

  const EmbeddingBundle b = load_bundle(dir.path());
  CHECK(b.raw_features(1, 0) == 3.0);
  CHECK(b.raw_features(2, 1) == 6.0);
  CHECK(b.ref_token(0, 2) == 2.0);
  CHECK(b.ref_word_text->row(0).norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b.ground_truth.at("color") == Labels{1, 0, 1});
}

TEST_CASE("short payload is reported with the file name") {
  TempDir dir("short");
  save_bundle(minimal_bundle(), dir.path());
  const fs::path raw = dir.path() / "raw_features.f32";
  std::string bytes = read_bytes(raw);
  bytes.resize(bytes.size() - 4);
  write_raw(raw, bytes);
  CHECK(error_kind([&] { load_bundle(dir.path()); }) == "byte_length");
  CHECK(error_message([&] { load_bundle(dir.path()); }).find("raw_features.f32") != std::string::npos);
}

TEST_CASE("missing payload file") {
  TempDir dir("missing");
  save_bundle(minimal_bundle(), dir.path());
  fs::remove(dir.path() / "ref_prompt.f32");
  CHECK(error_kind([&] { load_bundle(dir.path()); }) == "missing_file");
  CHECK(error_message([&] { load_bundle(dir.path()); }).find("ref_prompt.f32") != std::string::npos);
}

TEST_CASE("non-finite payload is rejected on load") {
  TempDir dir("nan");
  save_bundle(minimal_bundle(), dir.path());
  const fs::path z = dir.path() / "ref_token.f32";
  std::string bytes = read_bytes(z);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 4, &nan, 4);
  write_raw(z, bytes);
  CHECK(error_kind([&] { load_bundle(dir.path()); }) == "non_finite");
}

TEST_CASE("manifest schema violations name the field") {
  TempDir dir("schema");
  save_bundle(minimal_bundle(), dir.path());
  const fs::path manifest = dir.path() / "manifest.json";
  const std::string good = read_bytes(manifest);

  SUBCASE("two placeholders") {
    std::string bad = good;
    bad.replace(bad.find("color of *"), 10, "color * of *");
    write_raw(manifest, bad);
    CHECK(error_message([&] { load_bundle(dir.path()); }).find("prompt_template") != std::string::npos);
  }
  SUBCASE("K below two") {
    std::string bad = good;
    bad.replace(bad.find("\"K\": 2"), 6, "\"K\": 1");
    write_raw(manifest, bad);
    CHECK(error_message([&] { load_bundle(dir.path()); }).find("'K'") != std::string::npos);
  }
  SUBCASE("missing field") {
    std::string bad = good;
    bad.replace(bad.find("\"concept\""), 9, "\"concpt\"");
    write_raw(manifest, bad);
    CHECK(error_message([&] { load_bundle(dir.path()); }).find("'concept'") != std::string::npos);
  }
  SUBCASE("not json") {
    write_raw(manifest, "{ nope");
    CHECK(error_kind([&] { load_bundle(dir.path()); }) == "manifest_schema");
  }
}

TEST_CASE("text matrices must be unit norm") {
  EmbeddingBundle b = minimal_bundle();
  b.ref_prompt(1, 1) = 1.01;
  TempDir dir("norm");
  CHECK(error_kind([&] { save_bundle(b, dir.path()); }) == "not_normalized");
}

TEST_CASE("save refuses non-finite values") {
  EmbeddingBundle b = minimal_bundle();
  b.ref_token(0, 1) = std::numeric_limits<double>::quiet_NaN();
  TempDir dir("savenan");
  CHECK(error_kind([&] { save_bundle(b, dir.path()); }) == "non_finite");
  CHECK_FALSE(fs::exists(dir.path() / "manifest.json"));
}

TEST_CASE("unwritable output path") {
  TempDir dir("unwritable");
  write_raw(dir.path() / "file", "x");
  CHECK(error_kind([&] { save_bundle(minimal_bundle(), dir.path() / "file" / "sub"); }) == "unwritable_path");
}

TEST_CASE("round trip is bit exact for every payload") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EmbeddingBundle b = small_bundle(7, 3, 5, 4, 6, seed);
    b.ground_truth["color"] = {0, 1, 2, 0, 1, 2, 0};
    b.ground_truth["shape"] = {1, 1, 0, 0, 1, 1, 0};
    Rng rng(seed + 100);
    b.class_prompts["color"] =
        multisub::round_to_float(multisub::testing::random_unit_rows(3, 4, rng));

    TempDir first("rt1"), second("rt2");
    save_bundle(b, first.path());
    const EmbeddingBundle loaded = load_bundle(first.path());
    CHECK((loaded.raw_features == b.raw_features));
    CHECK(*loaded.projection_init == *b.projection_init);
    CHECK((loaded.ref_token == b.ref_token));
    CHECK(loaded.ref_prompt == b.ref_prompt);
    CHECK(*loaded.ref_word_text == *b.ref_word_text);
    CHECK(loaded.ground_truth == b.ground_truth);
    CHECK(loaded.class_prompts.at("color") == b.class_prompts.at("color"));
    CHECK(loaded.manifest.reference_words == b.manifest.reference_words);

    save_bundle(loaded, second.path());
    for (const auto& entry : fs::directory_iterator(first.path())) {
      const auto name = entry.path().filename();
      CHECK_MESSAGE(read_bytes(entry.path()) == read_bytes(second.path() / name), name.string());
    }
  }
}

TEST_CASE("payload layout is row-major little-endian binary32") {
  TempDir dir("layout");
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_f32(m, dir.path() / "m.f32");
  const std::string bytes = read_bytes(dir.path() / "m.f32");
  REQUIRE(bytes.size() == 24);
  float second;
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  std::memcpy(&second, &bits, 4);
  CHECK(second == 2.0f);
  CHECK(read_f32(dir.path() / "m.f32", 3, 2)(0, 1) == 2.0);  // reinterpreting shape keeps flat order
}

TEST_CASE("label files") {
  TempDir dir("labels");
  write_u32({3, 0, 70000}, dir.path() / "l.u32");
  CHECK(read_u32(dir.path() / "l.u32") == Labels{3, 0, 70000});
  CHECK(error_kind([&] { read_u32(dir.path() / "l.u32", 4); }) == "byte_length");
  write_raw(dir.path() / "odd.u32", "abcde");
  CHECK(error_kind([&] { read_u32(dir.path() / "odd.u32"); }) == "byte_length");
}

TEST_CASE("ground truth with the wrong length is rejected") {
  EmbeddingBundle b = minimal_bundle();
  b.ground_truth["color"] = {0, 1, 1};
  CHECK(error_kind([&] { validate(b); }) == "shape_mismatch");
}

TEST_CASE("normalize_rows") {
  Mat m(1, 2);
  m << 3, 4;
  const Mat n = normalize_rows(m);
  CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Mat unit(1, 2);
  unit << 0.6, 0.8;
  CHECK((normalize_rows(unit) - unit).cwiseAbs().maxCoeff() <= 1e-7);

  Mat zero = Mat::Zero(3, 2);
  zero(0, 0) = 1.0;
  zero(2, 1) = 1.0;
  try {
    normalize_rows(zero);
    FAIL("expected degenerate row");
  } catch (const NumericalError& e) {
    CHECK(e.kind() == "degenerate_row");
    CHECK(e.index() == 1);
  }
}

TEST_CASE("normalize_rows is idempotent and yields unit rows") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat m = multisub::testing::random_matrix(6, 5, rng, 10.0);
    const Mat once = normalize_rows(m);
    const Mat twice = normalize_rows(once);
    CHECK((twice - once).cwiseAbs().maxCoeff() <= 1e-7);
    CHECK((row_norms(once).array() - 1.0).abs().maxCoeff() <= 1e-6);
    // Direction preserved: positive multiple of the input row.
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      CHECK(once.row(i).dot(m.row(i)) == doctest::Approx(m.row(i).norm()).epsilon(1e-12));
    }
  }
}

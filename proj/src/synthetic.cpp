#include "multisub/synthetic.hpp"

#include "multisub/errors.hpp"
#include "multisub/rng.hpp"

#include <Eigen/QR>

#include <algorithm>

#include <cmath>
#include <numbers>
#include <string>

namespace multisub {

namespace {

std::size_t axes_needed(const SyntheticConcept& c, double overlap) {
  const std::size_t minimum = c.categories + (overlap > 0.0 ? 1 : 0);
  return c.direction_dim == 0 ? minimum : c.direction_dim;
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Stored payloads are binary32; quantize now so the in-memory bundle equals
// what load_bundle returns.
Mat to_float_precision(const Mat& m) { return round_to_float(m); }

Mat rotate_rows(const Mat& rows, double degrees, Rng& rng) {
  const double theta = degrees * std::numbers::pi / 180.0;
  Mat out(rows.rows(), rows.cols());
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    const RowVec m = rows.row(k);
    RowVec r = gaussian(1, rows.cols(), rng);
    r -= r.dot(m) * m;
    r.normalize();
    out.row(k) = std::cos(theta) * m + std::sin(theta) * r;
  }
  return out;
}

}  // namespace

SyntheticConcept parse_concept(const std::string& text) {
  SyntheticConcept c;
  const auto first = text.find(':');
  if (first == std::string::npos || first == 0) {
    throw ValidationError("config", "concept '" + text + "' must look like name:categories[:dim]");
  }
  c.name = text.substr(0, first);
  const auto second = text.find(':', first + 1);
  try {
    c.categories = std::stoul(text.substr(first + 1, second == std::string::npos ? std::string::npos : second - first - 1));
    if (second != std::string::npos) c.direction_dim = std::stoul(text.substr(second + 1));
  } catch (const std::exception&) {
    throw ValidationError("config", "concept '" + text + "' has a non-numeric field");
  }
  return c;
}

void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& what) { throw ValidationError("config", what); };
  if (s.n < 2) fail("synthetic n must be >= 2");
  if (s.concepts.empty()) fail("synthetic spec needs at least one concept");
  if (!(s.sigma >= 0.0)) fail("sigma must be >= 0");
  if (!(s.overlap >= 0.0 && s.overlap < 1.0)) fail("overlap must lie in [0, 1)");
  if (!(s.perturb_degrees >= 0.0 && s.perturb_degrees <= 90.0)) fail("perturbation angle must lie in [0, 90]");
  if (!s.prompt_template.empty() && std::count(s.prompt_template.begin(), s.prompt_template.end(), '*') != 1) {
    fail("prompt template must contain exactly one '*'");
  }
  std::size_t axes = 0;
  for (const auto& c : s.concepts) {
    if (c.name.empty()) fail("concept names must be non-empty");
    if (c.categories < 2) fail("concept '" + c.name + "' needs at least 2 categories");
    const std::size_t minimum = c.categories + (s.overlap > 0.0 ? 1 : 0);
    if (c.direction_dim != 0 && c.direction_dim < minimum) {
      fail("concept '" + c.name + "' needs direction dimension >= " + std::to_string(minimum));
    }
    axes += axes_needed(c, s.overlap);
  }
  if (axes > s.dim) {
    fail("dimension " + std::to_string(s.dim) + " cannot host the " + std::to_string(axes) +
         " orthogonal directions the concepts require");
  }
}

std::map<std::string, EmbeddingBundle> generate_synthetic(const SyntheticSpec& s) {
  validate(s);
  Rng rng(s.seed);
  const auto n = static_cast<Eigen::Index>(s.n);
  const auto d = static_cast<Eigen::Index>(s.dim);

  const Mat frame = Eigen::HouseholderQR<Mat>(gaussian(d, d, rng)).householderQ();
  std::vector<Mat> directions;  // per concept, categories x d
  Eigen::Index axis = 0;
  for (const auto& c : s.concepts) {
    const auto k = static_cast<Eigen::Index>(c.categories);
    Mat dirs(k, d);
    Eigen::Index first = axis;
    RowVec center = RowVec::Zero(d);
    if (s.overlap > 0.0) center = frame.col(first++).transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
      dirs.row(j) = std::sqrt(s.overlap) * center + std::sqrt(1.0 - s.overlap) * frame.col(first + j).transpose();
    }
    directions.push_back(dirs);
    axis += static_cast<Eigen::Index>(axes_needed(c, s.overlap));
  }

  std::vector<Labels> truth(s.concepts.size(), Labels(s.n));
  Mat raw(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVec sum = RowVec::Zero(d);
    for (std::size_t c = 0; c < s.concepts.size(); ++c) {
      const auto label = static_cast<std::uint32_t>(rng.below(s.concepts[c].categories));
      truth[c][static_cast<std::size_t>(i)] = label;
      sum += directions[c].row(label);
    }
    raw.row(i) = sum.normalized() + s.sigma * gaussian(1, d, rng);
  }
  raw = to_float_precision(raw);

  std::map<std::string, Labels> ground_truth;
  std::map<std::string, Mat> class_prompts;
  for (std::size_t c = 0; c < s.concepts.size(); ++c) {
    ground_truth[s.concepts[c].name] = truth[c];
    class_prompts[s.concepts[c].name] = to_float_precision(directions[c]);
  }

  std::map<std::string, EmbeddingBundle> bundles;
  for (std::size_t c = 0; c < s.concepts.size(); ++c) {
    const auto& concept_spec = s.concepts[c];
    Rng basis_rng(rng.split());
    const Mat basis = to_float_precision(normalize_rows(rotate_rows(directions[c], s.perturb_degrees, basis_rng)));

    EmbeddingBundle b;
    Manifest& m = b.manifest;
    m.n = s.n;
    m.d_raw = m.d_joint = m.d_token = s.dim;
    m.K = concept_spec.categories;
    m.concept_name = concept_spec.name;
    m.prompt_template =
        s.prompt_template.empty() ? "an object with the " + concept_spec.name + " of *" : s.prompt_template;
    for (std::size_t k = 0; k < concept_spec.categories; ++k) {
      m.reference_words.push_back(concept_spec.name + "_" + std::to_string(k));
    }
    m.projection_init_file = "projection_init.f32";
    m.ref_word_text_file = "ref_word_text.f32";
    b.raw_features = raw;
    b.projection_init = Mat::Identity(d, d);
    b.ref_token = basis;
    b.ref_prompt = basis;
    b.ref_word_text = basis;
    b.ground_truth = ground_truth;
    b.class_prompts = class_prompts;
    validate(b);
    bundles.emplace(concept_spec.name, std::move(b));
  }
  return bundles;
}

void write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out) {
  for (const auto& [name, bundle] : generate_synthetic(spec)) save_bundle(bundle, out / name);
}

}  // namespace multisub

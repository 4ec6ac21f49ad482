#pragma once

#include "multisub/bundle.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace multisub {

struct SyntheticConcept {
  std::string name;
  std::size_t categories = 3;
  // Orthogonal axes reserved for the concept; 0 means the minimum
  // (categories, plus one shared axis when overlap > 0).
  std::size_t direction_dim = 0;
};

/// Desk-scale multi-clustering dataset. Each sample draws one category per
/// concept; its raw feature is normalize(sum of the drawn category
/// directions) + N(0, sigma^2 I). Category directions of one concept are
/// sqrt(overlap) * c + sqrt(1 - overlap) * e_k for a concept axis c and
/// orthonormal e_k, so their pairwise cosine equals `overlap`.
struct SyntheticSpec {
  std::size_t n = 600;
  std::size_t dim = 32;
  std::vector<SyntheticConcept> concepts = {{"A", 3, 0}, {"B", 3, 0}};
  double sigma = 0.1;
  double overlap = 0.0;
  double perturb_degrees = 0.0;  // rotation applied to every basis row
  std::uint64_t seed = 0;
  // Empty: "an object with the <concept> of *" per concept.
  std::string prompt_template;
};

/// Throws ValidationError for invalid specs, including a dimension too
/// small to host every concept's orthogonal axes.
void validate(const SyntheticSpec& spec);

/// One bundle per concept, keyed by concept name. All share the raw
/// features and carry every concept's ground truth and class prompts.
std::map<std::string, EmbeddingBundle> generate_synthetic(const SyntheticSpec& spec);

/// Writes generate_synthetic(spec) to out/<concept>/.
void write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// Parses "name:categories[:dim]".
SyntheticConcept parse_concept(const std::string& text);

}  // namespace multisub

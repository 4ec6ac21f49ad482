#pragma once

#include "multisub/bundle.hpp"
#include "multisub/matrix.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace multisub {

/// label_i = argmax_k cos(proxy_i, basis_k), lowest k on ties.
Labels assign_pseudo_labels(const Mat& proxy, const Mat& basis);

/// v_i = [normalize(proxy_i), x_i], proxy half first.
Mat concat_features(const Mat& proxy, const Mat& vision);

using Pair = std::pair<std::uint32_t, std::uint32_t>;

struct PairBatch {
  std::vector<Pair> intra;  // same pseudo-label, i < j
  std::vector<Pair> inter;  // different pseudo-labels, i < j
  std::size_t intra_population = 0;
  std::size_t inter_population = 0;
  bool intra_empty() const { return intra.empty(); }
  bool inter_empty() const { return inter.empty(); }
};

/// Uniform sample without replacement of up to `budget` pairs from each of
/// the intra and inter populations. Full populations are returned when they
/// fit in the budget. Pairs come back sorted.
PairBatch sample_pairs(const Labels& labels, std::size_t budget, std::uint64_t seed);

/// Every intra and inter pair, in lexicographic order.
PairBatch all_pairs(const Labels& labels);

struct PairLoss {
  double value = 0.0;
  bool empty = false;  // no pairs, value forced to 0
};

PairLoss intra_loss(const Mat& features, const PairBatch& pairs);
PairLoss inter_loss(const Mat& features, const PairBatch& pairs, double margin);

/// lambda * intra + (1 - lambda) * inter; lambda must lie in [0, 1].
double total_loss(double intra, double inter, double lambda);

struct Phase2Result {
  Mat grad_projection;
  double loss = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  bool intra_empty = false;
  bool inter_empty = false;
};

/// Gradient of the clustering loss with respect to the projection layer
/// only; `proxy_fixed` is held constant. A pair whose distance is not
/// strictly below the margin contributes no inter gradient.
Phase2Result phase2_gradients(const Mat& projection, const EmbeddingBundle& bundle, const Mat& proxy_fixed,
                              const PairBatch& pairs, double margin, double lambda);

}  // namespace multisub

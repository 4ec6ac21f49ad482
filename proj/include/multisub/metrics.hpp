#pragma once

#include "multisub/matrix.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace multisub {

/// Joint counts of two labelings over the same samples.
struct ContingencyTable {
  std::vector<std::vector<std::size_t>> counts;  // counts[a][b]
  std::vector<std::size_t> rows;                 // marginals of p
  std::vector<std::size_t> cols;                 // marginals of q
  std::size_t total = 0;
};

ContingencyTable contingency(const Labels& p, const Labels& q);

/// MI / mean(H(p), H(q)), natural log; 1 when both entropies vanish.
double nmi(const Labels& p, const Labels& q);

/// Unadjusted Rand index; needs n >= 2.
double rand_index(const Labels& p, const Labels& q);

std::size_t cluster_count(const Labels& labels);

struct KMeansRun {
  Labels labels;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after each assignment step
};

struct KMeansResult {
  Labels labels;  // best-inertia restart
  double inertia = 0.0;
  double mean_inertia = 0.0;
  std::vector<KMeansRun> runs;
};

/// Lloyd iterations from k-means++ seeds, `restarts` times. An emptied
/// cluster is re-seeded at the point farthest from its centroid.
KMeansResult kmeans(const Mat& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iter = 300);

/// Sum of squared distances to per-cluster means.
double inertia(const Mat& points, const Labels& labels);

/// argmax_c <x_i, prompt_c>, lowest index on ties.
Labels zero_shot_assign(const Mat& vision, const Mat& class_prompts);

/// Median of all pairwise Euclidean distances between rows of X and Y stacked.
double median_pairwise_distance(const Mat& x, const Mat& y);

/// Unbiased MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
/// sigma defaults to the median pairwise distance of X u Y.
double mmd2_unbiased(const Mat& x, const Mat& y, std::optional<double> bandwidth = std::nullopt);

}  // namespace multisub

#pragma once

// Reference implementations written straight from the definitions, with
// plain loops and no shared code paths with the library. Used by the unit
// tests and by the acceptance binary.

#include "multisub/bundle.hpp"
#include "multisub/cluster_objective.hpp"
#include "multisub/rng.hpp"
#include "multisub/subspace.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <vector>

namespace multisub::oracle {

inline std::vector<double> unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

inline std::vector<double> row(const Mat& m, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
  return r;
}

inline std::vector<double> vision_row(const Mat& W, const Mat& U, Eigen::Index i) {
  std::vector<double> y(static_cast<std::size_t>(W.rows()), 0.0);
  for (Eigen::Index a = 0; a < W.rows(); ++a) {
    for (Eigen::Index b = 0; b < W.cols(); ++b) y[static_cast<std::size_t>(a)] += W(a, b) * U(i, b);
  }
  return unit(y);
}

// -(1/n) sum_i <normalize(W u_i), normalize(sum_k softmax_k(<p_i, z_k>) b_k)>
inline double phase1_loss(const Mat& P, const Mat& W, const EmbeddingBundle& bundle, SubspaceMode mode) {
  const Mat& Z = bundle.ref_token;
  const Mat& B = mode == SubspaceMode::word_text ? *bundle.ref_word_text : bundle.ref_prompt;
  const Mat& U = bundle.raw_features;
  double total = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    std::vector<double> logits(static_cast<std::size_t>(Z.rows()), 0.0);
    for (Eigen::Index k = 0; k < Z.rows(); ++k) {
      for (Eigen::Index t = 0; t < Z.cols(); ++t) logits[static_cast<std::size_t>(k)] += P(i, t) * Z(k, t);
    }
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l);
    std::vector<double> mix(static_cast<std::size_t>(B.cols()), 0.0);
    for (Eigen::Index k = 0; k < B.rows(); ++k) {
      const double a = std::exp(logits[static_cast<std::size_t>(k)]) / denom;
      for (Eigen::Index c = 0; c < B.cols(); ++c) mix[static_cast<std::size_t>(c)] += a * B(k, c);
    }
    const auto t = unit(mix);
    const auto x = vision_row(W, U, i);
    for (std::size_t c = 0; c < t.size(); ++c) total -= x[c] * t[c];
  }
  return total / static_cast<double>(U.rows());
}

inline std::vector<double> feature_row(const Mat& W, const EmbeddingBundle& bundle, const Mat& proxy,
                                       Eigen::Index i) {
  auto v = unit(row(proxy, i));
  const auto x = vision_row(W, bundle.raw_features, i);
  v.insert(v.end(), x.begin(), x.end());
  return v;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

inline double phase2_loss(const Mat& W, const EmbeddingBundle& bundle, const Mat& proxy, const PairBatch& pairs,
                          double margin, double lambda) {
  double intra = 0.0, inter = 0.0;
  for (const auto& [i, j] : pairs.intra) {
    const double d = distance(feature_row(W, bundle, proxy, i), feature_row(W, bundle, proxy, j));
    intra += d * d;
  }
  for (const auto& [i, j] : pairs.inter) {
    const double d = distance(feature_row(W, bundle, proxy, i), feature_row(W, bundle, proxy, j));
    inter += std::max(0.0, margin - d);
  }
  if (!pairs.intra.empty()) intra /= static_cast<double>(pairs.intra.size());
  if (!pairs.inter.empty()) inter /= static_cast<double>(pairs.inter.size());
  return lambda * intra + (1.0 - lambda) * inter;
}

// Smallest |d - margin| over inter pairs: how close the state is to a kink
// of the hinge.
inline double kink_distance(const Mat& W, const EmbeddingBundle& bundle, const Mat& proxy, const PairBatch& pairs,
                            double margin) {
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& [i, j] : pairs.inter) {
    const double d = distance(feature_row(W, bundle, proxy, i), feature_row(W, bundle, proxy, j));
    gap = std::min({gap, std::abs(d - margin), d});
  }
  return gap;
}

inline Mat central_difference(const std::function<double(const Mat&)>& f, const Mat& at, double h = 1e-5) {
  Mat grad(at.rows(), at.cols());
  Mat probe = at;
  for (Eigen::Index i = 0; i < at.rows(); ++i) {
    for (Eigen::Index j = 0; j < at.cols(); ++j) {
      probe(i, j) = at(i, j) + h;
      const double up = f(probe);
      probe(i, j) = at(i, j) - h;
      const double down = f(probe);
      probe(i, j) = at(i, j);
      grad(i, j) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

// Max entrywise error relative to the larger gradient scale, floored so an
// all-zero gradient is compared absolutely.
inline double relative_error(const Mat& analytic, const Mat& numeric, double floor = 1e-5) {
  const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

struct Phase1Instance {
  EmbeddingBundle bundle;
  Mat latent;
  Mat projection;
  SubspaceMode mode = SubspaceMode::token;
};

inline Phase1Instance random_phase1_instance(std::uint64_t seed) {
  Rng rng(seed);
  const auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  const std::size_t n = pick(2, 8), K = pick(2, 4), d_raw = pick(2, 6), d_joint = pick(2, 6), d_token = pick(2, 6);
  Phase1Instance inst;
  inst.bundle = testing::small_bundle(n, K, d_raw, d_joint, d_token, rng.split());
  inst.latent = testing::random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_token), rng);
  inst.projection = testing::random_matrix(static_cast<Eigen::Index>(d_joint), static_cast<Eigen::Index>(d_raw), rng);
  inst.mode = static_cast<SubspaceMode>(rng.below(3));
  return inst;
}

struct Phase2Instance {
  EmbeddingBundle bundle;
  Mat projection;
  Mat proxy;
  PairBatch pairs;
  double margin = 1.0;
  double lambda = 0.5;
};

inline Phase2Instance random_phase2_instance(std::uint64_t seed) {
  Rng rng(seed);
  const auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  const std::size_t n = pick(3, 8), K = pick(2, 4), d_raw = pick(2, 6), d_joint = pick(2, 6);
  Phase2Instance inst;
  inst.bundle = testing::small_bundle(n, K, d_raw, d_joint, pick(2, 6), rng.split());
  inst.projection = testing::random_matrix(static_cast<Eigen::Index>(d_joint), static_cast<Eigen::Index>(d_raw), rng);
  inst.proxy = testing::random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pick(2, 6)), rng);
  Labels labels(n);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(K));
  inst.pairs = all_pairs(labels);
  inst.margin = 0.5 + 2.0 * rng.uniform();
  inst.lambda = rng.uniform();
  return inst;
}

// ---- partition metrics ----

inline double entropy(const Labels& p) {
  std::map<std::uint32_t, double> count;
  for (auto l : p) count[l] += 1.0;
  const double n = static_cast<double>(p.size());
  double h = 0.0;
  for (const auto& [label, c] : count) h -= (c / n) * std::log(c / n);
  return h;
}

inline double mutual_information(const Labels& p, const Labels& q) {
  const double n = static_cast<double>(p.size());
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
  std::map<std::uint32_t, double> pa, qb;
  for (std::size_t i = 0; i < p.size(); ++i) {
    joint[{p[i], q[i]}] += 1.0;
    pa[p[i]] += 1.0;
    qb[q[i]] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [ab, c] : joint) {
    const double pij = c / n;
    mi += pij * std::log(pij / ((pa[ab.first] / n) * (qb[ab.second] / n)));
  }
  return mi;
}

inline double nmi(const Labels& p, const Labels& q) {
  const double hp = entropy(p), hq = entropy(q);
  if (hp == 0.0 && hq == 0.0) return 1.0;
  return std::clamp(mutual_information(p, q) / (0.5 * (hp + hq)), 0.0, 1.0);
}

inline double rand_index(const Labels& p, const Labels& q) {
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      agree += (p[i] == p[j]) == (q[i] == q[j]) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

inline Labels random_labels(std::size_t n, std::uint32_t k, Rng& rng) {
  Labels l(n);
  for (auto& x : l) x = static_cast<std::uint32_t>(rng.below(k));
  return l;
}

// ---- k-means ----

inline double assignment_inertia(const Mat& points, const Labels& labels, std::size_t k) {
  double total = 0.0;
  for (std::uint32_t c = 0; c < k; ++c) {
    std::vector<double> mean(static_cast<std::size_t>(points.cols()), 0.0);
    double count = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      for (Eigen::Index j = 0; j < points.cols(); ++j) mean[static_cast<std::size_t>(j)] += points(static_cast<Eigen::Index>(i), j);
      count += 1.0;
    }
    if (count == 0.0) continue;
    for (double& m : mean) m /= count;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      for (Eigen::Index j = 0; j < points.cols(); ++j) {
        const double d = points(static_cast<Eigen::Index>(i), j) - mean[static_cast<std::size_t>(j)];
        total += d * d;
      }
    }
  }
  return total;
}

// Minimum inertia over all k^n assignments.
inline double exhaustive_kmeans(const Mat& points, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  Labels labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    best = std::min(best, assignment_inertia(points, labels, k));
    std::size_t pos = 0;
    while (pos < n && ++labels[pos] == k) labels[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

}  // namespace multisub::oracle

#include "multisub/cluster_objective.hpp"

#include "multisub/errors.hpp"
#include "multisub/rng.hpp"
#include "multisub/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace multisub {

namespace {

Mat normalize_proxy(const Mat& proxy) {
  try {
    return normalize_rows(proxy);
  } catch (const NumericalError& e) {
    throw NumericalError("degenerate_proxy", "proxy of sample " + std::to_string(e.index()) + " has zero norm",
                         e.index());
  }
}

std::size_t choose2(std::size_t n) { return n * (n - 1) / 2; }

// Unranks index r in [0, choose2(m)) to (a, b), a < b, ordered by a then b.
std::pair<std::size_t, std::size_t> unrank_pair(std::size_t r, std::size_t m) {
  std::size_t a = 0;
  std::size_t row = m - 1;
  while (r >= row) {
    r -= row;
    ++a;
    --row;
  }
  return {a, a + 1 + r};
}

// Floyd's algorithm: `count` distinct values from [0, population), sorted.
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, Rng& rng) {
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  for (std::size_t j = population - count; j < population; ++j) {
    const std::size_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::size_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

// Indexes the pair populations of one labeling without materializing them.
class PairIndex {
 public:
  explicit PairIndex(const Labels& labels) : labels_(labels), n_(labels.size()) {
    std::uint32_t k = 0;
    for (auto l : labels) k = std::max(k, l + 1);
    members_.resize(k);
    for (std::size_t i = 0; i < n_; ++i) members_[labels[i]].push_back(static_cast<std::uint32_t>(i));
    intra_offsets_.push_back(0);
    for (const auto& m : members_) intra_offsets_.push_back(intra_offsets_.back() + (m.empty() ? 0 : choose2(m.size())));
    // inter_first_[i] = number of inter pairs (a, b), a < i.
    inter_first_.assign(n_ + 1, 0);
    std::vector<std::size_t> seen(k, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      ++seen[labels[i]];
      const std::size_t later = n_ - 1 - i;
      const std::size_t later_same = members_[labels[i]].size() - seen[labels[i]];
      inter_first_[i + 1] = inter_first_[i] + (later - later_same);
    }
  }

  std::size_t intra_population() const { return intra_offsets_.back(); }
  std::size_t inter_population() const { return inter_first_.back(); }

  Pair intra(std::size_t r) const {
    const auto it = std::upper_bound(intra_offsets_.begin(), intra_offsets_.end(), r);
    const std::size_t c = static_cast<std::size_t>(it - intra_offsets_.begin()) - 1;
    const auto [a, b] = unrank_pair(r - intra_offsets_[c], members_[c].size());
    return {members_[c][a], members_[c][b]};
  }

  Pair inter(std::size_t r) const {
    const auto it = std::upper_bound(inter_first_.begin(), inter_first_.end(), r);
    const std::size_t i = static_cast<std::size_t>(it - inter_first_.begin()) - 1;
    std::size_t offset = r - inter_first_[i];
    // offset-th j > i whose label differs from labels_[i]: binary search on
    // (j - i) - #same-label members in (i, j].
    const auto& same = members_[labels_[i]];
    const auto after_i = std::upper_bound(same.begin(), same.end(), static_cast<std::uint32_t>(i));
    std::size_t lo = i + 1, hi = n_ - 1;
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      const auto same_le_mid =
          static_cast<std::size_t>(std::upper_bound(after_i, same.end(), static_cast<std::uint32_t>(mid)) - after_i);
      const std::size_t differing = (mid - i) - same_le_mid;
      if (differing >= offset + 1) hi = mid; else lo = mid + 1;
    }
    return {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(lo)};
  }

 private:
  const Labels& labels_;
  std::size_t n_;
  std::vector<std::vector<std::uint32_t>> members_;
  std::vector<std::size_t> intra_offsets_;
  std::vector<std::size_t> inter_first_;
};

}  // namespace

Labels assign_pseudo_labels(const Mat& proxy, const Mat& basis) {
  if (proxy.cols() != basis.cols()) {
    throw ValidationError("shape_mismatch", "proxy and basis dimensions differ");
  }
  const Mat cos = normalize_proxy(proxy) * normalize_rows(basis).transpose();
  Labels labels(static_cast<std::size_t>(proxy.rows()));
  for (Eigen::Index i = 0; i < cos.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < cos.cols(); ++k) {
      if (cos(i, k) > cos(i, best)) best = k;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return labels;
}

Mat concat_features(const Mat& proxy, const Mat& vision) {
  if (proxy.rows() != vision.rows()) throw ValidationError("shape_mismatch", "proxy and vision row counts differ");
  Mat v(proxy.rows(), proxy.cols() + vision.cols());
  v.leftCols(proxy.cols()) = normalize_proxy(proxy);
  v.rightCols(vision.cols()) = vision;
  return v;
}

PairBatch sample_pairs(const Labels& labels, std::size_t budget, std::uint64_t seed) {
  if (budget < 1) throw ValidationError("config", "pair budget must be >= 1");
  const PairIndex index(labels);
  Rng rng(seed);
  PairBatch batch;
  batch.intra_population = index.intra_population();
  batch.inter_population = index.inter_population();
  for (std::size_t r : sample_indices(batch.intra_population, std::min(budget, batch.intra_population), rng)) {
    batch.intra.push_back(index.intra(r));
  }
  for (std::size_t r : sample_indices(batch.inter_population, std::min(budget, batch.inter_population), rng)) {
    batch.inter.push_back(index.inter(r));
  }
  std::sort(batch.intra.begin(), batch.intra.end());
  std::sort(batch.inter.begin(), batch.inter.end());
  return batch;
}

PairBatch all_pairs(const Labels& labels) {
  PairBatch batch;
  for (std::uint32_t i = 0; i < labels.size(); ++i) {
    for (std::uint32_t j = i + 1; j < labels.size(); ++j) {
      (labels[i] == labels[j] ? batch.intra : batch.inter).emplace_back(i, j);
    }
  }
  batch.intra_population = batch.intra.size();
  batch.inter_population = batch.inter.size();
  return batch;
}

PairLoss intra_loss(const Mat& features, const PairBatch& pairs) {
  if (pairs.intra.empty()) return {0.0, true};
  double sum = 0.0;
  for (const auto& [i, j] : pairs.intra) sum += (features.row(i) - features.row(j)).squaredNorm();
  return {sum / static_cast<double>(pairs.intra.size()), false};
}

PairLoss inter_loss(const Mat& features, const PairBatch& pairs, double margin) {
  if (!(margin > 0.0)) throw ValidationError("config", "margin must be > 0");
  if (pairs.inter.empty()) return {0.0, true};
  double sum = 0.0;
  for (const auto& [i, j] : pairs.inter) {
    sum += std::max(0.0, margin - (features.row(i) - features.row(j)).norm());
  }
  return {sum / static_cast<double>(pairs.inter.size()), false};
}

double total_loss(double intra, double inter, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("config", "lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  return lambda * intra + (1.0 - lambda) * inter;
}

Phase2Result phase2_gradients(const Mat& projection, const EmbeddingBundle& bundle, const Mat& proxy_fixed,
                              const PairBatch& pairs, double margin, double lambda) {
  const Mat& U = bundle.raw_features;
  const Mat raw_projected = U * projection.transpose();
  const Mat vision = project_vision(projection, U);
  const Mat features = concat_features(proxy_fixed, vision);
  const Eigen::Index split = proxy_fixed.cols();

  Phase2Result r;
  const PairLoss intra = intra_loss(features, pairs);
  const PairLoss inter = inter_loss(features, pairs, margin);
  r.intra = intra.value;
  r.inter = inter.value;
  r.intra_empty = intra.empty;
  r.inter_empty = inter.empty;
  r.loss = total_loss(r.intra, r.inter, lambda);

  Mat grad_vision = Mat::Zero(vision.rows(), vision.cols());
  if (!intra.empty) {
    const double scale = 2.0 * lambda / static_cast<double>(pairs.intra.size());
    for (const auto& [i, j] : pairs.intra) {
      const RowVec diff = vision.row(i) - vision.row(j);
      grad_vision.row(i) += scale * diff;
      grad_vision.row(j) -= scale * diff;
    }
  }
  if (!inter.empty) {
    const double scale = (1.0 - lambda) / static_cast<double>(pairs.inter.size());
    for (const auto& [i, j] : pairs.inter) {
      const RowVec diff = features.row(i) - features.row(j);
      const double dist = diff.norm();
      if (!(dist < margin) || dist == 0.0) continue;
      const RowVec g = (scale / dist) * diff.tail(diff.size() - split);
      grad_vision.row(i) -= g;
      grad_vision.row(j) += g;
    }
  }

  r.grad_projection = normalize_rows_backward(raw_projected, vision, grad_vision).transpose() * U;
  return r;
}

}  // namespace multisub

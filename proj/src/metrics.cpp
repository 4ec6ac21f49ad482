#include "multisub/metrics.hpp"

#include "multisub/errors.hpp"
#include "multisub/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace multisub {

namespace {

void check_same_length(const Labels& p, const Labels& q) {
  if (p.size() != q.size()) {
    throw ValidationError("length_mismatch", "partitions have lengths " + std::to_string(p.size()) + " and " +
                                                 std::to_string(q.size()));
  }
  if (p.empty()) throw ValidationError("length_mismatch", "partitions are empty");
}

// Dense relabeling in order of first appearance.
Labels compact(const Labels& labels, std::size_t& count) {
  std::vector<std::uint32_t> ids;
  Labels out(labels.size());
  std::vector<std::int64_t> map;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l >= map.size()) map.resize(l + 1, -1);
    if (map[l] < 0) map[l] = static_cast<std::int64_t>(ids.size()), ids.push_back(l);
    out[i] = static_cast<std::uint32_t>(map[l]);
  }
  count = ids.size();
  return out;
}

double entropy(const std::vector<std::size_t>& marginals, double n) {
  double h = 0.0;
  for (auto c : marginals) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

std::uint64_t choose2(std::uint64_t n) { return n * (n - 1) / 2; }

}  // namespace

ContingencyTable contingency(const Labels& p, const Labels& q) {
  check_same_length(p, q);
  std::size_t kp = 0, kq = 0;
  const Labels cp = compact(p, kp);
  const Labels cq = compact(q, kq);
  ContingencyTable t;
  t.counts.assign(kp, std::vector<std::size_t>(kq, 0));
  t.rows.assign(kp, 0);
  t.cols.assign(kq, 0);
  t.total = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    ++t.counts[cp[i]][cq[i]];
    ++t.rows[cp[i]];
    ++t.cols[cq[i]];
  }
  return t;
}

double nmi(const Labels& p, const Labels& q) {
  const ContingencyTable t = contingency(p, q);
  const double n = static_cast<double>(t.total);
  const double hp = entropy(t.rows, n);
  const double hq = entropy(t.cols, n);
  if (hp == 0.0 && hq == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t a = 0; a < t.rows.size(); ++a) {
    for (std::size_t b = 0; b < t.cols.size(); ++b) {
      const auto c = t.counts[a][b];
      if (c == 0) continue;
      // Ratio computed in integers so independent cells give log(1) = 0 exactly.
      const double ratio = static_cast<double>(c * t.total) / static_cast<double>(t.rows[a] * t.cols[b]);
      mi += static_cast<double>(c) / n * std::log(ratio);
    }
  }
  const double value = mi / (0.5 * (hp + hq));
  return std::clamp(value, 0.0, 1.0);
}

double rand_index(const Labels& p, const Labels& q) {
  const ContingencyTable t = contingency(p, q);
  if (t.total < 2) throw ValidationError("too_few_samples", "rand index needs at least 2 samples");
  std::uint64_t same_both = 0, same_p = 0, same_q = 0;
  for (const auto& row : t.counts) {
    for (auto c : row) same_both += choose2(c);
  }
  for (auto c : t.rows) same_p += choose2(c);
  for (auto c : t.cols) same_q += choose2(c);
  const std::uint64_t pairs = choose2(t.total);
  // Agreements: pairs together in both plus pairs apart in both.
  const std::uint64_t agree = pairs + 2 * same_both - same_p - same_q;
  return static_cast<double>(agree) / static_cast<double>(pairs);
}

std::size_t cluster_count(const Labels& labels) {
  std::size_t count = 0;
  compact(labels, count);
  return count;
}

double inertia(const Mat& points, const Labels& labels) {
  std::uint32_t k = 0;
  for (auto l : labels) k = std::max(k, l + 1);
  Mat sums = Mat::Zero(k, points.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
    ++counts[labels[i]];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const RowVec mean = sums.row(labels[i]) / static_cast<double>(counts[labels[i]]);
    total += (points.row(static_cast<Eigen::Index>(i)) - mean).squaredNorm();
  }
  return total;
}

namespace {

Mat kmeanspp_seeds(const Mat& points, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Mat centers(static_cast<Eigen::Index>(k), points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(n)));
  Vec nearest(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) nearest(i) = (points.row(i) - centers.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = points.rows() - 1;
      for (Eigen::Index i = 0; i < points.rows(); ++i) {
        target -= nearest(i);
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(n));
    }
    centers.row(static_cast<Eigen::Index>(c)) = points.row(pick);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      nearest(i) = std::min(nearest(i), (points.row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
  }
  return centers;
}

KMeansRun lloyd(const Mat& points, Mat centers, std::size_t max_iter) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centers.rows();
  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), 0);
  Vec dist(n);
  bool first = true;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = (points.row(i) - centers.row(0)).squaredNorm();
      for (Eigen::Index c = 1; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) best_d = d, best = c;
      }
      dist(i) = best_d;
      total += best_d;
      if (first || run.labels[static_cast<std::size_t>(i)] != best) changed = true;
      run.labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
    }
    run.inertia_trace.push_back(total);
    if (!changed) break;
    first = false;

    Mat sums = Mat::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(run.labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[run.labels[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      Eigen::Index far = 0;
      dist.maxCoeff(&far);
      centers.row(c) = points.row(far);
      dist(far) = 0.0;
    }
  }
  run.inertia = inertia(points, run.labels);
  return run;
}

}  // namespace

KMeansResult kmeans(const Mat& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iter) {
  if (k < 1 || k > static_cast<std::size_t>(points.rows())) {
    throw ValidationError("config", "k-means needs 1 <= k <= n, got k = " + std::to_string(k));
  }
  if (restarts < 1) throw ValidationError("config", "k-means needs at least one restart");
  Rng rng(seed);
  KMeansResult result;
  double sum = 0.0;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansRun run = lloyd(points, kmeanspp_seeds(points, k, rng), max_iter);
    sum += run.inertia;
    result.runs.push_back(std::move(run));
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r) {
    if (result.runs[r].inertia < result.runs[best].inertia) best = r;
  }
  result.labels = result.runs[best].labels;
  result.inertia = result.runs[best].inertia;
  result.mean_inertia = sum / static_cast<double>(restarts);
  return result;
}

Labels zero_shot_assign(const Mat& vision, const Mat& class_prompts) {
  if (vision.cols() != class_prompts.cols()) {
    throw ValidationError("shape_mismatch", "vision and prompt dimensions differ");
  }
  const Mat scores = vision * class_prompts.transpose();
  Labels labels(static_cast<std::size_t>(vision.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return labels;
}

double median_pairwise_distance(const Mat& x, const Mat& y) {
  Mat all(x.rows() + y.rows(), x.cols());
  all << x, y;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(all.rows() * (all.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < all.rows(); ++j) d.push_back((all.row(i) - all.row(j)).norm());
  }
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double upper = d[mid];
  if (d.size() % 2 == 1) return upper;
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mmd2_unbiased(const Mat& x, const Mat& y, std::optional<double> bandwidth) {
  if (x.rows() < 2 || y.rows() < 2) throw ValidationError("too_few_samples", "MMD needs at least 2 samples per set");
  if (x.cols() != y.cols()) throw ValidationError("shape_mismatch", "MMD sample dimensions differ");
  const double sigma = bandwidth ? *bandwidth : median_pairwise_distance(x, y);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw NumericalError("degenerate_bandwidth", "MMD bandwidth must be positive, got " + std::to_string(sigma));
  }
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  auto within = [gamma](const Mat& a) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < a.rows(); ++j) s += std::exp(-gamma * (a.row(i) - a.row(j)).squaredNorm());
    }
    const double m = static_cast<double>(a.rows());
    return 2.0 * s / (m * (m - 1.0));
  };
  double cross = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) cross += std::exp(-gamma * (x.row(i) - y.row(j)).squaredNorm());
  }
  cross /= static_cast<double>(x.rows()) * static_cast<double>(y.rows());
  return within(x) + within(y) - 2.0 * cross;
}

}  // namespace multisub

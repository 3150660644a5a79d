#pragma once

// Agglomerative hierarchical clustering (Lance-Williams updates on Euclidean
// distances) and dendrogram cuts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cellsteer/analysis.hpp"
#include "cellsteer/error.hpp"

namespace cellsteer {

enum class Linkage { average, single, complete };

inline const char *to_string(Linkage l) {
  switch (l) {
  case Linkage::average: return "average";
  case Linkage::single: return "single";
  case Linkage::complete: return "complete";
  }
  return "average";
}

struct Merge {
  std::size_t left = 0; ///< smaller node id
  std::size_t right = 0;
  double height = 0.0;

  friend bool operator==(const Merge &, const Merge &) = default;
};

/// Leaves are nodes 0..n-1; merge k creates node n + k.
struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;

  std::size_t root() const { return 2 * leaves - 2; }
};

using FeatureVectors = std::vector<std::vector<double>>;

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Among equal distances the pair with the smallest (min id, max id) merges.
inline Dendrogram hcluster(const FeatureVectors &points, Linkage linkage = Linkage::average) {
  const std::size_t n = points.size();
  if (n < 2)
    fail(ErrorKind::invalid_argument, "clustering needs at least two points", "points");
  const std::size_t dim = points.front().size();
  for (const auto &p : points)
    if (p.size() != dim)
      fail(ErrorKind::shape_mismatch, "feature vectors differ in dimension", "points");

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i * n + j] = dist[j * n + i] = euclidean(points[i], points[j]);

  // Slot s holds node id[s] with size[s] members while active.
  std::vector<std::size_t> id(n), size(n, 1), active(n);
  std::iota(id.begin(), id.end(), std::size_t{0});
  std::iota(active.begin(), active.end(), std::size_t{0});

  Dendrogram d{n, {}};
  d.merges.reserve(n - 1);
  double last_height = 0.0;
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best_a = 0, best_b = 0;
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> best_ids{n * 2, n * 2};
    for (std::size_t x = 0; x < active.size(); ++x)
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        const std::size_t a = active[x], b = active[y];
        const double v = dist[a * n + b];
        const std::pair<std::size_t, std::size_t> ids{std::min(id[a], id[b]), std::max(id[a], id[b])};
        if (v < best || (v == best && ids < best_ids)) {
          best = v;
          best_a = a;
          best_b = b;
          best_ids = ids;
        }
      }
    // Roundoff in the updates must not produce inversions.
    last_height = std::max(last_height, best);
    d.merges.push_back({best_ids.first, best_ids.second, last_height});

    const double na = static_cast<double>(size[best_a]), nb = static_cast<double>(size[best_b]);
    for (std::size_t k : active) {
      if (k == best_a || k == best_b)
        continue;
      const double da = dist[k * n + best_a], db = dist[k * n + best_b];
      double v = 0.0;
      switch (linkage) {
      case Linkage::single: v = std::min(da, db); break;
      case Linkage::complete: v = std::max(da, db); break;
      case Linkage::average: v = (na * da + nb * db) / (na + nb); break;
      }
      dist[k * n + best_a] = dist[best_a * n + k] = v;
    }
    id[best_a] = n + step;
    size[best_a] += size[best_b];
    active.erase(std::find(active.begin(), active.end(), best_b));
  }
  return d;
}

/// Undoes the last k - 1 merges; labels follow ascending smallest leaf id.
inline std::vector<std::size_t> cut(const Dendrogram &d, std::size_t k) {
  const std::size_t n = d.leaves;
  if (k < 1 || k > n)
    fail(ErrorKind::invalid_argument, "cluster count must be in 1.." + std::to_string(n), "k");
  if (d.merges.size() + 1 != n)
    fail(ErrorKind::invalid_argument, "dendrogram has the wrong number of merges", "dendrogram");
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x)
      x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t m = 0; m < n - k; ++m) {
    const auto &mg = d.merges[m];
    parent[find(mg.left)] = n + m;
    parent[find(mg.right)] = n + m;
  }
  std::vector<std::size_t> labels(n);
  std::vector<std::size_t> label_of_root(2 * n - 1, n);
  std::size_t next = 0;
  for (std::size_t leaf = 0; leaf < n; ++leaf) {
    const auto r = find(leaf);
    if (label_of_root[r] == n)
      label_of_root[r] = next++;
    labels[leaf] = label_of_root[r];
  }
  return labels;
}

/// Relative weights of the value and uncertainty features.
struct SpatialFeatureWeights {
  double value = 1.0;
  double uncertainty = 1.0;

  static SpatialFeatureWeights value_only() { return {1.0, 0.0}; }
  static SpatialFeatureWeights uncertainty_only() { return {0.0, 1.0}; }
};

/// Clusters spatial cells on (value - min) / range and std / max std.
inline Dendrogram spatial_clusters(std::span<const double> profile, std::span<const double> std_dev,
                                   SpatialFeatureWeights weights = {},
                                   Linkage linkage = Linkage::average) {
  if (profile.size() != std_dev.size())
    fail(ErrorKind::shape_mismatch, "profile and uncertainty lengths differ", "uncertainty");
  const auto [lo_it, hi_it] = std::minmax_element(profile.begin(), profile.end());
  const double lo = profile.empty() ? 0.0 : *lo_it;
  const double range = profile.empty() ? 0.0 : *hi_it - lo;
  const double max_std = std_dev.empty() ? 0.0 : *std::max_element(std_dev.begin(), std_dev.end());
  FeatureVectors features(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i)
    features[i] = {range > 0.0 ? weights.value * (profile[i] - lo) / range : 0.0,
                   max_std > 0.0 ? weights.uncertainty * std_dev[i] / max_std : 0.0};
  return hcluster(features, linkage);
}

/// Clusters parameters on their spatial sensitivity columns, scaled by the
/// global maximum of the map.
inline Dendrogram parameter_clusters(const SensitivityMap &map, Linkage linkage = Linkage::average) {
  const auto &v = map.values;
  const double peak = v.size() ? *std::max_element(v.data().begin(), v.data().end()) : 0.0;
  if (!(peak > 0.0))
    fail(ErrorKind::invalid_argument, "sensitivity map is all zero", "map");
  FeatureVectors features(v.cols(), std::vector<double>(v.rows()));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j)
      features[j][i] = v(i, j) / peak;
  return hcluster(features, linkage);
}

} // namespace cellsteer

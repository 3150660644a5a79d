#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <set>

#include "cellsteer/json_io.hpp"
#include "cluster_oracle.hpp"
#include "test_util.hpp"

using namespace cellsteer;

namespace {

FeatureVectors random_points(std::size_t n, std::size_t dim, Rng &rng) {
  FeatureVectors pts(n);
  for (auto &p : pts)
    p = cellsteer::testing::random_vector(dim, rng, -5, 5);
  return pts;
}

// Partition as a set of member sets, independent of label numbering.
std::set<std::set<std::size_t>> partition(const std::vector<std::size_t> &labels,
                                          const std::vector<std::size_t> &leaf_name) {
  std::map<std::size_t, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i)
    groups[labels[i]].insert(leaf_name[i]);
  std::set<std::set<std::size_t>> out;
  for (auto &[_, g] : groups)
    out.insert(g);
  return out;
}

constexpr Linkage kAll[] = {Linkage::average, Linkage::single, Linkage::complete};

} // namespace

TEST(Hcluster, IdenticalPointsMergeAtZero) {
  const FeatureVectors pts{{1, 1}, {4, 4}, {1, 1}, {1, 1}};
  const auto d = hcluster(pts);
  EXPECT_EQ(d.merges[0], (Merge{0, 2, 0.0}));
  EXPECT_EQ(d.merges[1], (Merge{3, 4, 0.0}));
  EXPECT_GT(d.merges[2].height, 0.0);
}

TEST(Hcluster, TwoObviousGroups) {
  const FeatureVectors pts{{0}, {1}, {10}, {11}};
  for (auto l : kAll) {
    const auto d = hcluster(pts, l);
    EXPECT_EQ(cut(d, 2), (std::vector<std::size_t>{0, 0, 1, 1})) << to_string(l);
    EXPECT_DOUBLE_EQ(d.merges[0].height, 1.0);
  }
  EXPECT_DOUBLE_EQ(hcluster(pts, Linkage::single).merges[2].height, 9.0);
  EXPECT_DOUBLE_EQ(hcluster(pts, Linkage::complete).merges[2].height, 11.0);
  EXPECT_DOUBLE_EQ(hcluster(pts, Linkage::average).merges[2].height, 10.0);
}

TEST(Hcluster, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const auto n = static_cast<std::size_t>(2 + rng.below(30));
    const auto pts = random_points(n, 1 + rng.below(4), rng);
    for (auto l : kAll)
      EXPECT_TRUE(cellsteer::testing::same_dendrogram(hcluster(pts, l),
                                                      cellsteer::testing::brute_force_hcluster(pts, l)))
          << "trial " << trial << " linkage " << to_string(l);
  }
}

TEST(Hcluster, TiedDistancesMatchOracle) {
  // Integer grid points produce many exact ties.
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    FeatureVectors pts(12);
    for (auto &p : pts)
      p = {static_cast<double>(rng.below(4)), static_cast<double>(rng.below(4))};
    for (auto l : {Linkage::single, Linkage::complete})
      EXPECT_TRUE(cellsteer::testing::same_dendrogram(hcluster(pts, l),
                                                      cellsteer::testing::brute_force_hcluster(pts, l)));
  }
}

TEST(Hcluster, HeightsAreMonotone) {
  Rng rng(3);
  for (auto l : kAll) {
    const auto d = hcluster(random_points(40, 3, rng), l);
    for (std::size_t k = 1; k < d.merges.size(); ++k)
      EXPECT_GE(d.merges[k].height, d.merges[k - 1].height);
  }
}

TEST(Hcluster, RejectsDegenerateInput) {
  EXPECT_THROW(hcluster({{1.0}}), Error);
  EXPECT_THROW(hcluster({{1.0}, {1.0, 2.0}}), Error);
}

TEST(Cut, ExtremesAndRefinement) {
  Rng rng(4);
  const auto pts = random_points(25, 2, rng);
  const auto d = hcluster(pts);
  const auto one = cut(d, 1);
  EXPECT_TRUE(std::all_of(one.begin(), one.end(), [](auto v) { return v == 0; }));
  auto all = cut(d, 25);
  std::vector<std::size_t> expected(25);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  EXPECT_EQ(all, expected);

  std::vector<std::size_t> names(25);
  std::iota(names.begin(), names.end(), std::size_t{0});
  for (std::size_t k = 1; k < 25; ++k) {
    const auto coarse = partition(cut(d, k), names), fine = partition(cut(d, k + 1), names);
    ASSERT_EQ(coarse.size(), k);
    ASSERT_EQ(fine.size(), k + 1);
    std::size_t changed = 0;
    for (const auto &g : coarse)
      if (!fine.count(g))
        ++changed;
    EXPECT_EQ(changed, 1u) << "k=" << k;
    for (const auto &f : fine)
      EXPECT_TRUE(std::any_of(coarse.begin(), coarse.end(), [&](const auto &g) {
        return std::includes(g.begin(), g.end(), f.begin(), f.end());
      }));
  }
  EXPECT_THROW(cut(d, 0), Error);
  EXPECT_THROW(cut(d, 26), Error);
}

TEST(Cut, LabelsFollowFirstLeaf) {
  const FeatureVectors pts{{10}, {0}, {10.5}, {0.5}};
  EXPECT_EQ(cut(hcluster(pts), 2), (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(Hcluster, PermutationInvariantPartitions) {
  Rng rng(5);
  const auto pts = random_points(20, 3, rng);
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm.begin(), perm.end());
  FeatureVectors shuffled(20);
  for (std::size_t i = 0; i < 20; ++i)
    shuffled[i] = pts[perm[i]];
  std::vector<std::size_t> identity(20);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  for (auto l : kAll) {
    const auto a = hcluster(pts, l), b = hcluster(shuffled, l);
    for (std::size_t k = 1; k <= 20; ++k)
      EXPECT_EQ(partition(cut(a, k), identity), partition(cut(b, k), perm)) << "k=" << k;
    for (std::size_t m = 0; m < a.merges.size(); ++m)
      EXPECT_NEAR(a.merges[m].height, b.merges[m].height, 1e-12);
  }
}

TEST(Spatial, UniformProfileCollapses) {
  const std::vector<double> profile(400, 7.0), spread(400, 0.0);
  const auto d = spatial_clusters(profile, spread);
  EXPECT_EQ(d.leaves, 400u);
  for (const auto &m : d.merges)
    EXPECT_EQ(m.height, 0.0);
}

TEST(Spatial, StepProfileSplitsInTwo) {
  std::vector<double> profile(400, 10.0), spread(400, 1.0);
  for (std::size_t i = 100; i < 300; ++i)
    profile[i] = 50.0;
  const auto labels = cut(spatial_clusters(profile, spread, SpatialFeatureWeights::value_only()), 2);
  for (std::size_t i = 0; i < 400; ++i)
    EXPECT_EQ(labels[i], (i >= 100 && i < 300) ? 1u : 0u);
  // Uncertainty mode sees only the flat spread.
  for (const auto &m : spatial_clusters(profile, spread, SpatialFeatureWeights::uncertainty_only()).merges)
    EXPECT_EQ(m.height, 0.0);
  EXPECT_THROW(spatial_clusters(profile, std::vector<double>(399, 0.0)), Error);
}

TEST(Spatial, CombinedUsesBothFeatures) {
  std::vector<double> profile(8, 0.0), spread(8, 0.0);
  for (std::size_t i = 4; i < 8; ++i)
    profile[i] = 1.0;
  for (std::size_t i = 0; i < 8; i += 2)
    spread[i] = 3.0;
  const auto labels = cut(spatial_clusters(profile, spread, {}), 4);
  EXPECT_EQ(labels, (std::vector<std::size_t>{0, 1, 0, 1, 2, 3, 2, 3}));
}

TEST(ParameterClusters, IdenticalColumnsJoinFirst) {
  Rng rng(6);
  MatrixR v(400, 35);
  for (auto &x : v.data())
    x = rng.uniform(0.0, 1.0);
  for (std::size_t i = 0; i < 400; ++i)
    v(i, 9) = v(i, 4);
  const auto d = parameter_clusters(SensitivityMap{v});
  EXPECT_EQ(d.leaves, 35u);
  EXPECT_EQ(d.merges[0], (Merge{4, 9, 0.0}));
  EXPECT_THROW(parameter_clusters(SensitivityMap{MatrixR(400, 35, 0.0)}), Error);
}

TEST(DendrogramJson, SchemaAndRoundTrip) {
  Rng rng(7);
  const auto d = hcluster(random_points(9, 2, rng));
  const auto j = to_json(d);
  EXPECT_EQ(j.at("leaves"), 9);
  EXPECT_EQ(j.at("merges").size(), 8u);
  const auto &tree = j.at("tree");
  EXPECT_EQ(tree.at("id"), 16);
  EXPECT_EQ(tree.at("size"), 9);
  EXPECT_DOUBLE_EQ(tree.at("height").get<double>(), d.merges.back().height);
  const auto &kids = tree.at("children");
  ASSERT_EQ(kids.size(), 2u);
  EXPECT_EQ(kids[0].at("size").get<int>() + kids[1].at("size").get<int>(), 9);

  const auto back = dendrogram_from_json(json::parse(j.dump()));
  EXPECT_EQ(back.leaves, d.leaves);
  EXPECT_EQ(back.merges, d.merges);
  auto broken = j;
  broken["merges"].erase(0);
  EXPECT_THROW(dendrogram_from_json(broken), Error);
}

#include <gtest/gtest.h>

#include <voxbayes/baseline.hpp>

using namespace voxbayes;

namespace {

std::vector<std::vector<double>> noise_maps(std::size_t n, std::size_t d, double shift, Rng& rng)
{
  std::vector<std::vector<double>> m(n, std::vector<double>(d));
  for (auto& s : m)
    for (auto& v : s) v = shift + rng.normal();
  return m;
}

double t_quantile_upper(double a, std::size_t n)
{
  return boost::math::quantile(boost::math::complement(boost::math::students_t(double(n - 1)), a));
}

}  // namespace

TEST(TMap, HandComputed)
{
  auto t = t_map({{1.0}, {2.0}, {3.0}});
  EXPECT_NEAR(t[0], 2 * std::sqrt(3.0), 1e-12);
  auto z = t_map({{-1.0, 0.0}, {1.0, 0.0}, {0.0, 0.0}});
  EXPECT_NEAR(z[0], 0.0, 1e-15);
  EXPECT_TRUE(std::isnan(z[1]));
  auto inf = t_map({{2.0, -1.0}, {2.0, -1.0}});
  EXPECT_EQ(inf[0], INFINITY);
  EXPECT_EQ(inf[1], -INFINITY);
  EXPECT_THROW(t_map({{1.0}}), Error);
}

TEST(TMap, AgreesWithSampleSdForm)
{
  Rng rng(1);
  auto m = noise_maps(9, 20, 0.3, rng);
  auto t = t_map(m);
  for (std::size_t k = 0; k < 20; ++k) {
    double mean = 0, ss = 0;
    for (const auto& s : m) mean += s[k] / 9;
    for (const auto& s : m) ss += (s[k] - mean) * (s[k] - mean);
    // population sd over sqrt(n-1) equals sample sd over sqrt(n)
    EXPECT_NEAR(t[k], mean / (std::sqrt(ss / 8) / 3), 1e-10);
  }
}

TEST(PValues, StudentTail)
{
  auto p = t_pvalues({0.0, 2.0, INFINITY, -INFINITY, NAN}, 11);
  EXPECT_NEAR(p[0], 0.5, 1e-14);
  EXPECT_NEAR(p[1], 0.036694, 1e-5);  // t = 2 with 10 degrees of freedom
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(p[3], 1.0);
  EXPECT_TRUE(std::isnan(p[4]));
}

TEST(Multiplicity, BonferroniAndBh)
{
  std::vector<double> p{0.001, 0.008, 0.039, 0.041, 0.042, 0.06, 0.074, 0.205, 0.212, 0.216};
  auto bon = bonferroni(p, 0.05);
  EXPECT_EQ(std::count(bon.begin(), bon.end(), true), 1);
  auto bh = benjamini_hochberg(p, 0.05);
  EXPECT_EQ(std::count(bh.begin(), bh.end(), true), 2);
  // NaN entries are neither counted nor rejected
  auto q = p;
  q.push_back(NAN);
  EXPECT_EQ(benjamini_hochberg(q, 0.05), [&] { auto v = bh; v.push_back(false); return v; }());
  EXPECT_EQ(defined_count(q), 10u);
}

TEST(Multiplicity, BhMatchesEnumeration)
{
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t d = 1 + rng.below(7);
    std::vector<double> p(d);
    for (auto& v : p) v = std::pow(rng.uniform(), 3);
    double alpha = 0.1;
    // largest k such that at least k p-values lie below k alpha / d
    std::size_t kstar = 0;
    for (std::size_t k = 1; k <= d; ++k) {
      std::size_t below = 0;
      for (double v : p) below += v <= k * alpha / d;
      if (below >= k) kstar = k;
    }
    auto bh = benjamini_hochberg(p, alpha);
    auto bon = bonferroni(p, alpha);
    EXPECT_EQ(std::size_t(std::count(bh.begin(), bh.end(), true)), kstar);
    for (std::size_t k = 0; k < d; ++k) {
      if (bon[k]) EXPECT_TRUE(bh[k]);
      if (bh[k]) EXPECT_LE(p[k], kstar * alpha / d);
    }
  }
}

TEST(MaxT, AllZeroData)
{
  std::vector<std::vector<double>> m(5, std::vector<double>(4, 0.0));
  auto r = permutation_max_t(m, 0.05, 50, 1);
  for (bool b : r.reject) EXPECT_FALSE(b);
  for (double t : r.t) EXPECT_TRUE(std::isnan(t));
}

TEST(MaxT, ExhaustiveSignPatterns)
{
  std::vector<std::vector<double>> m{{1.0, 0.5}, {2.0, -0.2}, {1.5, 0.1}, {3.0, 0.4}};
  auto pats = all_sign_patterns(4);
  ASSERT_EQ(pats.size(), 16u);
  auto null = max_t_distribution(m, pats);
  // each value and its global negation are both in the set
  std::vector<double> byhand;
  for (const auto& s : pats) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < 2; ++k) {
      double mean = 0, v = 0;
      for (std::size_t i = 0; i < 4; ++i) mean += s[i] * m[i][k] / 4;
      for (std::size_t i = 0; i < 4; ++i) v += (s[i] * m[i][k] - mean) * (s[i] * m[i][k] - mean) / 4;
      mx = std::max(mx, mean / (std::sqrt(v) / std::sqrt(3.0)));
    }
    byhand.push_back(mx);
  }
  for (std::size_t b = 0; b < 16; ++b) EXPECT_NEAR(null[b], byhand[b], 1e-12);
  EXPECT_EQ(upper_critical(null, 0.05), *std::max_element(null.begin(), null.end()));
}

TEST(MaxT, ThresholdAtLeastPointwiseQuantile)
{
  Rng rng(6);
  auto m = noise_maps(12, 50, 0.0, rng);
  auto r = permutation_max_t(m, 0.05, 400, 3);
  EXPECT_GE(r.threshold, t_quantile_upper(0.05, 12));
  m[0][0] = m[1][0] = 0;
  for (auto& s : m) s[7] += 5;
  auto r2 = permutation_max_t(m, 0.05, 400, 3);
  EXPECT_TRUE(r2.reject[7]);
}

TEST(MaxT, FamilywiseErrorNearLevel)
{
  Rng rng(10);
  int fw = 0;
  const int R = 200;
  for (int r = 0; r < R; ++r) {
    auto m = noise_maps(10, 30, 0.0, rng);
    auto res = permutation_max_t(m, 0.1, 200, r + 1);
    fw += std::count(res.reject.begin(), res.reject.end(), true) > 0;
  }
  EXPECT_LE(fw, R * 0.1 + 3 * std::sqrt(R * 0.09));
}

TEST(Cluster, SingleVoxelAndMerge)
{
  Grid g({5});
  auto c = clusters_of(g, {0, 3, 0, 0, 0}, 1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].size, 1u);
  EXPECT_EQ(c[0].peak, 3);
  EXPECT_EQ(c[0].peak_coord[0], 1);
  EXPECT_EQ(clusters_of(g, {2, 3, 0.5, 2, 2}, 1).size(), 2u);
  EXPECT_EQ(clusters_of(g, {2, 3, 0.5, 2, 2}, 0.4).size(), 1u);  // lower forming threshold merges
  EXPECT_EQ(clusters_of(g, {NAN, 3, NAN, 2, 2}, 1).size(), 2u);
}

TEST(Cluster, SubjectOrderInvariantStatistic)
{
  Rng rng(7);
  Grid g({6, 6});
  auto m = noise_maps(8, 36, 0.0, rng);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t k : {14, 15, 20, 21}) m[i][k] += 4;
  auto a = cluster_size_test(g, m, 0.01, 0.05, 100, 5);
  std::reverse(m.begin(), m.end());
  auto b = cluster_size_test(g, m, 0.01, 0.05, 100, 5);
  ASSERT_EQ(a.clusters.size(), b.clusters.size());
  for (std::size_t c = 0; c < a.clusters.size(); ++c) EXPECT_EQ(a.clusters[c].voxels, b.clusters[c].voxels);
  EXPECT_NEAR(a.forming_threshold, t_quantile_upper(0.01, 8), 1e-12);
  bool found = false;
  for (const auto& c : a.clusters)
    if (std::find(c.voxels.begin(), c.voxels.end(), 14u) != c.voxels.end()) found = c.size >= 4;
  EXPECT_TRUE(found);
}

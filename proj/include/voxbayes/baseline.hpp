#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace voxbayes {

// One-sample t statistic per voxel, T = mean / (sd / sqrt(n-1)) with the population sd.
// Voxels with zero spread and zero mean are undefined (NaN); zero spread with non-zero mean
// gives +/- infinity.
inline std::vector<double> t_map(const std::vector<std::vector<double>>& maps)
{
  const std::size_t n = maps.size();
  if (n < 2) throw usage_error("too-few-subjects", "t statistics need at least two subjects");
  const std::size_t d = maps[0].size();
  std::vector<double> t(d);
  for (std::size_t k = 0; k < d; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += maps[i][k];
    m /= n;
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += (maps[i][k] - m) * (maps[i][k] - m);
    v /= n;
    if (v > 0) t[k] = m / (std::sqrt(v) / std::sqrt(double(n - 1)));
    else if (m == 0) t[k] = std::numeric_limits<double>::quiet_NaN();
    else t[k] = m > 0 ? INFINITY : -INFINITY;
  }
  return t;
}

inline std::vector<std::vector<double>> effect_maps(const Dataset& d)
{
  std::vector<std::vector<double>> m;
  for (const auto& s : d.subjects) m.push_back(s.effects.values);
  return m;
}

// Upper-tail p-values with n-1 degrees of freedom; undefined statistics map to NaN.
inline std::vector<double> t_pvalues(const std::vector<double>& t, std::size_t n)
{
  boost::math::students_t dist(double(n - 1));
  std::vector<double> p(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (std::isnan(t[k])) p[k] = std::numeric_limits<double>::quiet_NaN();
    else if (std::isinf(t[k])) p[k] = t[k] > 0 ? 0.0 : 1.0;
    else p[k] = boost::math::cdf(boost::math::complement(dist, t[k]));
  }
  return p;
}

inline std::size_t defined_count(const std::vector<double>& p)
{
  return static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [](double v) { return !std::isnan(v); }));
}

inline std::vector<bool> bonferroni(const std::vector<double>& p, double alpha)
{
  const double d = double(defined_count(p));
  std::vector<bool> r(p.size(), false);
  for (std::size_t k = 0; k < p.size(); ++k) r[k] = !std::isnan(p[k]) && p[k] < alpha / d;
  return r;
}

// Step-up procedure: reject the k* smallest p-values, k* = max{k : p_(k) <= k alpha / d}.
inline std::vector<bool> benjamini_hochberg(const std::vector<double>& p, double alpha)
{
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (!std::isnan(p[k])) idx.push_back(k);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  const double d = double(idx.size());
  std::size_t kstar = 0;
  for (std::size_t r = 1; r <= idx.size(); ++r)
    if (p[idx[r - 1]] <= r * alpha / d) kstar = r;
  std::vector<bool> out(p.size(), false);
  for (std::size_t r = 0; r < kstar; ++r) out[idx[r]] = true;
  return out;
}

// Sign-flipped copies of the subject maps, pattern bit i negates subject i.
inline std::vector<std::vector<double>> flip(const std::vector<std::vector<double>>& maps, const std::vector<int>& sign)
{
  auto out = maps;
  for (std::size_t i = 0; i < maps.size(); ++i)
    if (sign[i] < 0)
      for (auto& v : out[i]) v = -v;
  return out;
}

inline double max_defined(const std::vector<double>& t)
{
  double mx = -INFINITY;
  for (double v : t)
    if (!std::isnan(v)) mx = std::max(mx, v);
  return mx;
}

// Null distribution of the maximal t statistic over the given sign patterns.
inline std::vector<double> max_t_distribution(const std::vector<std::vector<double>>& maps,
                                              const std::vector<std::vector<int>>& patterns)
{
  std::vector<double> out;
  for (const auto& s : patterns) out.push_back(max_defined(t_map(flip(maps, s))));
  return out;
}

inline std::vector<std::vector<int>> all_sign_patterns(std::size_t n)
{
  std::vector<std::vector<int>> out;
  for (std::size_t b = 0; b < (std::size_t(1) << n); ++b) {
    std::vector<int> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = (b >> i) & 1 ? -1 : 1;
    out.push_back(s);
  }
  return out;
}

inline std::vector<std::vector<int>> random_sign_patterns(std::size_t n, std::size_t reps, std::uint64_t seed)
{
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  for (std::size_t r = 0; r < reps; ++r) {
    std::vector<int> s(n);
    for (auto& v : s) v = rng.coin() ? -1 : 1;
    out.push_back(s);
  }
  return out;
}

// floor(N alpha)-th largest value of a null sample (at least the largest).
inline double upper_critical(std::vector<double> null, double alpha)
{
  if (null.empty()) throw usage_error("bad-reps", "empty permutation distribution");
  std::sort(null.begin(), null.end(), std::greater<>());
  auto r = static_cast<std::size_t>(std::floor(null.size() * alpha));
  r = std::clamp<std::size_t>(r, 1, null.size());
  return null[r - 1];
}

struct MaxTResult {
  std::vector<double> t;
  double threshold = 0;
  std::vector<bool> reject;
  std::vector<double> null;
};

inline MaxTResult permutation_max_t(const std::vector<std::vector<double>>& maps, double alpha, std::size_t reps,
                                    std::uint64_t seed)
{
  MaxTResult r;
  r.t = t_map(maps);
  r.null = max_t_distribution(maps, random_sign_patterns(maps.size(), reps, seed));
  r.threshold = upper_critical(r.null, alpha);
  r.reject.resize(r.t.size());
  for (std::size_t k = 0; k < r.t.size(); ++k) r.reject[k] = !std::isnan(r.t[k]) && r.t[k] > r.threshold;
  return r;
}

struct Cluster {
  std::size_t size = 0;
  double peak = 0;
  Coord peak_coord{0, 0, 0};
  std::vector<std::size_t> voxels;
  bool significant = false;
};

struct ClusterResult {
  double forming_threshold = 0;
  double critical_size = 0;
  std::vector<Cluster> clusters;
  std::vector<double> null;
};

inline std::vector<Cluster> clusters_of(const Grid& g, const std::vector<double>& t, double u)
{
  ScalarMap m(g, t);
  for (auto& v : m.values)
    if (std::isnan(v)) v = -INFINITY;
  std::vector<Cluster> out;
  for (auto& c : connected_components(m, u)) {
    Cluster cl;
    cl.size = c.size();
    cl.peak = -INFINITY;
    for (std::size_t k : c)
      if (m[k] > cl.peak) {
        cl.peak = m[k];
        cl.peak_coord = g.coord(k);
      }
    cl.voxels = std::move(c);
    out.push_back(std::move(cl));
  }
  return out;
}

// Clusters of t above the Student quantile at 1 - forming_alpha; a cluster survives when its
// size exceeds the critical size of the sign-flip distribution of the maximal cluster size.
inline ClusterResult cluster_size_test(const Grid& g, const std::vector<std::vector<double>>& maps,
                                       double forming_alpha, double alpha, std::size_t reps, std::uint64_t seed)
{
  const std::size_t n = maps.size();
  if (n < 2) throw usage_error("too-few-subjects", "t statistics need at least two subjects");
  ClusterResult r;
  r.forming_threshold = boost::math::quantile(boost::math::complement(boost::math::students_t(double(n - 1)), forming_alpha));
  for (const auto& s : random_sign_patterns(n, reps, seed)) {
    std::size_t mx = 0;
    for (const auto& c : clusters_of(g, t_map(flip(maps, s)), r.forming_threshold)) mx = std::max(mx, c.size);
    r.null.push_back(double(mx));
  }
  r.critical_size = upper_critical(r.null, alpha);
  r.clusters = clusters_of(g, t_map(maps), r.forming_threshold);
  for (auto& c : r.clusters) c.significant = double(c.size) > r.critical_size;
  return r;
}

} // namespace voxbayes

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "deform.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace voxbayes {

struct Simulation {
  Dataset data;
  ScalarMap mu;                 // true mean map
  DisplacementSet w;            // true displacement weights
  Parcellation parcellation;
  std::vector<int> truth;       // region activity
  std::vector<int> null_region; // regions carrying essentially no signal
};

namespace detail {

// y_{i,k} = mu(phi_i(k)) + N(0, sigma^2) + N(0, s^2), s = eps |N(0,1)|.
inline void add_subjects(Simulation& sim, const std::vector<std::vector<std::size_t>>& phi, double sigma, double eps,
                         Rng& rng)
{
  const Grid& g = sim.mu.grid;
  sim.data.grid = g;
  for (const auto& ph : phi) {
    SubjectData s{ScalarMap(g), ScalarMap(g)};
    for (std::size_t k = 0; k < g.size(); ++k) {
      double sd = eps * std::abs(rng.normal());
      s.variances[k] = sd * sd;
      s.effects[k] = sim.mu[ph[k]] + sigma * rng.normal() + sd * rng.normal();
    }
    sim.data.subjects.push_back(std::move(s));
  }
}

inline double ball_norm2(const Coord& a, const std::array<double, 3>& c, int rank)
{
  double r2 = 0;
  for (int q = 0; q < rank; ++q) r2 += (a[q] - c[q]) * (a[q] - c[q]);
  return r2;
}

} // namespace detail

struct OneDimConfig {
  int length = 50;
  std::vector<double> centers{10, 25, 33};
  double width = 2;
  double height = 5;
  double sigmaS = 3;
  double omega = 6.5;
  std::size_t n = 40;
  double sigma = 1;
  double eps = 4;
  std::uint64_t seed = 1;
};

// Gaussian bumps on a line, warped through the coarse control lattice.
inline Simulation gen_1d(const OneDimConfig& c)
{
  Rng rng(c.seed);
  Grid g({c.length});
  Simulation sim;
  sim.mu = ScalarMap(g);
  for (std::size_t k = 0; k < g.size(); ++k)
    for (double x0 : c.centers) sim.mu[k] += c.height * std::exp(-(k - x0) * (k - x0) / (2 * c.width * c.width));
  sim.w = DisplacementSet(build_lattice(g, c.omega), c.n);
  for (auto& v : sim.w.w) v = c.sigmaS * rng.normal();
  auto phi = displacement_maps(sim.w);
  detail::add_subjects(sim, phi, c.sigma, c.eps, rng);
  sim.parcellation = Parcellation::single(g);
  sim.truth = {1};
  return sim;
}

// Voronoi cells of N random seeds under face-path distance; ties go to the earlier seed.
inline Parcellation synth_atlas(const Grid& g, std::size_t N, std::uint64_t seed)
{
  if (N == 0 || N > g.size()) throw usage_error("bad-regions", "region count must be between 1 and the voxel count");
  Rng rng(seed);
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::uint32_t> lab(g.size(), UINT32_MAX);
  std::deque<std::size_t> q;
  for (std::size_t j = 0; j < N; ++j) {
    lab[order[j]] = static_cast<std::uint32_t>(j);
    q.push_back(order[j]);
  }
  while (!q.empty()) {
    std::size_t v = q.front();
    q.pop_front();
    for_each_face_neighbour(g, v, [&](std::size_t u) {
      if (lab[u] == UINT32_MAX) {
        lab[u] = lab[v];
        q.push_back(u);
      }
    });
  }
  return Parcellation(g, std::move(lab), N);
}

struct PhantomConfig {
  std::string kind = "disc";  // disc | sphere | spheres | atlas
  std::vector<int> dims{24, 24};
  std::size_t n = 30;
  double sigmaS = 1;
  double omega = 4;
  double sigma = 1;
  double eps = 1;
  double amplitude = 5;
  double diameter = 7;
  double smooth = 0;          // sd of Gaussian pre-smoothing of the mean map (0 = none)
  std::size_t regions = 12;   // atlas
  std::size_t active = 2;     // atlas
  double peak_width = 1.5;    // atlas
  std::uint64_t seed = 1;

  static PhantomConfig disc2d()
  {
    return {};
  }

  static PhantomConfig spheres3d()
  {
    PhantomConfig c;
    c.kind = "spheres";
    c.dims = {24, 32, 32};
    c.n = 40;
    c.sigmaS = 2;
    return c;
  }
};

// Normalized-kernel smoothing used for the optional pre-smoothing.
inline ScalarMap smooth_map(const ScalarMap& m, double sd)
{
  if (sd <= 0) return m;
  const Grid& g = m.grid;
  int R = static_cast<int>(std::ceil(3 * sd));
  std::vector<double> ker(2 * R + 1);
  double z = 0;
  for (int t = -R; t <= R; ++t) z += ker[t + R] = std::exp(-double(t) * t / (2 * sd * sd));
  for (auto& v : ker) v /= z;
  std::vector<double> f = m.values, tmp(f.size());
  for (int a = 0; a < g.rank; ++a) {
    std::size_t st = g.stride(a);
    int L = g.dims[a];
    for (std::size_t k = 0; k < f.size(); ++k) {
      int c = static_cast<int>((k / st) % L);
      double s = 0, wsum = 0;
      for (int t = std::max(-R, -c); t <= std::min(R, L - 1 - c); ++t) {
        s += ker[t + R] * f[k + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(st)];
        wsum += ker[t + R];
      }
      tmp[k] = s / wsum;
    }
    f.swap(tmp);
  }
  return ScalarMap(g, std::move(f));
}

// Dense (one control point per voxel) displacement field. Weights are scaled so that each
// displacement component has standard deviation sigmaS away from the border.
inline std::vector<std::vector<std::size_t>> dense_warp(const Grid& g, std::size_t n, double sigmaS, double omega,
                                                        Rng& rng, DisplacementSet* store = nullptr)
{
  double c1 = 0;
  for (int t = -static_cast<int>(std::ceil(4 * omega)); t <= static_cast<int>(std::ceil(4 * omega)); ++t)
    c1 += std::exp(-double(t) * t / (omega * omega));
  const double wsd = sigmaS / std::sqrt(std::pow(c1, g.rank));
  const std::size_t d = g.size();
  if (store) *store = DisplacementSet(dense_lattice(g, omega), n);
  std::vector<std::vector<std::size_t>> phi;
  std::vector<double> u(d * g.rank);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < g.rank; ++a) {
      std::vector<double> w(d);
      for (auto& v : w) v = wsd * rng.normal();
      if (store)
        for (std::size_t k = 0; k < d; ++k) store->at(i, k, a) = w[k];
      auto f = gaussian_sum_filter(g, std::move(w), omega);
      for (std::size_t k = 0; k < d; ++k) u[k * g.rank + a] = f[k];
    }
    phi.push_back(displacement_map(g, u));
  }
  return phi;
}

inline Simulation gen_grid_phantom(const PhantomConfig& c)
{
  Rng rng(c.seed);
  Grid g(c.dims);
  Simulation sim;
  sim.mu = ScalarMap(g);
  std::vector<std::uint32_t> lab(g.size(), 0);
  const double r2 = (c.diameter / 2) * (c.diameter / 2);
  std::vector<std::array<double, 3>> centers;
  if (c.kind == "disc" || c.kind == "sphere") {
    std::array<double, 3> ctr{0, 0, 0};
    for (int a = 0; a < g.rank; ++a) ctr[a] = g.dims[a] / 2;
    centers.push_back(ctr);
  } else if (c.kind == "spheres") {
    if (g.rank != 3) throw usage_error("bad-phantom", "two-sphere phantom needs a 3-D grid");
    double sep = c.diameter + 2;
    centers.push_back({double(g.dims[0] / 2), double(g.dims[1] / 2), std::round(g.dims[2] / 2.0 - sep / 2)});
    centers.push_back({double(g.dims[0] / 2), double(g.dims[1] / 2), std::round(g.dims[2] / 2.0 - sep / 2) + sep});
  } else if (c.kind != "atlas") {
    throw usage_error("bad-phantom", "unknown phantom kind " + c.kind);
  }

  if (c.kind == "atlas") {
    sim.parcellation = synth_atlas(g, c.regions, mix_seed(c.seed, 7));
    auto members = sim.parcellation.members();
    std::vector<std::size_t> pick(c.regions);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng.engine());
    sim.truth.assign(c.regions, 0);
    for (std::size_t t = 0; t < std::min(c.active, c.regions); ++t) {
      std::size_t j = pick[t];
      sim.truth[j] = 1;
      // peak at the member voxel closest to the region centroid
      std::array<double, 3> cen{0, 0, 0};
      for (std::size_t k : members[j]) {
        Coord v = g.coord(k);
        for (int a = 0; a < g.rank; ++a) cen[a] += v[a];
      }
      for (int a = 0; a < g.rank; ++a) cen[a] /= members[j].size();
      std::size_t best = members[j][0];
      for (std::size_t k : members[j])
        if (detail::ball_norm2(g.coord(k), cen, g.rank) < detail::ball_norm2(g.coord(best), cen, g.rank)) best = k;
      Coord b = g.coord(best);
      centers.push_back({double(b[0]), double(b[1]), double(b[2])});
    }
    for (std::size_t k = 0; k < g.size(); ++k)
      for (const auto& ctr : centers)
        sim.mu[k] += c.amplitude * std::exp(-detail::ball_norm2(g.coord(k), ctr, g.rank) / (2 * c.peak_width * c.peak_width));
    std::vector<double> mean(c.regions, 0);
    for (std::size_t k = 0; k < g.size(); ++k) mean[sim.parcellation.labels[k]] += sim.mu[k];
    sim.null_region.assign(c.regions, 0);
    for (std::size_t j = 0; j < c.regions; ++j)
      sim.null_region[j] = !sim.truth[j] && mean[j] / members[j].size() < 0.01 * c.amplitude;
  } else {
    for (std::size_t k = 0; k < g.size(); ++k)
      for (std::size_t s = 0; s < centers.size(); ++s)
        if (detail::ball_norm2(g.coord(k), centers[s], g.rank) <= r2) {
          sim.mu[k] = c.amplitude;
          lab[k] = static_cast<std::uint32_t>(s + 1);
        }
    sim.parcellation = Parcellation(g, std::move(lab), centers.size() + 1);
    sim.truth.assign(centers.size() + 1, 1);
    sim.truth[0] = 0;
    sim.null_region.assign(centers.size() + 1, 0);
    sim.null_region[0] = 1;
  }
  sim.mu = smooth_map(sim.mu, c.smooth);
  auto phi = dense_warp(g, c.n, c.sigmaS, c.omega, rng);
  detail::add_subjects(sim, phi, c.sigma, c.eps, rng);
  return sim;
}

struct SparseMeans {
  std::vector<double> y;
  std::vector<int> active;
};

// n unit-variance Gaussians; `count` of them have means drawn uniformly in [a, b].
inline SparseMeans gen_sparse_means(std::size_t n, std::size_t count, double a, double b, std::uint64_t seed)
{
  if (count > n) throw usage_error("bad-count", "more active values than observations");
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  SparseMeans s;
  s.y.assign(n, 0.0);
  s.active.assign(n, 0);
  for (std::size_t t = 0; t < count; ++t) {
    s.active[idx[t]] = 1;
    s.y[idx[t]] = a + (b - a) * rng.uniform();
  }
  for (auto& v : s.y) v += rng.normal();
  return s;
}

} // namespace voxbayes

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "volume.hpp"

namespace voxbayes {

// Gaussian radial-basis control lattice. Point coordinates are integer voxel positions.
struct ControlLattice {
  Grid grid;
  double omega = 1.0;
  std::vector<Coord> points;

  std::size_t size() const { return points.size(); }

  double kernel(const Coord& v, std::size_t b) const
  {
    double r2 = 0;
    for (int a = 0; a < grid.rank; ++a) {
      double d = v[a] - points[b][a];
      r2 += d * d;
    }
    return std::exp(-r2 / (2 * omega * omega));
  }
};

namespace detail {

inline std::vector<int> lattice_axis(int L, double omega)
{
  const double s = 2 * omega, m = 2.5 * omega;
  const double room = (L - 1) - 2 * m;
  if (room < 0) return {static_cast<int>(std::round((L - 1) / 2.0))};
  int count = static_cast<int>(std::floor(room / s)) + 1;
  double start = m + (room - (count - 1) * s) / 2;
  std::vector<int> pts;
  for (int i = 0; i < count; ++i) pts.push_back(static_cast<int>(std::round(start + i * s)));
  return pts;
}

} // namespace detail

// Spacing 2*omega, 2.5*omega margin from the grid border, centred; axes too short for the
// margin get a single point at their centre.
inline ControlLattice build_lattice(const Grid& g, double omega)
{
  if (!(omega > 0)) throw usage_error("bad-omega", "kernel bandwidth must be positive");
  ControlLattice lat{g, omega, {}};
  std::array<std::vector<int>, 3> ax;
  for (int a = 0; a < 3; ++a) ax[a] = a < g.rank ? detail::lattice_axis(g.dims[a], omega) : std::vector<int>{0};
  for (int p : ax[0])
    for (int q : ax[1])
      for (int r : ax[2]) lat.points.push_back({p, q, r});
  return lat;
}

// One control point on every voxel.
inline ControlLattice dense_lattice(const Grid& g, double omega)
{
  ControlLattice lat{g, omega, {}};
  lat.points.reserve(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) lat.points.push_back(g.coord(k));
  return lat;
}

// Per-subject weights w_{i,b} in R^rank, stored [subject][point][axis].
struct DisplacementSet {
  ControlLattice lattice;
  std::size_t n = 0;
  std::vector<double> w;

  DisplacementSet() = default;
  DisplacementSet(ControlLattice lat, std::size_t subjects)
    : lattice(std::move(lat)), n(subjects), w(subjects * lattice.size() * lattice.grid.rank, 0.0) {}

  int rank() const { return lattice.grid.rank; }
  std::size_t B() const { return lattice.size(); }
  double& at(std::size_t i, std::size_t b, int a) { return w[(i * B() + b) * rank() + a]; }
  double at(std::size_t i, std::size_t b, int a) const { return w[(i * B() + b) * rank() + a]; }
  double* block(std::size_t i, std::size_t b) { return &w[(i * B() + b) * rank()]; }
  const double* block(std::size_t i, std::size_t b) const { return &w[(i * B() + b) * rank()]; }

  double sum_squares() const
  {
    double s = 0;
    for (double v : w) s += v * v;
    return s;
  }
};

// Voxels influenced by each control point together with kernel values.
// With a cutoff, only voxels within 4*omega are kept; exact mode keeps every voxel.
struct KernelSupport {
  std::vector<std::vector<std::size_t>> voxels;
  std::vector<std::vector<double>> weights;

  KernelSupport() = default;
  KernelSupport(const ControlLattice& lat, bool exact = false)
  {
    const Grid& g = lat.grid;
    const double cut = 4 * lat.omega;
    voxels.resize(lat.size());
    weights.resize(lat.size());
    for (std::size_t b = 0; b < lat.size(); ++b) {
      Coord lo{0, 0, 0}, hi{0, 0, 0};
      for (int a = 0; a < g.rank; ++a) {
        lo[a] = exact ? 0 : std::max(0, static_cast<int>(std::floor(lat.points[b][a] - cut)));
        hi[a] = exact ? g.dims[a] - 1 : std::min(g.dims[a] - 1, static_cast<int>(std::ceil(lat.points[b][a] + cut)));
      }
      Coord c{0, 0, 0};
      for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
        for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1])
          for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2]) {
            double r2 = 0;
            for (int a = 0; a < g.rank; ++a) r2 += double(c[a] - lat.points[b][a]) * (c[a] - lat.points[b][a]);
            if (!exact && r2 > cut * cut) continue;
            voxels[b].push_back(g.index(c));
            weights[b].push_back(std::exp(-r2 / (2 * lat.omega * lat.omega)));
          }
    }
  }
};

// Continuous displacement u_i(v_k), stored [voxel][axis].
inline std::vector<double> interpolate_field(const DisplacementSet& ds, std::size_t i, const KernelSupport& ks)
{
  const int r = ds.rank();
  std::vector<double> u(ds.lattice.grid.size() * r, 0.0);
  for (std::size_t b = 0; b < ds.B(); ++b) {
    const double* wb = ds.block(i, b);
    const auto& vox = ks.voxels[b];
    const auto& kw = ks.weights[b];
    for (std::size_t t = 0; t < vox.size(); ++t)
      for (int a = 0; a < r; ++a) u[vox[t] * r + a] += kw[t] * wb[a];
  }
  return u;
}

inline std::vector<double> interpolate_field(const DisplacementSet& ds, std::size_t i, bool exact = false)
{
  return interpolate_field(ds, i, KernelSupport(ds.lattice, exact));
}

// Target voxel of k after displacement u: per-axis rounding, then clamping into the grid.
inline std::size_t displace_index(const Grid& g, std::size_t k, const double* u)
{
  Coord c = g.coord(k);
  for (int a = 0; a < g.rank; ++a) {
    long t = std::lround(c[a] + u[a]);
    c[a] = static_cast<int>(std::clamp<long>(t, 0, g.dims[a] - 1));
  }
  return g.index(c);
}

inline std::vector<std::size_t> displacement_map(const Grid& g, const std::vector<double>& u)
{
  std::vector<std::size_t> phi(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) phi[k] = displace_index(g, k, &u[k * g.rank]);
  return phi;
}

inline std::vector<std::vector<std::size_t>> displacement_maps(const DisplacementSet& ds, bool exact = false)
{
  KernelSupport ks(ds.lattice, exact);
  std::vector<std::vector<std::size_t>> phi;
  for (std::size_t i = 0; i < ds.n; ++i) phi.push_back(displacement_map(ds.lattice.grid, interpolate_field(ds, i, ks)));
  return phi;
}

inline std::vector<std::size_t> identity_map(const Grid& g)
{
  std::vector<std::size_t> phi(g.size());
  for (std::size_t k = 0; k < phi.size(); ++k) phi[k] = k;
  return phi;
}

// Separable Gaussian smoothing of a field sampled on every voxel:
// out(v) = sum_b exp(-|v-b|^2 / (2 omega^2)) in(b), truncated at 4 omega.
inline std::vector<double> gaussian_sum_filter(const Grid& g, std::vector<double> f, double omega)
{
  int R = static_cast<int>(std::ceil(4 * omega));
  std::vector<double> ker(2 * R + 1);
  for (int t = -R; t <= R; ++t) ker[t + R] = std::exp(-double(t) * t / (2 * omega * omega));
  std::vector<double> tmp(f.size());
  for (int a = 0; a < g.rank; ++a) {
    std::size_t st = g.stride(a);
    int L = g.dims[a];
    for (std::size_t k = 0; k < f.size(); ++k) {
      int c = static_cast<int>((k / st) % L);
      double s = 0;
      int lo = std::max(-R, -c), hi = std::min(R, L - 1 - c);
      for (int t = lo; t <= hi; ++t) s += ker[t + R] * f[k + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(st)];
      tmp[k] = s;
    }
    f.swap(tmp);
  }
  return f;
}

} // namespace voxbayes

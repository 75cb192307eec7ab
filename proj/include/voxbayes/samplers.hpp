#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "deform.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace voxbayes {

struct ChainConfig {
  std::size_t iterations = 1000;  // kept sweeps after burn-in
  std::size_t burn_in = 100;
  std::size_t thin = 1;
  double rw_sigma = 0.5;
  double target_accept = 0.1;
  std::size_t adapt_window = 50;
  bool exact_kernel = false;
  std::uint64_t seed = 1;
};

struct SaemConfig {
  std::size_t burn_in = 500;     // K_0: iterations with unit averaging weight
  std::size_t iterations = 1000; // K: total
  double rw_sigma = 0.5;
  std::uint64_t seed = 1;
};

struct AnnealConfig {
  std::size_t steps = 100;
  double tau = 0.99;
  double rw_sigma = 1.0;
  std::uint64_t seed = 1;
};

// Observations y_{i,l}, s^2_{i,l} flattened as o = i*d + l.
struct Observations {
  Grid grid;
  std::size_t n = 0, d = 0;
  std::vector<double> y, s2;

  static Observations from(const Dataset& data)
  {
    Observations ob;
    ob.grid = data.grid;
    ob.n = data.n();
    ob.d = data.grid.size();
    ob.y.reserve(ob.n * ob.d);
    ob.s2.reserve(ob.n * ob.d);
    for (const auto& s : data.subjects) {
      ob.y.insert(ob.y.end(), s.effects.values.begin(), s.effects.values.end());
      ob.s2.insert(ob.s2.end(), s.variances.values.begin(), s.variances.values.end());
    }
    return ob;
  }
};

// A set of target voxels (grouped in regions) and observations assigned to them.
struct BlockModel {
  std::vector<std::size_t> voxel;       // local -> global index
  std::vector<int> region;              // local voxel -> local region
  std::vector<std::size_t> region_size; // d_j
  std::vector<double> y, s2;
  std::vector<std::size_t> target;      // observation -> local voxel

  std::size_t voxels() const { return voxel.size(); }
  std::size_t regions() const { return region_size.size(); }
  std::size_t observations() const { return y.size(); }

  // Whole grid, every observation kept, o = i*d + l, target given by phi (identity if empty).
  static BlockModel full(const Observations& ob, const Parcellation& parc,
                         const std::vector<std::vector<std::size_t>>& phi = {})
  {
    BlockModel m;
    m.voxel.resize(ob.d);
    m.region.resize(ob.d);
    m.region_size = parc.sizes();
    for (std::size_t k = 0; k < ob.d; ++k) {
      m.voxel[k] = k;
      m.region[k] = static_cast<int>(parc.labels[k]);
    }
    m.y = ob.y;
    m.s2 = ob.s2;
    m.target.resize(ob.n * ob.d);
    for (std::size_t i = 0; i < ob.n; ++i)
      for (std::size_t l = 0; l < ob.d; ++l) m.target[i * ob.d + l] = phi.empty() ? l : phi[i][l];
    return m;
  }

  // Voxels of region j and the observations displaced into them.
  static BlockModel restricted(const Observations& ob, const Parcellation& parc, std::size_t j,
                               const std::vector<std::vector<std::size_t>>& phi = {})
  {
    BlockModel m;
    std::vector<std::size_t> local(ob.d, SIZE_MAX);
    for (std::size_t k = 0; k < ob.d; ++k)
      if (parc.labels[k] == j) {
        local[k] = m.voxel.size();
        m.voxel.push_back(k);
        m.region.push_back(0);
      }
    m.region_size = {m.voxel.size()};
    for (std::size_t i = 0; i < ob.n; ++i)
      for (std::size_t l = 0; l < ob.d; ++l) {
        std::size_t k = phi.empty() ? l : phi[i][l];
        if (local[k] == SIZE_MAX) continue;
        m.y.push_back(ob.y[i * ob.d + l]);
        m.s2.push_back(ob.s2[i * ob.d + l]);
        m.target.push_back(local[k]);
      }
    return m;
  }
};

// Kernel-interpolated displacement fields and the induced voxel maps for every subject.
// Proposals for one weight block are evaluated without committing.
class Warp {
public:
  struct Change {
    std::size_t l, from, to;
  };

  Warp() = default;
  Warp(DisplacementSet ds, bool exact = false) : ds_(std::move(ds)), ks_(ds_.lattice, exact), ks_exact_(exact)
  {
    const Grid& g = ds_.lattice.grid;
    d_ = g.size();
    r_ = g.rank;
    u_.assign(ds_.n * d_ * r_, 0.0);
    phi_.resize(ds_.n * d_);
    for (std::size_t i = 0; i < ds_.n; ++i) {
      auto u = interpolate_field(ds_, i, ks_);
      std::copy(u.begin(), u.end(), u_.begin() + i * d_ * r_);
      for (std::size_t l = 0; l < d_; ++l) phi_[i * d_ + l] = displace_index(g, l, &u[l * r_]);
    }
  }

  const DisplacementSet& weights() const { return ds_; }
  std::size_t n() const { return ds_.n; }
  std::size_t B() const { return ds_.B(); }
  int rank() const { return r_; }
  std::size_t target(std::size_t i, std::size_t l) const { return phi_[i * d_ + l]; }
  const std::vector<std::size_t>& targets() const { return phi_; }

  std::vector<std::vector<std::size_t>> maps() const
  {
    std::vector<std::vector<std::size_t>> m(ds_.n);
    for (std::size_t i = 0; i < ds_.n; ++i) m[i].assign(phi_.begin() + i * d_, phi_.begin() + (i + 1) * d_);
    return m;
  }

  // Voxels whose target changes if block (i,b) takes value wnew.
  const std::vector<Change>& propose(std::size_t i, std::size_t b, const double* wnew)
  {
    pi_ = i;
    pb_ = b;
    changes_.clear();
    const double* wold = ds_.block(i, b);
    for (int a = 0; a < r_; ++a) dw_[a] = wnew[a] - wold[a];
    const auto& vox = ks_.voxels[b];
    const auto& kw = ks_.weights[b];
    const Grid& g = ds_.lattice.grid;
    double un[3];
    for (std::size_t t = 0; t < vox.size(); ++t) {
      std::size_t l = vox[t];
      const double* u = &u_[(i * d_ + l) * r_];
      for (int a = 0; a < r_; ++a) un[a] = u[a] + kw[t] * dw_[a];
      std::size_t k = displace_index(g, l, un);
      if (k != phi_[i * d_ + l]) changes_.push_back({l, phi_[i * d_ + l], k});
    }
    return changes_;
  }

  void accept()
  {
    const auto& vox = ks_.voxels[pb_];
    const auto& kw = ks_.weights[pb_];
    for (std::size_t t = 0; t < vox.size(); ++t) {
      double* u = &u_[(pi_ * d_ + vox[t]) * r_];
      for (int a = 0; a < r_; ++a) u[a] += kw[t] * dw_[a];
    }
    for (const auto& c : changes_) phi_[pi_ * d_ + c.l] = c.to;
    double* w = ds_.block(pi_, pb_);
    for (int a = 0; a < r_; ++a) w[a] += dw_[a];
  }

  // Replace all weights at once.
  void assign(const DisplacementSet& ds) { *this = Warp(ds, ks_exact_); }

private:
  DisplacementSet ds_;
  KernelSupport ks_;
  bool ks_exact_ = false;
  std::size_t d_ = 0;
  int r_ = 1;
  std::vector<double> u_;
  std::vector<std::size_t> phi_;
  std::vector<Change> changes_;
  std::size_t pi_ = 0, pb_ = 0;
  double dw_[3] = {0, 0, 0};
};

// Random-walk scale tuned over windows of proposals during burn-in, frozen afterwards.
struct RwTuner {
  double sigma = 0.5;
  double target = 0.1;
  std::size_t window = 50;
  std::size_t tried = 0, accepted = 0;
  std::size_t total_tried = 0, total_accepted = 0;
  bool adapting = true;

  void record(bool acc)
  {
    ++total_tried;
    total_accepted += acc;
    if (!adapting) return;
    ++tried;
    accepted += acc;
    if (tried == window) {
      double rate = double(accepted) / tried;
      sigma *= rate > target ? 1.1 : 0.9;
      tried = accepted = 0;
    }
  }

  double rate() const { return total_tried ? double(total_accepted) / total_tried : 0.0; }
};

struct ChainTrace {
  std::vector<GroupParams> draws;
  std::vector<double> mu_mean;  // posterior mean of mu, indexed by local voxel
  double accept_rate = 0;
  double rw_sigma = 0;
};

// Metropolis-within-Gibbs over (x, mu, eta, nu2, sigma2, sigma_S^2, w).
// Without a warp the displacement is fixed by the model's targets.
class GibbsSampler {
public:
  GibbsSampler(BlockModel model, Hyperparams h, Network gamma, std::uint64_t seed,
               std::optional<Warp> warp = std::nullopt, std::size_t grid_voxels = 0)
    : m_(std::move(model)), h_(std::move(h)), g_(std::move(gamma)), rng_(seed), warp_(std::move(warp))
  {
    if (g_.size() != m_.regions()) throw usage_error("bad-network", "network length differs from region count");
    if (warp_) {
      d_ = grid_voxels ? grid_voxels : m_.voxels();
      for (std::size_t o = 0; o < m_.observations(); ++o) m_.target[o] = warp_->target(o / d_, o % d_);
    }
    x_ = m_.y;
    mu_.assign(m_.voxels(), 0.0);
    init_mu();
    th_ = m_step(stats(), g_, m_.region_size, weight_count(), h_);
  }

  const GroupParams& params() const { return th_; }
  void set_params(const GroupParams& th) { th_ = th; }
  const Network& network() const { return g_; }
  const Hyperparams& hyper() const { return h_; }
  GroupParams maximize(const SufficientStats& s) const { return m_step(s, g_, m_.region_size, weight_count(), h_); }
  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& x() const { return x_; }
  const BlockModel& model() const { return m_; }
  const std::optional<Warp>& warp() const { return warp_; }
  RwTuner& tuner() { return tuner_; }
  Rng& rng() { return rng_; }
  std::size_t weight_count() const { return warp_ ? warp_->weights().w.size() : 0; }

  void update_x()
  {
    for (std::size_t o = 0; o < x_.size(); ++o) {
      std::size_t v = m_.target[o];
      double sg = th_.sigma2[m_.region[v]], s2 = m_.s2[o];
      if (s2 <= 0) {
        x_[o] = m_.y[o];
        continue;
      }
      double mean = (sg * m_.y[o] + s2 * mu_[v]) / (sg + s2);
      double var = sg * s2 / (sg + s2);
      x_[o] = mean + std::sqrt(var) * rng_.normal();
    }
  }

  void update_mu()
  {
    count_and_sum();
    for (std::size_t v = 0; v < mu_.size(); ++v) {
      int j = m_.region[v];
      double prec = 1 / th_.nu2[j] + cnt_[v] / th_.sigma2[j];
      double mean = (th_.eta[j] / th_.nu2[j] + sumx_[v] / th_.sigma2[j]) / prec;
      mu_[v] = mean + rng_.normal() / std::sqrt(prec);
    }
  }

  void update_eta_nu()
  {
    const std::size_t N = m_.regions();
    std::vector<double> s(N, 0), ss(N, 0);
    for (std::size_t v = 0; v < mu_.size(); ++v) {
      double c = mu_[v] - (g_[m_.region[v]] ? h_.m : 0.0);
      s[m_.region[v]] += c;
      ss[m_.region[v]] += c * c;
    }
    for (std::size_t j = 0; j < N; ++j) {
      double dj = static_cast<double>(m_.region_size[j]);
      if (g_[j]) {
        double scale = h_.beta + 0.5 * (ss[j] - s[j] * s[j] / (dj + h_.lambda));
        th_.nu2[j] = rng_.inv_gamma(h_.alpha + dj / 2, scale);
        th_.eta[j] = h_.m + s[j] / (dj + h_.lambda) + rng_.normal() * std::sqrt(th_.nu2[j] / (dj + h_.lambda));
      } else {
        th_.nu2[j] = rng_.inv_gamma(h_.alpha + dj / 2, h_.beta + 0.5 * ss[j]);
        th_.eta[j] = 0;
      }
    }
  }

  void update_sigma2()
  {
    const std::size_t N = m_.regions();
    std::vector<double> n(N, 0), rss(N, 0);
    for (std::size_t o = 0; o < x_.size(); ++o) {
      std::size_t v = m_.target[o];
      double r = x_[o] - mu_[v];
      n[m_.region[v]] += 1;
      rss[m_.region[v]] += r * r;
    }
    for (std::size_t j = 0; j < N; ++j) th_.sigma2[j] = rng_.inv_gamma(h_.alpha + n[j] / 2, h_.beta + rss[j] / 2);
  }

  void update_sigmaS2()
  {
    if (!warp_) return;
    const auto& ds = warp_->weights();
    th_.sigmaS2 = rng_.inv_gamma(h_.alpha + ds.w.size() / 2.0, h_.beta + ds.sum_squares() / 2);
  }

  // Random-walk proposals for every block w_{i,b}; acceptance uses pi(w|sigma_S^2) pi(x_i|mu,sigma2,w_i).
  void update_w()
  {
    if (!warp_) return;
    const int r = warp_->rank();
    double wn[3];
    for (std::size_t i = 0; i < warp_->n(); ++i)
      for (std::size_t b = 0; b < warp_->B(); ++b) {
        const double* w = warp_->weights().block(i, b);
        double dprior = 0;
        for (int a = 0; a < r; ++a) {
          wn[a] = w[a] + tuner_.sigma * rng_.normal();
          dprior += (w[a] * w[a] - wn[a] * wn[a]) / (2 * th_.sigmaS2);
        }
        const auto& ch = warp_->propose(i, b, wn);
        double dl = 0;
        for (const auto& c : ch) {
          std::size_t o = i * d_ + c.l;
          dl += log_normal(x_[o], mu_[c.to], th_.sigma2[m_.region[c.to]]) -
                log_normal(x_[o], mu_[c.from], th_.sigma2[m_.region[c.from]]);
        }
        bool acc = std::log(rng_.uniform()) < dl + dprior;
        if (acc) {
          for (const auto& c : ch) m_.target[i * d_ + c.l] = c.to;
          warp_->accept();
        }
        tuner_.record(acc);
      }
  }

  // One full sweep in the fixed order x, mu, (eta, nu2), sigma2, sigma_S^2, w.
  void sweep()
  {
    update_x();
    update_mu();
    update_eta_nu();
    update_sigma2();
    update_sigmaS2();
    update_w();
  }

  // Latent moves only (theta held), as used by the simulation step of SAEM.
  void sweep_latent()
  {
    update_x();
    update_mu();
    update_w();
  }

  SufficientStats stats() const
  {
    const std::size_t N = m_.regions();
    SufficientStats s(N);
    for (std::size_t o = 0; o < x_.size(); ++o) {
      std::size_t v = m_.target[o];
      double r = x_[o] - mu_[v];
      s.s1[m_.region[v]] += 0.5;
      s.s2[m_.region[v]] += 0.5 * r * r;
    }
    for (std::size_t v = 0; v < mu_.size(); ++v) {
      s.s3[m_.region[v]] += 0.5 * mu_[v] * mu_[v];
      if (g_[m_.region[v]]) s.s4[m_.region[v]] += mu_[v];
    }
    for (std::size_t j = 0; j < N; ++j) {
      s.s2[j] += h_.beta;
      s.s3[j] += h_.beta;
    }
    s.sS = warp_ ? h_.beta + 0.5 * warp_->weights().sum_squares() : 0.0;
    return s;
  }

  // log pi(theta* | z, y): product of the full conditionals of (eta, nu2), sigma2 and sigma_S^2.
  double log_conditional(const GroupParams& ts) const
  {
    const std::size_t N = m_.regions();
    std::vector<double> s(N, 0), ss(N, 0), n(N, 0), rss(N, 0);
    for (std::size_t v = 0; v < mu_.size(); ++v) {
      double c = mu_[v] - (g_[m_.region[v]] ? h_.m : 0.0);
      s[m_.region[v]] += c;
      ss[m_.region[v]] += c * c;
    }
    for (std::size_t o = 0; o < x_.size(); ++o) {
      std::size_t v = m_.target[o];
      double r = x_[o] - mu_[v];
      n[m_.region[v]] += 1;
      rss[m_.region[v]] += r * r;
    }
    double lp = 0;
    for (std::size_t j = 0; j < N; ++j) {
      double dj = static_cast<double>(m_.region_size[j]);
      if (g_[j]) {
        lp += log_inv_gamma(ts.nu2[j], h_.alpha + dj / 2, h_.beta + 0.5 * (ss[j] - s[j] * s[j] / (dj + h_.lambda)));
        lp += log_normal(ts.eta[j], h_.m + s[j] / (dj + h_.lambda), ts.nu2[j] / (dj + h_.lambda));
      } else {
        lp += log_inv_gamma(ts.nu2[j], h_.alpha + dj / 2, h_.beta + 0.5 * ss[j]);
      }
      lp += log_inv_gamma(ts.sigma2[j], h_.alpha + n[j] / 2, h_.beta + rss[j] / 2);
    }
    if (warp_) {
      const auto& ds = warp_->weights();
      lp += log_inv_gamma(ts.sigmaS2, h_.alpha + ds.w.size() / 2.0, h_.beta + ds.sum_squares() / 2);
    }
    return lp;
  }

private:
  void count_and_sum()
  {
    cnt_.assign(mu_.size(), 0.0);
    sumx_.assign(mu_.size(), 0.0);
    for (std::size_t o = 0; o < x_.size(); ++o) {
      cnt_[m_.target[o]] += 1;
      sumx_[m_.target[o]] += x_[o];
    }
  }

  void init_mu()
  {
    count_and_sum();
    for (std::size_t v = 0; v < mu_.size(); ++v) mu_[v] = cnt_[v] > 0 ? sumx_[v] / cnt_[v] : 0.0;
  }

  BlockModel m_;
  Hyperparams h_;
  Network g_;
  Rng rng_;
  std::optional<Warp> warp_;
  std::size_t d_ = 0;
  GroupParams th_;
  std::vector<double> x_, mu_, cnt_, sumx_;
  RwTuner tuner_;
};

inline ChainTrace run_chain(GibbsSampler& s, const ChainConfig& cfg)
{
  s.tuner().sigma = cfg.rw_sigma;
  s.tuner().target = cfg.target_accept;
  s.tuner().window = cfg.adapt_window;
  s.tuner().adapting = true;
  for (std::size_t t = 0; t < cfg.burn_in; ++t) s.sweep();
  s.tuner().adapting = false;
  s.tuner().total_tried = s.tuner().total_accepted = 0;
  ChainTrace tr;
  tr.mu_mean.assign(s.mu().size(), 0.0);
  std::size_t kept = 0;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    s.sweep();
    if ((t + 1) % std::max<std::size_t>(cfg.thin, 1) == 0) {
      tr.draws.push_back(s.params());
      ++kept;
      for (std::size_t v = 0; v < tr.mu_mean.size(); ++v) tr.mu_mean[v] += (s.mu()[v] - tr.mu_mean[v]) / kept;
    }
  }
  tr.accept_rate = s.tuner().rate();
  tr.rw_sigma = s.tuner().sigma;
  return tr;
}

// SAEM with unit averaging weights for the first K_0 iterations and 1/k afterwards.
inline GroupParams saem_fit(GibbsSampler& s, const SaemConfig& cfg)
{
  s.tuner().sigma = cfg.rw_sigma;
  s.tuner().adapting = true;
  SufficientStats acc = s.stats();
  for (std::size_t k = 1; k <= cfg.iterations; ++k) {
    s.sweep_latent();
    double c = k <= cfg.burn_in ? 1.0 : 1.0 / double(k - cfg.burn_in);
    if (k > cfg.burn_in) s.tuner().adapting = false;
    acc.blend(s.stats(), c);
    s.set_params(s.maximize(acc));
  }
  s.tuner().adapting = false;
  return s.params();
}


// Displacement weights moved against the marginal likelihood f(y | w, theta), with x and mu
// integrated out. Theta is fixed; block sums are kept per target voxel and patched per move.
class MarginalWarp {
public:
  MarginalWarp(const Observations& ob, const Parcellation& parc, GroupParams th, Warp warp)
    : ob_(&ob), parc_(&parc), th_(std::move(th)), warp_(std::move(warp))
  {
    rebuild();
    stamp_.assign(ob.d, 0);
    tmp_.resize(ob.d);
  }

  const Warp& warp() const { return warp_; }
  const GroupParams& params() const { return th_; }

  void rebuild()
  {
    acc_.assign(ob_->d, BlockAccum{});
    for (std::size_t o = 0; o < ob_->y.size(); ++o) {
      std::size_t k = warp_.targets()[o];
      acc_[k].add(ob_->y[o], ob_->s2[o], th_.sigma2[parc_->labels[k]]);
    }
  }

  double loglik() const
  {
    double ll = 0;
    for (std::size_t k = 0; k < acc_.size(); ++k) ll += block_ll(k, acc_[k]);
    return ll;
  }

  double log_prior() const { return log_prior_weights(warp_.weights(), th_.sigmaS2); }

  // Change in log f(y | w, theta) if block (i,b) is set to wnew.
  double propose(std::size_t i, std::size_t b, const double* wnew)
  {
    const auto& ch = warp_.propose(i, b, wnew);
    ++epoch_;
    touched_.clear();
    for (const auto& c : ch) {
      std::size_t o = i * ob_->d + c.l;
      touch(c.from).add(ob_->y[o], ob_->s2[o], th_.sigma2[parc_->labels[c.from]], -1.0);
      touch(c.to).add(ob_->y[o], ob_->s2[o], th_.sigma2[parc_->labels[c.to]], 1.0);
    }
    double dl = 0;
    for (std::size_t k : touched_) dl += block_ll(k, tmp_[k]) - block_ll(k, acc_[k]);
    return dl;
  }

  void accept()
  {
    for (std::size_t k : touched_) acc_[k] = tmp_[k];
    warp_.accept();
  }

private:
  double block_ll(std::size_t k, const BlockAccum& a) const
  {
    auto j = parc_->labels[k];
    return a.loglik(th_.eta[j], th_.nu2[j]);
  }

  BlockAccum& touch(std::size_t k)
  {
    if (stamp_[k] != epoch_) {
      stamp_[k] = epoch_;
      tmp_[k] = acc_[k];
      touched_.push_back(k);
    }
    return tmp_[k];
  }

  const Observations* ob_;
  const Parcellation* parc_;
  GroupParams th_;
  Warp warp_;
  std::vector<BlockAccum> acc_, tmp_;
  std::vector<std::uint64_t> stamp_;
  std::vector<std::size_t> touched_;
  std::uint64_t epoch_ = 0;
};

inline double log_rw_density(const double* from, const double* to, int r, double sd)
{
  double lp = 0;
  for (int a = 0; a < r; ++a) lp += log_normal(to[a], from[a], sd * sd);
  return lp;
}

struct AnnealResult {
  DisplacementSet best;
  double best_objective = -INFINITY;  // log f(y|w,theta) + log pi(w|sigma_S^2) at best
  std::vector<double> objective;      // after each temperature step
};

// Simulated annealing on f(y|w,theta)^a pi(w; 0, sigma_S^2/a) with a_t = tau^(-t); proposal
// variance rw_sigma^2 / a_t. Returns the best state visited.
inline AnnealResult simulated_annealing(MarginalWarp& mw, const AnnealConfig& cfg)
{
  Rng rng(cfg.seed);
  const double sS2 = mw.params().sigmaS2;
  if (!(sS2 > 0)) throw usage_error("no-spatial-uncertainty", "annealing needs sigma_S^2 > 0");
  AnnealResult res;
  double obj = mw.loglik() + mw.log_prior();
  res.best = mw.warp().weights();
  res.best_objective = obj;
  const int r = mw.warp().rank();
  double wn[3];
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    double a = std::pow(cfg.tau, -double(t));
    double sd = cfg.rw_sigma / std::sqrt(a);
    for (std::size_t i = 0; i < mw.warp().n(); ++i)
      for (std::size_t b = 0; b < mw.warp().B(); ++b) {
        const double* w = mw.warp().weights().block(i, b);
        double dprior = 0;
        for (int q = 0; q < r; ++q) {
          wn[q] = w[q] + sd * rng.normal();
          dprior += (w[q] * w[q] - wn[q] * wn[q]) / (2 * sS2);
        }
        double d = mw.propose(i, b, wn) + dprior;
        if (std::log(rng.uniform()) < a * d) {
          mw.accept();
          obj += d;
          if (obj > res.best_objective) {
            res.best_objective = obj;
            res.best = mw.warp().weights();
          }
        }
      }
    mw.rebuild();
    obj = mw.loglik() + mw.log_prior();
    res.objective.push_back(obj);
  }
  return res;
}

} // namespace voxbayes

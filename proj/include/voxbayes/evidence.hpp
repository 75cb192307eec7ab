#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "samplers.hpp"

namespace voxbayes {

enum class Mode { no_su, posterior_mode_su, exact_su };

inline Mode parse_mode(const std::string& s)
{
  if (s == "no-SU") return Mode::no_su;
  if (s == "posterior-mode-SU") return Mode::posterior_mode_su;
  if (s == "exact-SU") return Mode::exact_su;
  throw usage_error("bad-mode", "mode must be no-SU, posterior-mode-SU or exact-SU");
}

inline std::string mode_name(Mode m)
{
  switch (m) {
    case Mode::no_su: return "no-SU";
    case Mode::posterior_mode_su: return "posterior-mode-SU";
    case Mode::exact_su: return "exact-SU";
  }
  return "?";
}

struct PipelineConfig {
  Mode mode = Mode::posterior_mode_su;
  double omega = 4.0;
  SaemConfig saem{};
  ChainConfig chain{};
  AnnealConfig anneal{};
  std::size_t reduced_base = 3000;  // exact SU: block updates per reduced run
  std::size_t reduced_min = 100;    // exact SU: minimum sweeps per reduced run
  std::size_t exact_block_cap = 4096;  // exact SU: largest n * B accepted
  std::uint64_t seed = 1;
};

inline double log_mean_exp(const std::vector<double>& v)
{
  if (v.empty()) return -INFINITY;
  double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / v.size());
}

// Seeds depend on region content (its first voxel) so that relabelling a parcellation or
// listing it twice reproduces the same Monte-Carlo streams.
inline std::uint64_t region_seed(std::uint64_t seed, const Parcellation& parc, std::size_t j, std::uint64_t tag)
{
  std::size_t first = parc.labels.size();
  for (std::size_t k = 0; k < parc.labels.size(); ++k)
    if (parc.labels[k] == j) {
      first = k;
      break;
    }
  return mix_seed(mix_seed(seed, first), tag);
}

struct RegionEvidence {
  double log_m = 0;          // log m(y^j | gamma_j)
  double log_lik = 0;        // log f(y^j | w, theta*)
  double log_prior = 0;      // log pi(theta* | gamma_j)
  double log_ordinate = 0;   // log pi-hat(theta* | y^j, gamma_j)
  GroupParams theta;         // theta* (one region)
};

inline double block_model_loglik(const BlockModel& m, const GroupParams& th)
{
  std::vector<BlockAccum> acc(m.voxels());
  for (std::size_t o = 0; o < m.observations(); ++o)
    acc[m.target[o]].add(m.y[o], m.s2[o], th.sigma2[m.region[m.target[o]]]);
  double ll = 0;
  for (std::size_t v = 0; v < acc.size(); ++v) ll += acc[v].loglik(th.eta[m.region[v]], th.nu2[m.region[v]]);
  return ll;
}

// Chib estimate for one region with displacements held fixed (identity maps when phi is empty):
// SAEM gives theta*, then a Gibbs run supplies the Rao-Blackwell ordinate.
inline RegionEvidence chib_marginal_region(const Observations& ob, const Parcellation& parc, std::size_t j, int gamma,
                                           const Hyperparams& h, const PipelineConfig& cfg,
                                           const std::vector<std::vector<std::size_t>>& phi = {})
{
  BlockModel bm = BlockModel::restricted(ob, parc, j, phi);
  if (bm.voxels() == 0) throw data_error("empty-region", "region " + std::to_string(j) + " has no voxels");
  std::uint64_t seed = region_seed(cfg.seed, parc, j, 10 + gamma);
  GibbsSampler s(bm, h, Network{gamma}, seed);
  SaemConfig sc = cfg.saem;
  GroupParams ts = saem_fit(s, sc);
  RegionEvidence ev;
  ev.theta = ts;
  ev.log_lik = block_model_loglik(s.model(), ts);
  ev.log_prior = log_prior_region(ts.eta[0], ts.nu2[0], ts.sigma2[0], gamma, h);
  for (std::size_t t = 0; t < cfg.chain.burn_in; ++t) s.sweep();
  std::vector<double> lc;
  lc.reserve(cfg.chain.iterations);
  for (std::size_t t = 0; t < cfg.chain.iterations; ++t) {
    s.sweep();
    lc.push_back(s.log_conditional(ts));
  }
  ev.log_ordinate = log_mean_exp(lc);
  ev.log_m = ev.log_lik + ev.log_prior - ev.log_ordinate;
  if (!std::isfinite(ev.log_m)) throw numerical_error("non-finite-evidence", "region evidence is not finite");
  return ev;
}

struct RegionSelection {
  double log_m0 = 0, log_m1 = 0;
  double B = 0;   // log Bayes factor active vs inactive
  double LR = 0;  // log likelihood ratio at the two MAP estimates
  double D = 0;   // B - LR
  GroupParams theta0, theta1;

  double penalized(double c) const { return c * LR + D; }
};

inline double penalized_posterior(double Bt, double p)
{
  // 1 / (1 + exp(-Bt) (1-p)/p), written to stay finite for large |Bt|
  double z = -Bt + std::log((1 - p) / p);
  return z > 0 ? std::exp(-z) / (1 + std::exp(-z)) : 1 / (1 + std::exp(z));
}

struct PipelineResult {
  std::vector<RegionSelection> regions;
  GroupParams theta_hat;                       // single-region SU fit (posterior-mode SU)
  std::optional<DisplacementSet> w_hat;        // annealed displacements (posterior-mode SU)
  std::vector<std::vector<std::size_t>> phi;   // maps used for the regional runs
  double anneal_objective = 0;

  std::vector<double> penalized_B(double c) const
  {
    std::vector<double> v;
    for (const auto& r : regions) v.push_back(r.penalized(c));
    return v;
  }

  std::vector<double> posterior(double c, const Hyperparams& h) const
  {
    std::vector<double> v;
    for (std::size_t j = 0; j < regions.size(); ++j) v.push_back(penalized_posterior(regions[j].penalized(c), h.prior_p(j)));
    return v;
  }
};

// Single-region SU fit, annealed displacement estimate, then regional Chib runs at w-hat.
// In no-SU mode the displacements are identity and the first two stages are skipped.
inline PipelineResult posterior_mode_pipeline(const Dataset& data, const Parcellation& parc, const Hyperparams& h,
                                              const PipelineConfig& cfg)
{
  h.validate();
  if (!(parc.grid == data.grid)) throw data_error("grid-mismatch", "parcellation grid differs from data grid");
  Observations ob = Observations::from(data);
  PipelineResult res;
  if (cfg.mode != Mode::no_su) {
    Parcellation one = Parcellation::single(data.grid);
    DisplacementSet ds(build_lattice(data.grid, cfg.omega), data.n());
    GibbsSampler s(BlockModel::full(ob, one), h, Network{1}, mix_seed(cfg.seed, 1), Warp(ds, cfg.chain.exact_kernel),
                   ob.d);
    res.theta_hat = saem_fit(s, cfg.saem);
    MarginalWarp mw(ob, one, res.theta_hat, *s.warp());
    AnnealConfig ac = cfg.anneal;
    ac.seed = mix_seed(cfg.seed, 2);
    auto an = simulated_annealing(mw, ac);
    res.w_hat = an.best;
    res.anneal_objective = an.best_objective;
    res.phi = displacement_maps(an.best, cfg.chain.exact_kernel);
  }
  for (std::size_t j = 0; j < parc.region_count; ++j) {
    auto e0 = chib_marginal_region(ob, parc, j, 0, h, cfg, res.phi);
    auto e1 = chib_marginal_region(ob, parc, j, 1, h, cfg, res.phi);
    RegionSelection r;
    r.log_m0 = e0.log_m;
    r.log_m1 = e1.log_m;
    r.B = e1.log_m - e0.log_m;
    r.LR = e1.log_lik - e0.log_lik;
    r.D = r.B - r.LR;
    r.theta0 = e0.theta;
    r.theta1 = e1.theta;
    res.regions.push_back(r);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Full-network evidence with displacements integrated out.

struct NetworkEvidence {
  double log_m = 0;
  double log_lik = 0;          // log f(y | theta*)
  double log_lik_given_w = 0;  // log f(y | w*, theta*)
  double log_prior = 0;        // log pi(theta* | gamma)
  double log_ordinate = 0;     // log pi-hat(theta* | y, gamma)
  double log_w_ordinate = 0;   // sum of reduced-run ordinates of w*
  GroupParams theta;
};

inline NetworkEvidence chib_exact_su(const Dataset& data, const Parcellation& parc, const Network& gamma,
                                     const Hyperparams& h, const PipelineConfig& cfg)
{
  h.validate();
  if (gamma.size() != parc.region_count) throw usage_error("bad-network", "network length differs from region count");
  Observations ob = Observations::from(data);
  NetworkEvidence ev;
  if (cfg.mode == Mode::no_su) {
    ev.theta = GroupParams(parc.region_count);
    for (std::size_t j = 0; j < parc.region_count; ++j) {
      auto e = chib_marginal_region(ob, parc, j, gamma[j], h, cfg);
      ev.log_m += e.log_m;
      ev.log_lik += e.log_lik;
      ev.log_prior += e.log_prior;
      ev.log_ordinate += e.log_ordinate;
      ev.theta.eta[j] = e.theta.eta[0];
      ev.theta.nu2[j] = e.theta.nu2[0];
      ev.theta.sigma2[j] = e.theta.sigma2[0];
    }
    ev.log_lik_given_w = ev.log_lik;
    return ev;
  }

  std::uint64_t tag = 0;
  for (int g : gamma) tag = tag * 2 + g;
  const std::uint64_t seed = mix_seed(cfg.seed, 100 + tag);
  DisplacementSet ds0(build_lattice(data.grid, cfg.omega), data.n());
  if (data.n() * ds0.B() > cfg.exact_block_cap)
    throw usage_error("exact-cap", "exact evidence needs n * B <= " + std::to_string(cfg.exact_block_cap));
  GibbsSampler s(BlockModel::full(ob, parc), h, gamma, mix_seed(seed, 1), Warp(ds0, cfg.chain.exact_kernel), ob.d);
  GroupParams ts = saem_fit(s, cfg.saem);
  ev.theta = ts;

  // w* by annealing at theta*
  MarginalWarp mw(ob, parc, ts, *s.warp());
  AnnealConfig ac = cfg.anneal;
  ac.seed = mix_seed(seed, 2);
  DisplacementSet wstar = simulated_annealing(mw, ac).best;

  // reduced runs over blocks r = 0..R-1 in (subject, point) order; run r frees blocks r..R-1
  const int rk = data.grid.rank;
  const std::size_t B = wstar.B(), R = data.n() * B;
  MarginalWarp red(ob, parc, ts, Warp(wstar, cfg.chain.exact_kernel));
  ev.log_lik_given_w = red.loglik();
  double lpw = red.log_prior();
  Rng rng(mix_seed(seed, 3));
  RwTuner tun;
  tun.sigma = cfg.chain.rw_sigma;
  tun.target = cfg.chain.target_accept;
  tun.window = cfg.chain.adapt_window;

  auto mh_step = [&](std::size_t blk) {
    std::size_t i = blk / B, b = blk % B;
    const double* w = red.warp().weights().block(i, b);
    double wn[3], dprior = 0;
    for (int a = 0; a < rk; ++a) {
      wn[a] = w[a] + tun.sigma * rng.normal();
      dprior += (w[a] * w[a] - wn[a] * wn[a]) / (2 * ts.sigmaS2);
    }
    double d = red.propose(i, b, wn) + dprior;
    bool acc = std::log(rng.uniform()) < d;
    if (acc) red.accept();
    tun.record(acc);
  };
  // log alpha(w_blk -> target | rest) without moving
  auto log_alpha = [&](std::size_t blk, const double* to) {
    std::size_t i = blk / B, b = blk % B;
    const double* w = red.warp().weights().block(i, b);
    double dprior = 0;
    for (int a = 0; a < rk; ++a) dprior += (w[a] * w[a] - to[a] * to[a]) / (2 * ts.sigmaS2);
    return std::min(0.0, red.propose(i, b, to) + dprior);
  };

  std::vector<double> log_num(R, -INFINITY), log_den(R, -INFINITY);
  for (std::size_t r = 0; r <= R; ++r) {
    // all blocks before r sit at w*, the rest start there too
    red = MarginalWarp(ob, parc, ts, Warp(wstar, cfg.chain.exact_kernel));
    std::size_t free = R - r;
    std::size_t iters = free ? std::max(cfg.reduced_base / free, cfg.reduced_min) : cfg.reduced_base;
    std::size_t burn = free ? std::max<std::size_t>(iters / 10, 1) : 0;
    tun.adapting = (r == 0);
    for (std::size_t t = 0; t < burn; ++t)
      for (std::size_t blk = r; blk < R; ++blk) mh_step(blk);
    tun.adapting = false;
    std::vector<double> num, den;
    for (std::size_t t = 0; t < iters; ++t) {
      for (std::size_t blk = r; blk < R; ++blk) mh_step(blk);
      if (r < R) {
        std::size_t i = r / B, b = r % B;
        const double* cur = red.warp().weights().block(i, b);
        const double* star = wstar.block(i, b);
        num.push_back(log_rw_density(cur, star, rk, tun.sigma) + log_alpha(r, star));
      }
      if (r > 0) {
        std::size_t i = (r - 1) / B, b = (r - 1) % B;
        const double* star = red.warp().weights().block(i, b);
        double v[3];
        for (int a = 0; a < rk; ++a) v[a] = star[a] + tun.sigma * rng.normal();
        den.push_back(log_alpha(r - 1, v));
      }
    }
    if (r < R) log_num[r] = log_mean_exp(num);
    if (r > 0) log_den[r - 1] = log_mean_exp(den);
  }
  ev.log_w_ordinate = 0;
  for (std::size_t r = 0; r < R; ++r) ev.log_w_ordinate += log_num[r] - log_den[r];
  ev.log_lik = ev.log_lik_given_w + lpw - ev.log_w_ordinate;

  // Rao-Blackwell ordinate of theta* from the full sampler
  s.tuner().sigma = cfg.chain.rw_sigma;
  s.tuner().adapting = true;
  for (std::size_t t = 0; t < cfg.chain.burn_in; ++t) s.sweep();
  s.tuner().adapting = false;
  std::vector<double> lc;
  for (std::size_t t = 0; t < cfg.chain.iterations; ++t) {
    s.sweep();
    lc.push_back(s.log_conditional(ts));
  }
  ev.log_ordinate = log_mean_exp(lc);
  ev.log_prior = log_prior_theta(ts, gamma, h);
  ev.log_m = ev.log_lik + ev.log_prior - ev.log_ordinate;
  if (!std::isfinite(ev.log_m)) throw numerical_error("non-finite-evidence", "network evidence is not finite");
  return ev;
}

// ---------------------------------------------------------------------------

// Misclassification count over datasets: region j counts as selected when its penalized log
// Bayes factor is positive.
inline std::size_t misclassified(const std::vector<PipelineResult>& runs, const std::vector<std::vector<int>>& truth,
                                 double c)
{
  std::size_t err = 0;
  for (std::size_t g = 0; g < runs.size(); ++g)
    for (std::size_t j = 0; j < runs[g].regions.size(); ++j) {
      bool sel = runs[g].regions[j].penalized(c) > 0;
      err += sel != (truth[g][j] != 0);
    }
  return err;
}

struct Calibration {
  double c_star = 0;
  std::size_t errors = 0;
  std::vector<double> grid;
  std::vector<std::size_t> risk;
};

// Grid search of c in {0, 0.01, ..., 1}; ties go to the smallest c.
inline Calibration calibrate_penalty(const std::vector<PipelineResult>& runs, const std::vector<std::vector<int>>& truth,
                                     std::size_t steps = 100)
{
  if (runs.size() != truth.size()) throw usage_error("bad-calibration", "one truth vector per dataset is required");
  Calibration cal;
  cal.errors = std::numeric_limits<std::size_t>::max();
  for (std::size_t t = 0; t <= steps; ++t) {
    double c = double(t) / steps;
    std::size_t e = misclassified(runs, truth, c);
    cal.grid.push_back(c);
    cal.risk.push_back(e);
    if (e < cal.errors) {
      cal.errors = e;
      cal.c_star = c;
    }
  }
  return cal;
}

struct ParcellationScore {
  double log_evidence = 0;
  double posterior = 0;     // under a uniform prior over the candidates
  double log_odds_best = 0; // relative to the best candidate
};

// log m(y | P) = sum_j log(p_j m1_j + (1 - p_j) m0_j) from per-region evidences.
inline double parcellation_log_evidence(const PipelineResult& r, const Hyperparams& h)
{
  double s = 0;
  for (std::size_t j = 0; j < r.regions.size(); ++j) {
    double p = h.prior_p(j);
    double a = std::log(p) + r.regions[j].log_m1, b = std::log(1 - p) + r.regions[j].log_m0;
    double mx = std::max(a, b);
    s += mx + std::log(std::exp(a - mx) + std::exp(b - mx));
  }
  return s;
}

inline std::vector<ParcellationScore> compare_parcellations(const Dataset& data, const std::vector<Parcellation>& parcs,
                                                            const Hyperparams& h, const PipelineConfig& cfg)
{
  std::vector<ParcellationScore> out;
  for (const auto& p : parcs) {
    PipelineConfig c = cfg;
    if (c.mode == Mode::exact_su) c.mode = Mode::posterior_mode_su;
    out.push_back({parcellation_log_evidence(posterior_mode_pipeline(data, p, h, c), h), 0, 0});
  }
  double mx = -INFINITY;
  for (const auto& s : out) mx = std::max(mx, s.log_evidence);
  double z = 0;
  for (const auto& s : out) z += std::exp(s.log_evidence - mx);
  for (auto& s : out) {
    s.posterior = std::exp(s.log_evidence - mx) / z;
    s.log_odds_best = s.log_evidence - mx;
  }
  return out;
}

} // namespace voxbayes

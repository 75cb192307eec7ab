#include <gtest/gtest.h>

#include <voxbayes/evidence.hpp>
#include <voxbayes/simulate.hpp>

using namespace voxbayes;

namespace {

Dataset tiny_dataset(std::size_t d, std::size_t n, double mean, std::uint64_t seed)
{
  Grid g({static_cast<int>(d)});
  Dataset data;
  data.grid = g;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectData s{ScalarMap(g), ScalarMap(g)};
    for (std::size_t k = 0; k < d; ++k) {
      s.variances[k] = 0.3 + 0.5 * rng.uniform();
      s.effects[k] = mean + rng.normal() * 2 + std::sqrt(s.variances[k]) * rng.normal();
    }
    data.subjects.push_back(s);
  }
  return data;
}

// log of the integral over (nu2, sigma2) of f(y | eta = 0, nu2, sigma2) IG(nu2) IG(sigma2),
// by the trapezoid rule in log-variance coordinates.
double quadrature_evidence_null(const Observations& ob, const Hyperparams& h)
{
  const int M = 1200;
  const double lo = -9, hi = 9, step = (hi - lo) / M;
  std::vector<double> vals;
  vals.reserve((M + 1) * (M + 1));
  for (int a = 0; a <= M; ++a)
    for (int b = 0; b <= M; ++b) {
      double t1 = lo + a * step, t2 = lo + b * step;
      double nu2 = std::exp(t1), s2 = std::exp(t2);
      double ll = 0;
      for (std::size_t k = 0; k < ob.d; ++k) {
        BlockAccum acc;
        for (std::size_t i = 0; i < ob.n; ++i) acc.add(ob.y[i * ob.d + k], ob.s2[i * ob.d + k], s2);
        ll += acc.loglik(0, nu2);
      }
      double w = (a == 0 || a == M ? 0.5 : 1) * (b == 0 || b == M ? 0.5 : 1);
      vals.push_back(ll + log_inv_gamma(nu2, h.alpha, h.beta) + log_inv_gamma(s2, h.alpha, h.beta) + t1 + t2 +
                     std::log(w * step * step));
    }
  double mx = *std::max_element(vals.begin(), vals.end());
  double s = 0;
  for (double v : vals) s += std::exp(v - mx);
  return mx + std::log(s);
}

PipelineConfig quick_config(Mode mode = Mode::no_su)
{
  PipelineConfig c;
  c.mode = mode;
  c.saem.burn_in = 200;
  c.saem.iterations = 400;
  c.chain.burn_in = 100;
  c.chain.iterations = 1000;
  return c;
}

}  // namespace

TEST(Chib, MatchesQuadratureOnTinyRegion)
{
  Hyperparams h;
  for (std::uint64_t seed : {1, 2, 3}) {
    Dataset data = tiny_dataset(2, 3, 0.0, seed);
    auto ob = Observations::from(data);
    auto parc = Parcellation::single(data.grid);
    auto cfg = quick_config();
    cfg.chain.iterations = 5000;
    auto ev = chib_marginal_region(ob, parc, 0, 0, h, cfg);
    EXPECT_NEAR(ev.log_m, quadrature_evidence_null(ob, h), 0.1) << "seed " << seed;
  }
}

TEST(Chib, MoreDrawsReduceOrdinateSpread)
{
  Hyperparams h;
  Dataset data = tiny_dataset(2, 3, 0.0, 7);
  auto ob = Observations::from(data);
  auto parc = Parcellation::single(data.grid);
  auto spread = [&](std::size_t J) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto cfg = quick_config();
      cfg.chain.iterations = J;
      cfg.seed = 100 + s;
      v.push_back(chib_marginal_region(ob, parc, 0, 0, h, cfg).log_ordinate);
    }
    double m = 0, q = 0;
    for (double x : v) m += x / v.size();
    for (double x : v) q += (x - m) * (x - m) / v.size();
    return std::sqrt(q);
  };
  EXPECT_LT(spread(2000), spread(100));
}

TEST(Chib, DuplicatedRegionHasEqualEvidence)
{
  Hyperparams h;
  Dataset base = tiny_dataset(4, 6, 1.0, 9);
  Grid g({8});
  Dataset data;
  data.grid = g;
  for (const auto& s : base.subjects) {
    SubjectData t{ScalarMap(g), ScalarMap(g)};
    for (std::size_t k = 0; k < 8; ++k) {
      t.effects[k] = s.effects[k % 4];
      t.variances[k] = s.variances[k % 4];
    }
    data.subjects.push_back(t);
  }
  Parcellation parc(g, {0, 0, 0, 0, 1, 1, 1, 1}, 2);
  auto ob = Observations::from(data);
  auto cfg = quick_config();
  cfg.chain.iterations = 4000;
  for (int gam : {0, 1}) {
    auto a = chib_marginal_region(ob, parc, 0, gam, h, cfg);
    auto b = chib_marginal_region(ob, parc, 1, gam, h, cfg);
    EXPECT_NEAR(a.log_m, b.log_m, 0.1);
    // single-region model on the first half
    auto one = Observations::from(base);
    auto c = chib_marginal_region(one, Parcellation::single(base.grid), 0, gam, h, cfg);
    EXPECT_NEAR(a.log_m + b.log_m, 2 * c.log_m, 0.2);
  }
}

TEST(Chib, ActiveModelPreferredOnStrongMean)
{
  Hyperparams h;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Dataset data = tiny_dataset(10, 8, 10.0, seed);
    auto ob = Observations::from(data);
    auto parc = Parcellation::single(data.grid);
    auto cfg = quick_config();
    cfg.seed = seed;
    double m0 = chib_marginal_region(ob, parc, 0, 0, h, cfg).log_m;
    double m1 = chib_marginal_region(ob, parc, 0, 1, h, cfg).log_m;
    EXPECT_GT(m1, m0) << "seed " << seed;
  }
}

TEST(Chib, EmptyRegionIsDataError)
{
  Dataset data = tiny_dataset(3, 2, 0.0, 1);
  Parcellation parc(data.grid, {0, 0, 0}, 2);
  auto ob = Observations::from(data);
  EXPECT_THROW(chib_marginal_region(ob, parc, 1, 0, Hyperparams{}, quick_config()), Error);
}

TEST(Pipeline, NoSuDecompositionAndPenalty)
{
  auto c = PhantomConfig::disc2d();
  c.dims = {12, 12};
  c.diameter = 5;
  c.n = 10;
  auto sim = gen_grid_phantom(c);
  Hyperparams h;
  auto res = posterior_mode_pipeline(sim.data, sim.parcellation, h, quick_config());
  ASSERT_EQ(res.regions.size(), 2u);
  EXPECT_TRUE(res.phi.empty());
  for (const auto& r : res.regions) {
    EXPECT_NEAR(r.B, r.LR + r.D, 1e-9);
    EXPECT_GE(r.LR, 0.0);
    EXPECT_NEAR(r.penalized(1), r.B, 1e-9);
    EXPECT_LE(r.penalized(0), r.penalized(1));
  }
  auto p0 = res.posterior(0, h), p1 = res.posterior(1, h);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LE(p0[j], p1[j]);
    EXPECT_GE(p0[j], 0.0);
    EXPECT_LE(p1[j], 1.0);
  }
  EXPECT_GT(res.regions[1].B, 0.0);
}

TEST(Pipeline, SuModeProducesDisplacements)
{
  auto c = PhantomConfig::disc2d();
  c.dims = {12, 12};
  c.diameter = 5;
  c.n = 6;
  auto sim = gen_grid_phantom(c);
  auto cfg = quick_config(Mode::posterior_mode_su);
  cfg.omega = 2;
  cfg.anneal.steps = 10;
  auto res = posterior_mode_pipeline(sim.data, sim.parcellation, Hyperparams{}, cfg);
  ASSERT_TRUE(res.w_hat.has_value());
  EXPECT_EQ(res.phi.size(), 6u);
  EXPECT_GT(res.theta_hat.sigmaS2, 0.0);
  for (const auto& r : res.regions) EXPECT_NEAR(r.B, r.LR + r.D, 1e-9);
}

TEST(Penalty, PosteriorFormula)
{
  EXPECT_NEAR(penalized_posterior(0, 0.5), 0.5, 1e-15);
  EXPECT_NEAR(penalized_posterior(std::log(3.0), 0.5), 0.75, 1e-15);
  EXPECT_NEAR(penalized_posterior(0, 0.2), 0.2, 1e-15);
  EXPECT_NEAR(penalized_posterior(800, 0.5), 1.0, 1e-15);
  EXPECT_NEAR(penalized_posterior(-800, 0.5), 0.0, 1e-15);
  double prev = 0;
  for (double b = -20; b <= 20; b += 0.5) {
    double p = penalized_posterior(b, 0.3);
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(Calibration, TieGoesToSmallestC)
{
  PipelineResult r;
  RegionSelection a, b;
  a.LR = 10;
  a.D = -1;  // positive for c > 0.1
  b.LR = 2;
  b.D = -5;  // negative everywhere
  r.regions = {a, b};
  auto cal = calibrate_penalty({r}, {{1, 0}});
  EXPECT_EQ(cal.errors, 0u);
  EXPECT_NEAR(cal.c_star, 0.11, 1e-12);
  EXPECT_EQ(cal.grid.size(), 101u);
}

TEST(Calibration, RiskMatchesIndependentLoop)
{
  Rng rng(4);
  std::vector<PipelineResult> runs;
  std::vector<std::vector<int>> truth;
  for (int d = 0; d < 30; ++d) {
    PipelineResult r;
    std::vector<int> t;
    for (int j = 0; j < 3; ++j) {
      RegionSelection s;
      s.LR = 20 * rng.uniform();
      s.D = -10 * rng.uniform();
      r.regions.push_back(s);
      t.push_back(rng.coin());
    }
    runs.push_back(r);
    truth.push_back(t);
  }
  auto cal = calibrate_penalty(runs, truth);
  std::size_t best = SIZE_MAX;
  double cbest = -1;
  for (int step = 0; step <= 100; ++step) {
    double c = step / 100.0;
    std::size_t e = 0;
    for (int d = 0; d < 30; ++d)
      for (int j = 0; j < 3; ++j) {
        double bt = c * runs[d].regions[j].LR + runs[d].regions[j].D;
        e += (bt > 0) != (truth[d][j] == 1);
      }
    EXPECT_EQ(cal.risk[step], e);
    if (e < best) {
      best = e;
      cbest = c;
    }
  }
  EXPECT_EQ(cal.errors, best);
  EXPECT_DOUBLE_EQ(cal.c_star, cbest);
}

TEST(Parcellations, DuplicateAndRelabel)
{
  auto c = PhantomConfig::disc2d();
  c.dims = {10, 10};
  c.diameter = 5;
  c.n = 6;
  auto sim = gen_grid_phantom(c);
  auto swapped = sim.parcellation;
  for (auto& l : swapped.labels) l = 1 - l;
  auto scores = compare_parcellations(sim.data, {sim.parcellation, sim.parcellation, swapped}, Hyperparams{}, quick_config());
  ASSERT_EQ(scores.size(), 3u);
  EXPECT_EQ(scores[0].log_evidence, scores[1].log_evidence);
  EXPECT_EQ(scores[0].log_evidence, scores[2].log_evidence);
  EXPECT_NEAR(scores[0].posterior, 1.0 / 3, 1e-12);
}

TEST(Parcellations, AlignedBeatsSplitDisc)
{
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = PhantomConfig::disc2d();
    c.dims = {12, 12};
    c.n = 10;
    c.seed = seed;
    auto sim = gen_grid_phantom(c);
    auto split = sim.parcellation;
    for (std::size_t k = 0; k < split.labels.size(); ++k)
      if (split.grid.coord(k)[1] >= 6) split.labels[k] = 1 - split.labels[k];
    auto cfg = quick_config();
    cfg.seed = seed;
    auto s = compare_parcellations(sim.data, {sim.parcellation, split}, Hyperparams{}, cfg);
    wins += s[0].log_evidence > s[1].log_evidence;
  }
  EXPECT_GE(wins, 3);
}

TEST(ExactSu, NoSuLimitSumsRegions)
{
  auto c = PhantomConfig::disc2d();
  c.dims = {8, 8};
  c.diameter = 3;
  c.n = 4;
  auto sim = gen_grid_phantom(c);
  Hyperparams h;
  auto cfg = quick_config();
  auto ev = chib_exact_su(sim.data, sim.parcellation, {0, 1}, h, cfg);
  auto ob = Observations::from(sim.data);
  double tot = chib_marginal_region(ob, sim.parcellation, 0, 0, h, cfg).log_m +
               chib_marginal_region(ob, sim.parcellation, 1, 1, h, cfg).log_m;
  EXPECT_DOUBLE_EQ(ev.log_m, tot);
}

TEST(ExactSu, CapIsEnforced)
{
  auto sim = gen_grid_phantom(PhantomConfig::disc2d());
  auto cfg = quick_config(Mode::exact_su);
  cfg.exact_block_cap = 5;
  try {
    chib_exact_su(sim.data, sim.parcellation, {0, 1}, Hyperparams{}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "exact-cap");
  }
}

// One subject, one control point on a 6x6 grid: log f(y | theta*) against a dense quadrature
// of f(y | w, theta*) pi(w | sigma_S^2) over the two weight components.
TEST(ExactSu, IntegratedLikelihoodMatchesQuadrature)
{
  Grid g({6, 6});
  ScalarMap mu(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    Coord v = g.coord(k);
    mu[k] = (v[0] >= 2 && v[0] <= 3 && v[1] >= 2 && v[1] <= 3) ? 4 : 0;
  }
  Dataset data;
  data.grid = g;
  Rng rng(5);
  SubjectData s{ScalarMap(g), ScalarMap(g, 0.1)};
  for (std::size_t k = 0; k < g.size(); ++k) s.effects[k] = mu[(k + 1) % g.size()] + 0.5 * rng.normal();
  data.subjects.push_back(s);
  auto parc = Parcellation::single(g);
  auto cfg = quick_config(Mode::exact_su);
  cfg.omega = 2;
  cfg.chain.exact_kernel = true;
  cfg.anneal.steps = 30;
  cfg.reduced_base = 20000;
  auto ev = chib_exact_su(data, parc, {1}, Hyperparams{}, cfg);

  const auto& th = ev.theta;
  ASSERT_GT(th.sigmaS2, 0);
  DisplacementSet ds(build_lattice(g, 2), 1);
  ASSERT_EQ(ds.B(), 1u);
  const double sd = std::sqrt(th.sigmaS2), lim = 7 * sd;
  const int M = 400;
  const double h = 2 * lim / M;
  std::vector<double> vals;
  for (int a = 0; a <= M; ++a)
    for (int b = 0; b <= M; ++b) {
      ds.at(0, 0, 0) = -lim + a * h;
      ds.at(0, 0, 1) = -lim + b * h;
      double w = (a == 0 || a == M ? 0.5 : 1) * (b == 0 || b == M ? 0.5 : 1);
      vals.push_back(data_loglik_given_w(data, ds, th, parc, true) + log_prior_weights(ds, th.sigmaS2) + std::log(w * h * h));
    }
  double mx = *std::max_element(vals.begin(), vals.end());
  double z = 0;
  for (double v : vals) z += std::exp(v - mx);
  EXPECT_NEAR(ev.log_lik, mx + std::log(z), 0.15);
}

TEST(Modes, ParseAndName)
{
  for (auto m : {Mode::no_su, Mode::posterior_mode_su, Mode::exact_su}) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_THROW(parse_mode("bogus"), Error);
}

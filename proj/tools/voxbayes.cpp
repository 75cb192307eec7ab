#include <CLI11.hpp>
#include <json.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include <voxbayes/baseline.hpp>
#include <voxbayes/evidence.hpp>
#include <voxbayes/randthresh.hpp>
#include <voxbayes/simulate.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace voxbayes;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// key = value settings from --config and --set; every key must be known

const std::set<std::string> kKeys = {
    "prior.alpha", "prior.beta", "prior.lambda", "prior.m", "prior.p",
    "omega", "network", "penalty.c",
    "saem.burn_in", "saem.iterations", "saem.rw_sigma",
    "chain.burn_in", "chain.iterations", "chain.thin", "chain.rw_sigma", "chain.target_accept", "chain.exact_kernel",
    "anneal.steps", "anneal.tau", "anneal.rw_sigma",
    "exact.reduced_base", "exact.reduced_min", "exact.block_cap", "evidence.repeats",
    "phantom.kind", "phantom.dims", "phantom.n", "phantom.sigmaS", "phantom.omega", "phantom.sigma", "phantom.eps",
    "phantom.amplitude", "phantom.diameter", "phantom.smooth", "phantom.regions", "phantom.active",
    "phantom.peak_width", "sparse.size", "sparse.active", "sparse.a", "sparse.b",
    "threshold.method", "threshold.window", "threshold.K", "threshold.kappa", "threshold.p", "threshold.known_sigma",
    "threshold.sigma", "threshold.min_remaining", "threshold.negative_gamma", "threshold.global_reps",
    "threshold.alpha",
    "baseline.alpha", "baseline.reps", "baseline.forming_alpha",
    "calibrate.steps",
};

class Settings {
public:
  void set(const std::string& raw, const std::string& where)
  {
    auto eq = raw.find('=');
    if (eq == std::string::npos) throw usage_error("bad-config", where + ": expected key = value");
    std::string k = trim(raw.substr(0, eq)), v = trim(raw.substr(eq + 1));
    if (!kKeys.count(k)) throw usage_error("unknown-key", where + ": unknown key '" + k + "'");
    kv_[k] = v;
  }

  void load(const fs::path& p)
  {
    std::ifstream in(p);
    if (!in) throw data_error("io", "cannot read config " + p.string());
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
      ++no;
      auto h = line.find('#');
      if (h != std::string::npos) line.resize(h);
      if (trim(line).empty()) continue;
      set(line, p.string() + ":" + std::to_string(no));
    }
  }

  bool has(const std::string& k) const { return kv_.count(k) > 0; }

  std::string str(const std::string& k, const std::string& def) const
  {
    auto it = kv_.find(k);
    return it == kv_.end() ? def : it->second;
  }

  double num(const std::string& k, double def) const
  {
    auto it = kv_.find(k);
    if (it == kv_.end()) return def;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(k);
      return v;
    } catch (const std::exception&) {
      throw usage_error("bad-config", "key '" + k + "' needs a number");
    }
  }

  std::size_t count(const std::string& k, std::size_t def) const
  {
    double v = num(k, double(def));
    if (v < 0 || v != std::floor(v)) throw usage_error("bad-config", "key '" + k + "' needs a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& k, bool def) const
  {
    std::string v = str(k, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw usage_error("bad-config", "key '" + k + "' needs true or false");
  }

  std::vector<int> ints(const std::string& k, char sep) const
  {
    std::vector<int> out;
    std::string v = str(k, "");
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
      try {
        out.push_back(std::stoi(trim(tok)));
      } catch (const std::exception&) {
        throw usage_error("bad-config", "key '" + k + "' needs integers separated by '" + sep + "'");
      }
    }
    return out;
  }

  json to_json() const { return json(kv_); }

private:
  static std::string trim(const std::string& s)
  {
    auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

Hyperparams hyper_of(const Settings& s)
{
  Hyperparams h;
  h.alpha = s.num("prior.alpha", h.alpha);
  h.beta = s.num("prior.beta", h.beta);
  h.lambda = s.num("prior.lambda", h.lambda);
  h.m = s.num("prior.m", h.m);
  h.p = s.num("prior.p", h.p);
  h.validate();
  return h;
}

PipelineConfig pipeline_of(const Settings& s, Mode mode, std::uint64_t seed)
{
  PipelineConfig c;
  c.mode = mode;
  c.seed = seed;
  c.omega = s.num("omega", c.omega);
  if (!(c.omega > 0)) throw usage_error("bad-config", "omega must be positive");
  c.saem.burn_in = s.count("saem.burn_in", c.saem.burn_in);
  c.saem.iterations = s.count("saem.iterations", c.saem.iterations);
  c.saem.rw_sigma = s.num("saem.rw_sigma", c.saem.rw_sigma);
  c.chain.burn_in = s.count("chain.burn_in", c.chain.burn_in);
  c.chain.iterations = s.count("chain.iterations", c.chain.iterations);
  c.chain.thin = s.count("chain.thin", c.chain.thin);
  c.chain.rw_sigma = s.num("chain.rw_sigma", c.chain.rw_sigma);
  c.chain.target_accept = s.num("chain.target_accept", c.chain.target_accept);
  c.chain.exact_kernel = s.flag("chain.exact_kernel", c.chain.exact_kernel);
  c.chain.seed = mix_seed(seed, 11);
  c.anneal.steps = s.count("anneal.steps", c.anneal.steps);
  c.anneal.tau = s.num("anneal.tau", c.anneal.tau);
  c.anneal.rw_sigma = s.num("anneal.rw_sigma", c.anneal.rw_sigma);
  c.reduced_base = s.count("exact.reduced_base", c.reduced_base);
  c.reduced_min = s.count("exact.reduced_min", c.reduced_min);
  c.exact_block_cap = s.count("exact.block_cap", c.exact_block_cap);
  if (c.chain.iterations == 0) throw usage_error("bad-config", "chain.iterations must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// output helpers

std::string num(double v) { return fmt::format("{:.10g}", v); }

class Csv {
public:
  explicit Csv(const fs::path& p) : out_(p, std::ios::binary)
  {
    if (!out_) throw data_error("io", "cannot write " + p.string());
  }

  template<typename... T>
  void row(const T&... cells)
  {
    std::vector<std::string> v{cell(cells)...};
    out_ << fmt::format("{}\n", fmt::join(v, ","));
  }

private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return num(v); }
  template<typename I>
  static std::enable_if_t<std::is_integral_v<I>, std::string> cell(I v) { return std::to_string(v); }

  std::ofstream out_;
};

void write_text(const fs::path& p, const std::string& s)
{
  std::ofstream out(p, std::ios::binary);
  if (!out) throw data_error("io", "cannot write " + p.string());
  out << s;
}

// Middle slice of the first axis as an 8-bit PGM, linearly scaled between min and max.
void write_pgm(const fs::path& p, const ScalarMap& m)
{
  const Grid& g = m.grid;
  int rows = 1, cols = g.dims[0];
  std::size_t offset = 0, stride = 1;
  if (g.rank == 2) {
    rows = g.dims[0];
    cols = g.dims[1];
  } else if (g.rank == 3) {
    rows = g.dims[1];
    cols = g.dims[2];
    offset = std::size_t(g.dims[0] / 2) * g.stride(0);
  }
  (void)stride;
  double lo = INFINITY, hi = -INFINITY;
  for (double v : m.values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  std::string px(std::size_t(rows) * cols, '\0');
  for (std::size_t k = 0; k < px.size(); ++k) {
    double v = m.values[offset + k];
    double t = std::isfinite(v) && hi > lo ? (v - lo) / (hi - lo) : 0.0;
    px[k] = static_cast<char>(static_cast<unsigned char>(std::lround(255 * t)));
  }
  write_text(p, fmt::format("P5\n{} {}\n255\n", cols, rows) + px);
}

ScalarMap mask_map(const Grid& g, const std::vector<bool>& mask)
{
  ScalarMap m(g);
  for (std::size_t k = 0; k < g.size(); ++k) m[k] = mask[k] ? 1.0 : 0.0;
  return m;
}

// ---------------------------------------------------------------------------

struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 1;
  std::string mode;
  bool mode_given = false;
  unsigned threads = 1;
  fs::path out;
  std::string config_file;
  std::vector<std::string> sets;
  Settings cfg;
  json inputs = json::object();
  json summary = json::object();
};

Mode mode_of(const Run& r, std::initializer_list<Mode> allowed, Mode def)
{
  Mode m = r.mode_given ? parse_mode(r.mode) : def;
  for (Mode a : allowed)
    if (a == m) return m;
  throw usage_error("mode-mismatch", "mode " + mode_name(m) + " is not available for " + r.command);
}

void no_mode(const Run& r)
{
  if (r.mode_given) throw usage_error("mode-mismatch", r.command + " takes no --mode");
}

fs::path require_file(const std::string& p, const std::string& what)
{
  if (p.empty()) throw usage_error("missing-input", what + " is required");
  if (!fs::exists(p)) throw data_error("io", "missing input " + p);
  return p;
}

struct Loaded {
  Dataset data;
  Parcellation parc;
  Manifest manifest;
};

Loaded load(Run& r, const std::string& manifest, const std::string& parc_override)
{
  Loaded L;
  L.manifest = read_manifest(require_file(manifest, "--data"));
  L.data = load_dataset(L.manifest);
  r.inputs["data"] = fs::absolute(manifest).string();
  if (!parc_override.empty()) {
    L.parc = read_parcellation(require_file(parc_override, "--parcellation"));
    r.inputs["parcellation"] = fs::absolute(parc_override).string();
  } else if (!L.manifest.parcellation.empty()) {
    L.parc = read_parcellation(L.manifest.base / L.manifest.parcellation);
  } else {
    L.parc = Parcellation::single(L.data.grid);
  }
  if (!(L.parc.grid == L.data.grid)) throw data_error("grid-mismatch", "parcellation grid differs from data grid");
  return L;
}

Network network_of(const Run& r, std::size_t N)
{
  if (!r.cfg.has("network")) return Network(N, 1);
  Network g = r.cfg.ints("network", ',');
  if (g.size() != N) throw usage_error("bad-network", fmt::format("network needs {} entries", N));
  for (int v : g)
    if (v != 0 && v != 1) throw usage_error("bad-network", "network entries must be 0 or 1");
  return g;
}

void write_params(const fs::path& dir, const std::string& stem, const GroupParams& th)
{
  write_text(dir / (stem + ".json"), to_json(th).dump(2) + "\n");
  Csv c(dir / (stem + ".csv"));
  c.row("region", "eta", "nu2", "sigma2", "sigmaS2");
  for (std::size_t j = 0; j < th.regions(); ++j) c.row(j, th.eta[j], th.nu2[j], th.sigma2[j], th.sigmaS2);
}

ScalarMap expand_local(const Grid& g, const BlockModel& m, const std::vector<double>& local)
{
  ScalarMap out(g);
  for (std::size_t v = 0; v < m.voxels(); ++v) out[m.voxel[v]] = local[v];
  return out;
}

void write_weights(const fs::path& dir, const DisplacementSet& ds)
{
  write_text(dir / "weights.vol", encode_weights(ds.n, ds.B(), ds.rank(), ds.w));
  json lat;
  lat["omega"] = ds.lattice.omega;
  lat["grid"] = ds.lattice.grid.shape();
  json pts = json::array();
  for (const auto& p : ds.lattice.points) pts.push_back(std::vector<int>(p.begin(), p.begin() + ds.rank()));
  lat["points"] = pts;
  write_text(dir / "lattice.json", lat.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// subcommands

struct Opts {
  std::string data, parcellation, input;
  std::vector<std::string> datasets, parcellations;
};

void cmd_simulate(Run& r, const Opts&)
{
  no_mode(r);
  const Settings& s = r.cfg;
  std::string kind = s.str("phantom.kind", "disc");
  if (kind == "sparse") {
    std::size_t n = s.count("sparse.size", 50000), act = s.count("sparse.active", 10000);
    auto sm = gen_sparse_means(n, act, s.num("sparse.a", 2), s.num("sparse.b", 6), r.seed);
    write_volume(r.out / "statistic.vol", ScalarMap(Grid({int(n)}), sm.y));
    Csv c(r.out / "truth.csv");
    c.row("index", "active");
    for (std::size_t i = 0; i < n; ++i) c.row(i, sm.active[i]);
    r.summary["size"] = n;
    r.summary["active"] = act;
    return;
  }
  Simulation sim;
  if (kind == "line") {
    OneDimConfig c;
    c.n = s.count("phantom.n", c.n);
    c.sigmaS = s.num("phantom.sigmaS", c.sigmaS);
    c.omega = s.num("phantom.omega", c.omega);
    c.sigma = s.num("phantom.sigma", c.sigma);
    c.eps = s.num("phantom.eps", c.eps);
    c.seed = r.seed;
    sim = gen_1d(c);
  } else {
    PhantomConfig c = kind == "spheres" ? PhantomConfig::spheres3d() : PhantomConfig::disc2d();
    c.kind = kind;
    if (kind == "sphere" && !s.has("phantom.dims")) c.dims = {24, 24, 24};
    if (kind == "atlas" && !s.has("phantom.dims")) c.dims = {24, 24, 24};
    if (s.has("phantom.dims")) c.dims = s.ints("phantom.dims", 'x');
    c.n = s.count("phantom.n", c.n);
    c.sigmaS = s.num("phantom.sigmaS", c.sigmaS);
    c.omega = s.num("phantom.omega", c.omega);
    c.sigma = s.num("phantom.sigma", c.sigma);
    c.eps = s.num("phantom.eps", c.eps);
    c.amplitude = s.num("phantom.amplitude", c.amplitude);
    c.diameter = s.num("phantom.diameter", c.diameter);
    c.smooth = s.num("phantom.smooth", c.smooth);
    c.regions = s.count("phantom.regions", c.regions);
    c.active = s.count("phantom.active", c.active);
    c.peak_width = s.num("phantom.peak_width", c.peak_width);
    c.seed = r.seed;
    if (c.n == 0) throw usage_error("bad-config", "phantom.n must be positive");
    sim = gen_grid_phantom(c);
  }
  write_volume(r.out / "parcellation.vol", sim.parcellation);
  write_volume(r.out / "mean.vol", sim.mu);
  write_pgm(r.out / "mean.pgm", sim.mu);
  json extra;
  extra["truth"] = sim.truth;
  extra["null_region"] = sim.null_region;
  write_dataset(r.out, sim.data, "parcellation.vol", extra);
  Csv c(r.out / "truth.csv");
  c.row("region", "active", "null", "size");
  auto sizes = sim.parcellation.sizes();
  for (std::size_t j = 0; j < sim.truth.size(); ++j)
    c.row(j, sim.truth[j], sim.null_region.empty() ? 0 : sim.null_region[j], sizes[j]);
  r.summary["subjects"] = sim.data.n();
  r.summary["regions"] = sim.parcellation.region_count;
}

std::optional<Warp> warp_for(const Loaded& L, const PipelineConfig& pc)
{
  if (pc.mode == Mode::no_su) return std::nullopt;
  return Warp(DisplacementSet(build_lattice(L.data.grid, pc.omega), L.data.n()), pc.chain.exact_kernel);
}

void cmd_fit(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::posterior_mode_su}, Mode::posterior_mode_su);
  auto L = load(r, o.data, o.parcellation);
  auto pc = pipeline_of(r.cfg, mode, r.seed);
  auto ob = Observations::from(L.data);
  GibbsSampler s(BlockModel::full(ob, L.parc), hyper_of(r.cfg), network_of(r, L.parc.region_count), mix_seed(r.seed, 1),
                 warp_for(L, pc), ob.d);
  auto th = saem_fit(s, pc.saem);
  write_params(r.out, "params", th);
  if (s.warp()) write_weights(r.out, s.warp()->weights());
  r.summary["sigmaS2"] = th.sigmaS2;
}

void cmd_sample(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::posterior_mode_su}, Mode::posterior_mode_su);
  auto L = load(r, o.data, o.parcellation);
  auto pc = pipeline_of(r.cfg, mode, r.seed);
  auto ob = Observations::from(L.data);
  GibbsSampler s(BlockModel::full(ob, L.parc), hyper_of(r.cfg), network_of(r, L.parc.region_count), mix_seed(r.seed, 1),
                 warp_for(L, pc), ob.d);
  auto tr = run_chain(s, pc.chain);
  Csv c(r.out / "trace.csv");
  c.row("draw", "region", "eta", "nu2", "sigma2", "sigmaS2");
  for (std::size_t t = 0; t < tr.draws.size(); ++t)
    for (std::size_t j = 0; j < tr.draws[t].regions(); ++j)
      c.row(t, j, tr.draws[t].eta[j], tr.draws[t].nu2[j], tr.draws[t].sigma2[j], tr.draws[t].sigmaS2);
  auto mu = expand_local(L.data.grid, s.model(), tr.mu_mean);
  write_volume(r.out / "mu_mean.vol", mu);
  write_pgm(r.out / "mu_mean.pgm", mu);
  r.summary["accept_rate"] = tr.accept_rate;
  r.summary["rw_sigma"] = tr.rw_sigma;
  r.summary["draws"] = tr.draws.size();
}

void cmd_sa(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::posterior_mode_su, Mode::exact_su}, Mode::posterior_mode_su);
  auto L = load(r, o.data, o.parcellation);
  auto pc = pipeline_of(r.cfg, mode, r.seed);
  auto ob = Observations::from(L.data);
  auto one = Parcellation::single(L.data.grid);
  GibbsSampler s(BlockModel::full(ob, one), hyper_of(r.cfg), Network{1}, mix_seed(r.seed, 1), warp_for(L, pc), ob.d);
  auto th = saem_fit(s, pc.saem);
  MarginalWarp mw(ob, one, th, *s.warp());
  AnnealConfig ac = pc.anneal;
  ac.seed = mix_seed(r.seed, 2);
  auto an = simulated_annealing(mw, ac);
  write_params(r.out, "params", th);
  write_weights(r.out, an.best);
  Csv c(r.out / "anneal.csv");
  c.row("step", "objective");
  for (std::size_t t = 0; t < an.objective.size(); ++t) c.row(t, an.objective[t]);
  // mean displacement magnitude per voxel
  ScalarMap mag(L.data.grid);
  for (std::size_t i = 0; i < an.best.n; ++i) {
    auto u = interpolate_field(an.best, i, pc.chain.exact_kernel);
    for (std::size_t k = 0; k < mag.grid.size(); ++k) {
      double q = 0;
      for (int a = 0; a < an.best.rank(); ++a) q += u[k * an.best.rank() + a] * u[k * an.best.rank() + a];
      mag[k] += std::sqrt(q) / an.best.n;
    }
  }
  write_volume(r.out / "displacement.vol", mag);
  write_pgm(r.out / "displacement.pgm", mag);
  r.summary["best_objective"] = an.best_objective;
}

void cmd_evidence(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::exact_su}, Mode::exact_su);
  auto L = load(r, o.data, o.parcellation);
  Network g = network_of(r, L.parc.region_count);
  Hyperparams h = hyper_of(r.cfg);
  std::size_t reps = std::max<std::size_t>(1, r.cfg.count("evidence.repeats", 1));
  Csv c(r.out / "evidence.csv");
  c.row("repeat", "log_m", "log_lik", "log_lik_given_w", "log_prior", "log_ordinate", "log_w_ordinate");
  std::vector<double> v;
  for (std::size_t t = 0; t < reps; ++t) {
    auto pc = pipeline_of(r.cfg, mode, mix_seed(r.seed, 100 + t));
    auto ev = chib_exact_su(L.data, L.parc, g, h, pc);
    c.row(t, ev.log_m, ev.log_lik, ev.log_lik_given_w, ev.log_prior, ev.log_ordinate, ev.log_w_ordinate);
    v.push_back(ev.log_m);
  }
  double m = 0, q = 0;
  for (double x : v) m += x / v.size();
  for (double x : v) q += (x - m) * (x - m);
  r.summary["log_m_mean"] = m;
  r.summary["log_m_std"] = v.size() > 1 ? std::sqrt(q / (v.size() - 1)) : 0.0;
}

void write_selection(const fs::path& dir, const PipelineResult& res, const Parcellation& parc, const Hyperparams& h,
                     double c)
{
  auto P = res.posterior(c, h);
  Csv csv(dir / "regions.csv");
  csv.row("region", "posterior", "eta", "B", "LR", "D", "B_penalized", "log_m0", "log_m1");
  for (std::size_t j = 0; j < res.regions.size(); ++j) {
    const auto& q = res.regions[j];
    csv.row(j, P[j], q.theta1.eta[0], q.B, q.LR, q.D, q.penalized(c), q.log_m0, q.log_m1);
  }
  ScalarMap pm(parc.grid);
  for (std::size_t k = 0; k < pm.grid.size(); ++k) pm[k] = P[parc.labels[k]];
  write_volume(dir / "posterior.vol", pm);
  write_pgm(dir / "posterior.pgm", pm);
}

void cmd_select(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::posterior_mode_su}, Mode::posterior_mode_su);
  auto L = load(r, o.data, o.parcellation);
  auto pc = pipeline_of(r.cfg, mode, r.seed);
  Hyperparams h = hyper_of(r.cfg);
  double c = r.cfg.num("penalty.c", 1.0);
  auto res = posterior_mode_pipeline(L.data, L.parc, h, pc);
  write_selection(r.out, res, L.parc, h, c);
  if (res.w_hat) {
    write_params(r.out, "theta_hat", res.theta_hat);
    write_weights(r.out, *res.w_hat);
  }
  // posterior mean of mu under the selected network at the displacement estimate
  Network sel;
  for (double b : res.penalized_B(c)) sel.push_back(b > 0);
  auto ob = Observations::from(L.data);
  GibbsSampler s(BlockModel::full(ob, L.parc, res.phi), h, sel, mix_seed(r.seed, 3));
  auto tr = run_chain(s, pc.chain);
  auto mu = expand_local(L.data.grid, s.model(), tr.mu_mean);
  write_volume(r.out / "mu_mean.vol", mu);
  write_pgm(r.out / "mu_mean.pgm", mu);
  r.summary["selected"] = sel;
  r.summary["B"] = res.penalized_B(1.0);
}

std::vector<int> truth_of(const Manifest& m)
{
  if (!m.extra.contains("truth")) throw data_error("missing-truth", "manifest has no truth vector");
  return m.extra["truth"].get<std::vector<int>>();
}

void cmd_calibrate(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::posterior_mode_su}, Mode::posterior_mode_su);
  if (o.datasets.empty()) throw usage_error("missing-input", "--data is required");
  Hyperparams h = hyper_of(r.cfg);
  std::vector<Loaded> sets;
  for (const auto& d : o.datasets) sets.push_back(load(r, d, ""));
  r.inputs["data"] = o.datasets;
  std::vector<PipelineResult> runs(sets.size());
  std::vector<std::vector<int>> truth;
  for (const auto& L : sets) truth.push_back(truth_of(L.manifest));
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mx;
  auto work = [&] {
    for (std::size_t t; (t = next++) < sets.size();) {
      try {
        runs[t] = posterior_mode_pipeline(sets[t].data, sets[t].parc, h, pipeline_of(r.cfg, mode, mix_seed(r.seed, t)));
      } catch (...) {
        std::lock_guard<std::mutex> lk(mx);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::max(1u, r.threads); ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
  auto cal = calibrate_penalty(runs, truth, std::max<std::size_t>(1, r.cfg.count("calibrate.steps", 100)));
  Csv c(r.out / "risk.csv");
  c.row("c", "misclassified");
  for (std::size_t t = 0; t < cal.grid.size(); ++t) c.row(cal.grid[t], cal.risk[t]);
  Csv d(r.out / "datasets.csv");
  d.row("dataset", "region", "truth", "LR", "D");
  std::size_t regions = 0;
  for (std::size_t t = 0; t < runs.size(); ++t)
    for (std::size_t j = 0; j < runs[t].regions.size(); ++j, ++regions)
      d.row(t, j, truth[t].at(j), runs[t].regions[j].LR, runs[t].regions[j].D);
  r.summary["c_star"] = cal.c_star;
  r.summary["misclassified"] = cal.errors;
  r.summary["regions"] = regions;
}

void cmd_compare(Run& r, const Opts& o)
{
  Mode mode = mode_of(r, {Mode::no_su, Mode::posterior_mode_su}, Mode::posterior_mode_su);
  if (o.parcellations.empty()) throw usage_error("missing-input", "--parcellation is required");
  auto L = load(r, o.data, "");
  std::vector<Parcellation> ps;
  for (const auto& p : o.parcellations) ps.push_back(read_parcellation(require_file(p, "--parcellation")));
  r.inputs["parcellations"] = o.parcellations;
  auto scores = compare_parcellations(L.data, ps, hyper_of(r.cfg), pipeline_of(r.cfg, mode, r.seed));
  Csv c(r.out / "parcellations.csv");
  c.row("parcellation", "log_evidence", "posterior", "log_odds_best");
  for (std::size_t t = 0; t < scores.size(); ++t)
    c.row(fs::path(o.parcellations[t]).filename().string(), scores[t].log_evidence, scores[t].posterior,
          scores[t].log_odds_best);
}

void cmd_randthresh(Run& r, const Opts& o)
{
  no_mode(r);
  const Settings& s = r.cfg;
  auto y = read_scalar_map(require_file(o.input, "--input"));
  r.inputs["input"] = fs::absolute(o.input).string();
  std::vector<bool> mask(y.grid.size(), false);
  std::string method = s.str("threshold.method", "random");
  if (method == "ggm") {
    auto f = fit_ggm(y.values, s.flag("threshold.negative_gamma", false));
    for (auto i : f.selected) mask[i] = true;
    json j = {{"threshold", std::isfinite(f.threshold) ? json(f.threshold) : json(nullptr)},
              {"selected", f.selected.size()}, {"pi0", f.pi0}, {"mean", f.mean}, {"var", f.var},
              {"pi_pos", f.pi_pos}, {"shape_pos", f.shape_pos}, {"scale_pos", f.scale_pos},
              {"pi_neg", f.pi_neg}, {"shape_neg", f.shape_neg}, {"scale_neg", f.scale_neg},
              {"loglik", f.loglik}, {"iterations", f.iterations}};
    write_text(r.out / "threshold.json", j.dump(2) + "\n");
    r.summary["selected"] = f.selected.size();
  } else if (method == "random") {
    ThresholdConfig tc;
    std::string win = s.str("threshold.window", "varying");
    if (win != "varying" && win != "fixed") throw usage_error("bad-config", "threshold.window is varying or fixed");
    tc.window.varying = win == "varying";
    tc.window.K = s.count("threshold.K", 0);
    tc.window.kappa = s.count("threshold.kappa", 0);
    tc.window.p = s.num("threshold.p", 0);
    tc.known_sigma = s.flag("threshold.known_sigma", false);
    tc.sigma = s.num("threshold.sigma", 1.0);
    tc.min_remaining = s.count("threshold.min_remaining", tc.min_remaining);
    auto os = order_statistics(y.values);
    auto res = select_threshold(os, tc);
    for (auto i : res.selected) mask[i] = true;
    Csv c(r.out / "eta_profile.csv");
    c.row("k", "eta");
    auto prof = eta_profile(os, tc);
    for (std::size_t k = 0; k < prof.size(); ++k) c.row(k, prof[k]);
    json j = {{"k_hat", res.k_hat}, {"threshold", std::isfinite(res.threshold) ? json(res.threshold) : json(nullptr)},
              {"eta_min", res.eta_min}, {"theta_hat", res.theta_hat}, {"k_max", res.k_max}};
    if (std::size_t reps = s.count("threshold.global_reps", 0)) {
      auto gt = global_null_test(y.values, tc.known_sigma ? tc.sigma : std::sqrt(res.theta_hat),
                                 s.num("threshold.alpha", 0.05), reps, mix_seed(r.seed, 5));
      j["global"] = {{"statistic", gt.statistic}, {"critical", gt.critical}, {"reject", gt.reject}};
    }
    write_text(r.out / "threshold.json", j.dump(2) + "\n");
    r.summary["k_hat"] = res.k_hat;
  } else {
    throw usage_error("bad-config", "threshold.method is random or ggm");
  }
  auto m = mask_map(y.grid, mask);
  write_volume(r.out / "mask.vol", m);
  if (y.grid.rank > 1) write_pgm(r.out / "mask.pgm", m);
}

void cmd_baseline(Run& r, const Opts& o)
{
  no_mode(r);
  auto L = load(r, o.data, "");
  const Settings& s = r.cfg;
  double alpha = s.num("baseline.alpha", 0.05);
  std::size_t reps = s.count("baseline.reps", 1000);
  const Grid& g = L.data.grid;
  auto maps = effect_maps(L.data);
  auto t = t_map(maps);
  auto p = t_pvalues(t, maps.size());
  auto bon = bonferroni(p, alpha), bh = benjamini_hochberg(p, alpha);
  auto mt = permutation_max_t(maps, alpha, reps, mix_seed(r.seed, 1));
  auto cl = cluster_size_test(g, maps, s.num("baseline.forming_alpha", 0.001), alpha, reps, mix_seed(r.seed, 2));
  ScalarMap tm(g, t);
  for (auto& v : tm.values)
    if (!std::isfinite(v)) v = 0;  // volumes hold finite values only
  write_volume(r.out / "tmap.vol", tm);
  write_pgm(r.out / "tmap.pgm", tm);
  std::vector<bool> clmask(g.size(), false);
  for (const auto& c : cl.clusters)
    if (c.significant)
      for (auto k : c.voxels) clmask[k] = true;
  Csv c(r.out / "baseline.csv");
  c.row("method", "threshold", "detections");
  auto count = [](const std::vector<bool>& m) { return std::size_t(std::count(m.begin(), m.end(), true)); };
  c.row("bonferroni", alpha / double(defined_count(p)), count(bon));
  c.row("bh", alpha, count(bh));
  c.row("maxT", mt.threshold, count(mt.reject));
  c.row("cluster", cl.critical_size, count(clmask));
  write_volume(r.out / "mask_bonferroni.vol", mask_map(g, bon));
  write_volume(r.out / "mask_bh.vol", mask_map(g, bh));
  write_volume(r.out / "mask_maxT.vol", mask_map(g, mt.reject));
  write_volume(r.out / "mask_cluster.vol", mask_map(g, clmask));
  Csv cc(r.out / "clusters.csv");
  cc.row("cluster", "size", "peak", "x", "y", "z", "significant");
  for (std::size_t k = 0; k < cl.clusters.size(); ++k) {
    const auto& q = cl.clusters[k];
    cc.row(k, q.size, q.peak, q.peak_coord[0], q.peak_coord[1], q.peak_coord[2], int(q.significant));
  }
}

// Collects provenance and CSV tables of an artifact directory into one JSON document and renders
// slice images for every scalar volume found.
void cmd_report(Run& r, const Opts& o)
{
  no_mode(r);
  fs::path in = o.input.empty() ? throw usage_error("missing-input", "--input is required") : fs::path(o.input);
  if (!fs::is_directory(in)) throw data_error("io", "missing input directory " + in.string());
  r.inputs["input"] = fs::absolute(in).string();
  json rep = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto name = f.filename().string();
    if (f.extension() == ".csv") {
      std::ifstream s(f);
      std::string line;
      json rows = json::array();
      while (std::getline(s, line)) rows.push_back(line);
      rep["tables"][name] = rows;
    } else if (name == "provenance.json") {
      rep["provenance"] = json::parse(detail::slurp(f));
    } else if (f.extension() == ".vol") {
      auto v = read_volume(f);
      if (auto* m = std::get_if<ScalarMap>(&v)) {
        write_pgm(r.out / (f.stem().string() + ".pgm"), *m);
        rep["images"].push_back(f.stem().string() + ".pgm");
      }
    }
  }
  write_text(r.out / "report.json", rep.dump(2) + "\n");
}

void write_provenance(const Run& r)
{
  json j;
  j["command"] = r.command;
  j["argv"] = r.argv;
  j["cwd"] = fs::current_path().string();
  j["seed"] = r.seed;
  j["mode"] = r.mode_given ? json(r.mode) : json(nullptr);
  j["threads"] = r.threads;
  j["config_file"] = r.config_file;
  j["settings"] = r.cfg.to_json();
  j["inputs"] = r.inputs;
  j["summary"] = r.summary;
  j["versions"] = {{"voxbayes", kVersion},
                   {"compiler", __VERSION__},
                   {"json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION},
                   {"fmt", FMT_VERSION}};
  write_text(r.out / "provenance.json", j.dump(2) + "\n");
}

void report_error(const std::string& code, const std::string& kind, const std::string& msg, int exit, const fs::path& out)
{
  json e = {{"error", {{"code", code}, {"kind", kind}, {"message", msg}, {"exit_code", exit}}}};
  std::cerr << e.dump() << "\n";
  std::error_code ec;
  if (!out.empty() && fs::is_directory(out, ec)) {
    std::ofstream f(out / "error.json", std::ios::binary);
    f << e.dump(2) << "\n";
  }
}

} // namespace

int main(int argc, char** argv)
{
  Run r;
  Opts o;
  for (int i = 0; i < argc; ++i) r.argv.push_back(argv[i]);

  CLI::App app{"Bayesian group analysis of voxel maps with spatial uncertainty"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.add_option("--seed", r.seed, "random seed")->capture_default_str();
  auto* mode_opt = app.add_option("--mode", r.mode, "no-SU | posterior-mode-SU | exact-SU");
  app.add_option("--threads", r.threads, "worker threads cap")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--config", r.config_file, "key = value settings file");
  app.add_option("--set", r.sets, "key=value override (repeatable)");
  app.add_option("--out", r.out, "output directory")->required();

  std::map<std::string, std::function<void(Run&, const Opts&)>> handlers = {
      {"simulate", cmd_simulate}, {"fit", cmd_fit}, {"sample", cmd_sample}, {"sa", cmd_sa},
      {"evidence", cmd_evidence}, {"select", cmd_select}, {"calibrate-penalty", cmd_calibrate},
      {"compare-parcellations", cmd_compare}, {"randthresh", cmd_randthresh}, {"baseline", cmd_baseline},
      {"report", cmd_report}};
  const std::map<std::string, std::string> help = {
      {"simulate", "generate a phantom dataset"}, {"fit", "SAEM estimate of the group parameters"},
      {"sample", "Gibbs chain"}, {"sa", "annealed displacement estimate"},
      {"evidence", "network marginal likelihood"}, {"select", "per-region selection report"},
      {"calibrate-penalty", "choose the likelihood-ratio penalty on labelled datasets"},
      {"compare-parcellations", "posterior over candidate parcellations"},
      {"randthresh", "random threshold or mixture detection on a statistic map"},
      {"baseline", "t-map with Bonferroni, BH, maxT and cluster-size tests"},
      {"report", "collect an artifact directory into report.json and slice images"}};
  for (const auto& [name, text] : help) {
    auto* sub = app.add_subcommand(name, text);
    if (name == "calibrate-penalty")
      sub->add_option("--data", o.datasets, "dataset manifests")->required();
    else if (name == "randthresh" || name == "report")
      sub->add_option("--input", o.input, name == "report" ? "artifact directory" : "statistic volume")->required();
    else if (name != "simulate")
      sub->add_option("--data", o.data, "dataset manifest")->required();
    if (name == "compare-parcellations")
      sub->add_option("--parcellation", o.parcellations, "candidate parcellations")->required();
    else if (name == "fit" || name == "sample" || name == "sa" || name == "evidence" || name == "select")
      sub->add_option("--parcellation", o.parcellation, "parcellation volume (overrides the manifest)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", "usage", e.what(), 2, {});
    return 2;
  }

  try {
    r.command = app.get_subcommands().front()->get_name();
    r.mode_given = mode_opt->count() > 0;
    if (!r.config_file.empty()) r.cfg.load(r.config_file);
    for (const auto& s : r.sets) r.cfg.set(s, "--set");
    std::error_code ec;
    fs::create_directories(r.out, ec);
    if (ec || !fs::is_directory(r.out)) throw data_error("io", "cannot create output directory " + r.out.string());
    handlers.at(r.command)(r, o);
    write_provenance(r);
  } catch (const Error& e) {
    const char* kind = e.kind() == ErrorKind::usage ? "usage" : e.kind() == ErrorKind::data ? "data" : "numerical";
    report_error(e.code(), kind, e.what(), e.exit_code(), r.out);
    return e.exit_code();
  } catch (const std::exception& e) {
    report_error("internal", "numerical", e.what(), 4, r.out);
    return 4;
  }
  return 0;
}

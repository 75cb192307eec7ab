#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace voxbayes {

// log erfc(x) for x >= 0, switching to the asymptotic series where erfc underflows.
inline double log_erfc(double x)
{
  if (x < 25) return std::log(std::erfc(x));
  double x2 = x * x, ix2 = 1 / x2;
  double series = 1 - 0.5 * ix2 + 0.75 * ix2 * ix2 - 1.875 * ix2 * ix2 * ix2 + 6.5625 * ix2 * ix2 * ix2 * ix2;
  return -x2 - std::log(x * std::sqrt(M_PI)) + std::log(series);
}

// X = -log(1 - F(|y|)) for |eps| ~ |N(0, 1)|, as a function of t = |y| / sigma.
inline double folded_normal_score(double t) { return -log_erfc(t / M_SQRT2); }

// Cubic Hermite table of folded_normal_score on [0, 40]; absolute error far below 1e-12.
class ScoreTable {
public:
  static const ScoreTable& get()
  {
    static const ScoreTable t;
    return t;
  }

  double operator()(double t) const
  {
    if (t >= tmax_) return folded_normal_score(t);
    double s = t * inv_h_;
    auto i = static_cast<std::size_t>(s);
    double u = s - i;
    double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * f_[i] + (u3 - 2 * u2 + u) * df_[i] + (-2 * u3 + 3 * u2) * f_[i + 1] +
           (u3 - u2) * df_[i + 1];
  }

private:
  ScoreTable()
  {
    const double h = 1.0 / inv_h_;
    std::size_t N = static_cast<std::size_t>(tmax_ * inv_h_) + 2;
    f_.resize(N);
    df_.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      double t = i * h;
      f_[i] = folded_normal_score(t);
      // d/dt -log erfc(t/sqrt2) = sqrt(2/pi) exp(-t^2/2 - log erfc(t/sqrt2))
      df_[i] = h * std::sqrt(2 / M_PI) * std::exp(-0.5 * t * t + f_[i]);
    }
  }

  double tmax_ = 40.0;
  double inv_h_ = 1024.0;
  std::vector<double> f_, df_;
};

// |y| in decreasing order with the original positions (stable on ties).
struct OrderedSample {
  std::vector<double> abs;
  std::vector<std::size_t> index;

  std::size_t n() const { return abs.size(); }
};

inline OrderedSample order_statistics(const std::vector<double>& y)
{
  OrderedSample os;
  os.index.resize(y.size());
  std::iota(os.index.begin(), os.index.end(), 0);
  std::stable_sort(os.index.begin(), os.index.end(), [&](std::size_t a, std::size_t b) { return std::abs(y[a]) > std::abs(y[b]); });
  for (std::size_t i : os.index) {
    if (!std::isfinite(y[i])) throw data_error("non-finite", "statistic map contains NaN or Inf");
    os.abs.push_back(std::abs(y[i]));
  }
  return os;
}

inline std::vector<double> transform_known(const OrderedSample& os, double sigma)
{
  if (!(sigma > 0)) throw usage_error("bad-sigma", "noise scale must be positive");
  std::vector<double> x(os.n());
  for (std::size_t i = 0; i < os.n(); ++i) x[i] = folded_normal_score(os.abs[i] / sigma);
  return x;
}

// Harmonic numbers H_0..H_n.
class Harmonic {
public:
  explicit Harmonic(std::size_t n) : h_(n + 1, 0.0)
  {
    // summed from small terms upward for accuracy
    for (std::size_t i = 1; i <= n; ++i) h_[i] = h_[i - 1] + 1.0 / i;
  }
  double operator[](std::size_t i) const { return h_[i]; }
  std::size_t size() const { return h_.size() - 1; }

private:
  std::vector<double> h_;
};

// E X_(i) for the i-th largest of m standard exponentials: sum_{l=i}^m 1/l.
inline double expected_order_stat(const Harmonic& H, std::size_t m, std::size_t i) { return H[m] - H[i - 1]; }

// E T_j = sum_{i<=j} E X_(i) = j + j (H_m - H_j).
inline double expected_partial_sum(const Harmonic& H, std::size_t m, std::size_t j)
{
  return double(j) * (1.0 + H[m] - H[j]);
}

struct WindowSpec {
  bool varying = true;
  std::size_t K = 0;      // fixed width (when !varying)
  std::size_t kappa = 0;  // minimum remaining sample (0 means ceil(0.05 n))
  double p = 0;           // 0 selects the max norm, otherwise l_p
};

struct ThresholdConfig {
  WindowSpec window;
  bool known_sigma = false;
  double sigma = 1.0;
  std::size_t min_remaining = 30;  // unknown sigma: keep at least this many observations
};

struct ThresholdResult {
  std::size_t k_hat = 0;
  double threshold = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> selected;
  double eta_min = 0;
  double theta_hat = 0;  // variance estimate at k_hat (unknown sigma) or sigma^2
  std::size_t k_max = 0;
};

namespace detail {

inline std::size_t kappa_of(const WindowSpec& w, std::size_t n)
{
  return w.kappa ? w.kappa : static_cast<std::size_t>(std::ceil(0.05 * n));
}

// Profile evaluator shared by the known and unknown scale cases.
class EtaEvaluator {
public:
  EtaEvaluator(const OrderedSample& os, const ThresholdConfig& cfg) : os_(os), cfg_(cfg), H_(os.n())
  {
    const std::size_t n = os.n();
    if (n == 0) throw data_error("empty-sample", "no observations");
    const std::size_t kappa = kappa_of(cfg.window, n);
    std::size_t keep = cfg.window.varying ? kappa : cfg.window.K;
    if (!cfg.window.varying && (cfg.window.K == 0 || cfg.window.K > n))
      throw usage_error("bad-window", "fixed window must satisfy 1 <= K <= n");
    if (cfg.window.varying && kappa > n) throw usage_error("bad-window", "kappa exceeds sample size");
    if (!cfg.known_sigma) keep = std::max(keep, cfg.min_remaining);
    if (keep == 0) keep = 1;
    if (keep > n) throw usage_error("bad-window", "sample too small for the requested window");
    kmax_ = n - keep;
    // the original fixed-window search stops at k = K_n
    if (cfg.known_sigma && !cfg.window.varying) kmax_ = std::min(kmax_, cfg.window.K);
    if (cfg.known_sigma) {
      x_ = transform_known(os, cfg.sigma);
      prefix_.assign(n + 1, 0.0);
      for (std::size_t i = 0; i < n; ++i) prefix_[i + 1] = prefix_[i] + x_[i];
    } else {
      sq_suffix_.assign(n + 1, 0.0);
      for (std::size_t i = n; i-- > 0;) sq_suffix_[i] = sq_suffix_[i + 1] + os.abs[i] * os.abs[i];
      for (std::size_t k = 0; k <= kmax_; ++k)
        if (!(theta(k) > 0)) throw data_error("degenerate-sample", "zero variance estimate in the retained sample");
      tail_sums();
    }
  }

  std::size_t k_max() const { return kmax_; }

  double theta(std::size_t k) const
  {
    if (cfg_.known_sigma) return cfg_.sigma * cfg_.sigma;
    return sq_suffix_[k] / double(os_.n() - k);
  }

  // eta_k, or any value above `bound` once the running norm exceeds it
  double eta(std::size_t k, double bound = std::numeric_limits<double>::infinity(), bool strict = true)
  {
    const std::size_t n = os_.n(), m = n - k;
    const std::size_t W = cfg_.window.varying ? m : cfg_.window.K;
    const double norm = cfg_.window.varying ? double(m) : double(n);
    if (cfg_.known_sigma) return scan(k, W, norm, prefix_[k + W] - prefix_[k], bound, strict, [&](std::size_t i) { return x_[i]; });
    const ScoreTable& g = ScoreTable::get();
    const double u = 1.0 / std::sqrt(theta(k));
    const double* a = os_.abs.data();
    return scan(k, W, norm, tw_[k], bound, strict, [&](std::size_t i) { return g(a[i] * u); });
  }

private:
  template<typename X>
  double scan(std::size_t k, std::size_t W, double norm, double TW, double bound, bool strict, X&& x)
  {
    const std::size_t m = os_.n() - k;
    const double EW = expected_partial_sum(H_, m, W);
    const double Hm = H_[m];
    const double p = cfg_.window.p;
    double T = 0, acc = 0;
    if (p == 0) {
      const double scale = std::sqrt(norm);
      const double lim = bound * scale;
      for (std::size_t j = 1; j <= W; ++j) {
        T += x(k + j - 1);
        double Q = double(j) * (1.0 + Hm - H_[j]) / EW * TW;
        double dev = std::abs(T - Q);
        if (dev > acc) {
          acc = dev;
          if (strict ? acc > lim : acc >= lim) return acc / scale;
        }
      }
      return acc / scale;
    }
    const double scale = std::pow(norm, -p / 2 - 1);
    const double lim = bound / scale;
    for (std::size_t j = 1; j <= W; ++j) {
      T += x(k + j - 1);
      double Q = double(j) * (1.0 + Hm - H_[j]) / EW * TW;
      acc += std::pow(std::abs(T - Q), p);
      if (strict ? acc > lim : acc >= lim) return acc * scale;
    }
    return acc * scale;
  }

  // T_{k,W} for every k. Within a block of consecutive k the windows share a common segment whose
  // sum is a smooth function of u = 1/sigma-hat_k; it is interpolated at Chebyshev nodes.
  void tail_sums()
  {
    const std::size_t n = os_.n();
    const ScoreTable& g = ScoreTable::get();
    const double* a = os_.abs.data();
    const bool vary = cfg_.window.varying;
    const std::size_t K = cfg_.window.K;
    constexpr std::size_t Bk = 128, P = 12;
    tw_.assign(kmax_ + 1, 0.0);
    auto end_of = [&](std::size_t k) { return vary ? n : k + K; };
    auto direct = [&](std::size_t lo, std::size_t hi, double u) {
      double t = 0;
      for (std::size_t i = lo; i < hi; ++i) t += g(a[i] * u);
      return t;
    };
    for (std::size_t k0 = 0; k0 <= kmax_; k0 += Bk) {
      const std::size_t k1 = std::min(kmax_, k0 + Bk - 1);
      const std::size_t cs = k1, ce = end_of(k0);
      if (ce <= cs + 4 * P || k1 == k0) {
        for (std::size_t k = k0; k <= k1; ++k) tw_[k] = direct(k, end_of(k), 1.0 / std::sqrt(theta(k)));
        continue;
      }
      double ulo = 1.0 / std::sqrt(theta(k0)), uhi = 1.0 / std::sqrt(theta(k1));
      if (ulo > uhi) std::swap(ulo, uhi);
      const double mid = 0.5 * (ulo + uhi), half = 0.5 * (uhi - ulo);
      double node[P], val[P], wt[P];
      for (std::size_t p = 0; p < P; ++p) {
        double th = M_PI * (p + 0.5) / P;
        node[p] = mid + half * std::cos(th);
        wt[p] = (p % 2 ? -1.0 : 1.0) * std::sin(th);
        val[p] = direct(cs, ce, node[p]);
      }
      for (std::size_t k = k0; k <= k1; ++k) {
        double u = 1.0 / std::sqrt(theta(k));
        double common;
        if (half == 0) {
          common = val[0];
        } else {
          double num = 0, den = 0;
          common = NAN;
          for (std::size_t p = 0; p < P; ++p) {
            double dlt = u - node[p];
            if (dlt == 0) {
              common = val[p];
              break;
            }
            num += wt[p] * val[p] / dlt;
            den += wt[p] / dlt;
          }
          if (std::isnan(common)) common = num / den;
        }
        tw_[k] = common + direct(k, cs, u) + direct(ce, end_of(k), u);
      }
    }
  }

  const OrderedSample& os_;
  ThresholdConfig cfg_;
  Harmonic H_;
  std::size_t kmax_ = 0;
  std::vector<double> x_, prefix_, sq_suffix_, tw_;
};

} // namespace detail

// eta_k for k = 0..k_max.
inline std::vector<double> eta_profile(const OrderedSample& os, const ThresholdConfig& cfg)
{
  detail::EtaEvaluator ev(os, cfg);
  std::vector<double> out;
  for (std::size_t k = 0; k <= ev.k_max(); ++k) out.push_back(ev.eta(k));
  return out;
}

// argmin of the profile (smallest k on ties). Candidates whose running norm already exceeds the
// best value found are abandoned early, which leaves the argmin unchanged.
inline ThresholdResult select_threshold(const OrderedSample& os, const ThresholdConfig& cfg)
{
  detail::EtaEvaluator ev(os, cfg);
  const std::size_t K = ev.k_max();
  std::vector<char> done(K + 1, 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t kb = 0;
  auto consider = [&](std::size_t k) {
    if (done[k]) return;
    done[k] = 1;
    // equal values only win for smaller k
    double e = ev.eta(k, best, k < kb);
    if (e < best || (e == best && k < kb)) {
      best = e;
      kb = k;
    }
  };
  std::size_t stride = std::max<std::size_t>(1, (K + 1) / 64);
  for (std::size_t k = 0; k <= K; k += stride) consider(k);
  // refine outward from the coarse optimum, then sweep the rest
  std::size_t lo = kb >= stride ? kb - stride : 0, hi = std::min(K, kb + stride);
  for (std::size_t k = lo; k <= hi; ++k) consider(k);
  for (std::size_t k = 0; k <= K; ++k) consider(k);

  ThresholdResult r;
  r.k_hat = kb;
  r.eta_min = best;
  r.k_max = K;
  r.theta_hat = ev.theta(kb);
  if (kb > 0) r.threshold = os.abs[kb - 1];
  r.selected.assign(os.index.begin(), os.index.begin() + kb);
  return r;
}

inline ThresholdResult select_threshold(const std::vector<double>& y, const ThresholdConfig& cfg)
{
  return select_threshold(order_statistics(y), cfg);
}

// ---------------------------------------------------------------------------
// Global null test: D_n = max_j |T_j - Q_j| / sqrt(n) with the whole sample as window.

inline double global_statistic(const std::vector<double>& x_desc)
{
  const std::size_t n = x_desc.size();
  Harmonic H(n);
  double Tn = std::accumulate(x_desc.begin(), x_desc.end(), 0.0);
  double En = expected_partial_sum(H, n, n);
  double T = 0, mx = 0;
  for (std::size_t j = 1; j <= n; ++j) {
    T += x_desc[j - 1];
    mx = std::max(mx, std::abs(T - expected_partial_sum(H, n, j) / En * Tn));
  }
  return mx / std::sqrt(double(n));
}

struct GlobalTest {
  double statistic = 0;
  double critical = 0;
  bool reject = false;
};

inline double global_critical_value(std::size_t n, double alpha, std::size_t reps, std::uint64_t seed)
{
  if (reps == 0) throw usage_error("bad-reps", "calibration needs at least one replicate");
  Rng rng(seed);
  std::vector<double> stats, x(n);
  for (std::size_t r = 0; r < reps; ++r) {
    for (auto& v : x) v = -std::log(rng.uniform());
    std::sort(x.begin(), x.end(), std::greater<>());
    stats.push_back(global_statistic(x));
  }
  std::sort(stats.begin(), stats.end());
  auto idx = static_cast<std::size_t>(std::ceil((1 - alpha) * reps));
  idx = std::min(idx > 0 ? idx - 1 : 0, reps - 1);
  return stats[idx];
}

inline GlobalTest global_null_test(const std::vector<double>& y, double sigma, double alpha, std::size_t reps,
                                   std::uint64_t seed)
{
  auto os = order_statistics(y);
  GlobalTest g;
  g.statistic = global_statistic(transform_known(os, sigma));
  g.critical = global_critical_value(y.size(), alpha, reps, seed);
  g.reject = g.statistic > g.critical;
  return g;
}

// ---------------------------------------------------------------------------
// Gaussian / Gamma mixture on a statistic map, optionally with a negated Gamma for y < 0.

struct GgmFit {
  double pi0 = 1, mean = 0, var = 1;
  double pi_pos = 0, shape_pos = 1, scale_pos = 1;
  double pi_neg = 0, shape_neg = 1, scale_neg = 1;
  double loglik = -INFINITY;
  std::size_t iterations = 0;
  double threshold = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> selected;

  double log_gamma_pdf(double y, double a, double b) const
  {
    if (!(y > 0)) return -INFINITY;
    return (a - 1) * std::log(y) - y / b - std::lgamma(a) - a * std::log(b);
  }

  // posterior probability of the positive Gamma class
  double posterior_pos(double y) const
  {
    double l0 = std::log(pi0) - 0.5 * std::log(2 * M_PI * var) - 0.5 * (y - mean) * (y - mean) / var;
    double l1 = pi_pos > 0 ? std::log(pi_pos) + log_gamma_pdf(y, shape_pos, scale_pos) : -INFINITY;
    double l2 = pi_neg > 0 ? std::log(pi_neg) + log_gamma_pdf(-y, shape_neg, scale_neg) : -INFINITY;
    double mx = std::max({l0, l1, l2});
    if (!std::isfinite(l1)) return 0.0;
    return std::exp(l1 - mx) / (std::exp(l0 - mx) + std::exp(l1 - mx) + std::exp(l2 - mx));
  }
};

namespace detail {

// Weighted Gamma maximum likelihood: log a - digamma(a) = log(mean) - mean(log y).
inline void gamma_mle(const std::vector<double>& y, const std::vector<double>& w, double& shape, double& scale)
{
  double sw = 0, sy = 0, sl = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (w[i] > 0 && y[i] > 0) {
      sw += w[i];
      sy += w[i] * y[i];
      sl += w[i] * std::log(y[i]);
    }
  if (!(sw > 0)) return;
  double mean = sy / sw, s = std::log(mean) - sl / sw;
  if (!(s > 0)) s = 1e-8;
  double a = (3 - s + std::sqrt((s - 3) * (s - 3) + 24 * s)) / (12 * s);
  for (int it = 0; it < 50; ++it) {
    double f = std::log(a) - boost::math::digamma(a) - s;
    double fp = 1 / a - boost::math::trigamma(a);
    double na = a - f / fp;
    if (!(na > 0)) na = a / 2;
    if (std::abs(na - a) < 1e-12 * a) {
      a = na;
      break;
    }
    a = na;
  }
  shape = a;
  scale = mean / a;
}

} // namespace detail

inline GgmFit fit_ggm(const std::vector<double>& y, bool negative_gamma = false, std::size_t max_iter = 500,
                      double tol = 1e-4)
{
  const std::size_t n = y.size();
  if (n < 3) throw data_error("empty-sample", "mixture fit needs at least three values");
  GgmFit f;
  // start from a hard split: positive values go to the Gamma class; with the mirrored class,
  // values beyond half a standard deviation on either side go to the Gamma classes
  double mean0 = std::accumulate(y.begin(), y.end(), 0.0) / n, var0 = 0;
  for (double t : y) var0 += (t - mean0) * (t - mean0);
  const double cut = negative_gamma ? 0.5 * std::sqrt(var0 / n) : 0.0;
  std::vector<double> r0(n), r1(n), r2(n), yn(n);
  for (std::size_t i = 0; i < n; ++i) {
    yn[i] = -y[i];
    r1[i] = y[i] > cut;
    r2[i] = negative_gamma && y[i] < -cut;
    r0[i] = 1 - r1[i] - r2[i];
  }
  auto m_step = [&]() {
    double s0 = 0, s1 = 0, s2 = 0, sm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s0 += r0[i];
      s1 += r1[i];
      s2 += r2[i];
      sm += r0[i] * y[i];
    }
    if (!(s0 > 0)) throw numerical_error("degenerate-mixture", "Gaussian class is empty");
    f.mean = sm / s0;
    double sv = 0;
    for (std::size_t i = 0; i < n; ++i) sv += r0[i] * (y[i] - f.mean) * (y[i] - f.mean);
    f.var = std::max(sv / s0, 1e-12);
    f.pi0 = s0 / n;
    f.pi_pos = s1 > 1e-12 * n ? s1 / n : 0.0;
    if (f.pi_pos > 0) detail::gamma_mle(y, r1, f.shape_pos, f.scale_pos);
    if (negative_gamma) {
      f.pi_neg = s2 > 1e-12 * n ? s2 / n : 0.0;
      if (f.pi_neg > 0) detail::gamma_mle(yn, r2, f.shape_neg, f.scale_neg);
    }
  };
  m_step();
  double prev = -INFINITY;
  for (std::size_t it = 0; it < max_iter; ++it) {
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double l0 = std::log(f.pi0) - 0.5 * std::log(2 * M_PI * f.var) - 0.5 * (y[i] - f.mean) * (y[i] - f.mean) / f.var;
      double l1 = f.pi_pos > 0 ? std::log(f.pi_pos) + f.log_gamma_pdf(y[i], f.shape_pos, f.scale_pos) : -INFINITY;
      double l2 = f.pi_neg > 0 ? std::log(f.pi_neg) + f.log_gamma_pdf(-y[i], f.shape_neg, f.scale_neg) : -INFINITY;
      double mx = std::max({l0, l1, l2});
      double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx), e2 = std::exp(l2 - mx), z = e0 + e1 + e2;
      r0[i] = e0 / z;
      r1[i] = e1 / z;
      r2[i] = e2 / z;
      ll += mx + std::log(z);
    }
    f.loglik = ll;
    f.iterations = it + 1;
    m_step();
    if (std::abs(ll - prev) < tol * n) break;
    prev = ll;
  }

  // Gaussian-only fit for comparison; the Gamma class is dropped when BIC does not support it
  {
    double gl = -0.5 * n * (std::log(2 * M_PI * var0 / n) + 1);
    double extra = negative_gamma ? 6 : 3;
    if (f.loglik - gl < 0.5 * extra * std::log(double(n))) {
      f.pi0 = 1;
      f.pi_pos = f.pi_neg = 0;
      f.mean = mean0;
      f.var = var0 / n;
      f.loglik = gl;
    }
  }

  // smallest value such that it and every larger value have Gamma posterior >= 0.5
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
  std::size_t cnt = 0;
  while (cnt < n && f.posterior_pos(y[idx[cnt]]) >= 0.5) ++cnt;
  if (cnt > 0) f.threshold = y[idx[cnt - 1]];
  f.selected.assign(idx.begin(), idx.begin() + cnt);
  return f;
}

// ---------------------------------------------------------------------------
// Threshold stability over random subgroups of subjects.

using ThresholdFn = std::function<double(const std::vector<std::vector<double>>&)>;

struct Stability {
  double mean = 0;
  double variance = 0;
  std::vector<double> values;
};

inline Stability summarize(std::vector<double> v)
{
  Stability s;
  s.values = std::move(v);
  for (double t : s.values) s.mean += t;
  s.mean /= s.values.size();
  for (double t : s.values) s.variance += (t - s.mean) * (t - s.mean);
  s.variance /= s.values.size();
  return s;
}

inline std::vector<std::vector<double>> take_subjects(const std::vector<std::vector<double>>& maps,
                                                      const std::vector<std::size_t>& perm, std::size_t size)
{
  std::vector<std::vector<double>> sub;
  for (std::size_t t = 0; t < size; ++t) sub.push_back(maps[perm[t]]);
  return sub;
}

inline Stability threshold_stability(const std::vector<std::vector<double>>& maps, const ThresholdFn& fn,
                                     std::size_t subgroup, std::size_t permutations, std::uint64_t seed)
{
  if (subgroup == 0 || subgroup > maps.size()) throw usage_error("bad-subgroup", "subgroup size out of range");
  Rng rng(seed);
  std::vector<std::size_t> perm(maps.size());
  std::vector<double> vals;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    vals.push_back(fn(take_subjects(maps, perm, subgroup)));
  }
  return summarize(std::move(vals));
}

inline Stability threshold_stability_exhaustive(const std::vector<std::vector<double>>& maps, const ThresholdFn& fn,
                                                std::size_t subgroup)
{
  std::vector<std::size_t> perm(maps.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> vals;
  do vals.push_back(fn(take_subjects(maps, perm, subgroup)));
  while (std::next_permutation(perm.begin(), perm.end()));
  return summarize(std::move(vals));
}

} // namespace voxbayes

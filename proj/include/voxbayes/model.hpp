#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "deform.hpp"
#include "error.hpp"
#include "volume.hpp"

namespace voxbayes {

struct Hyperparams {
  double alpha = 3.0;
  double beta = 20.0;
  double lambda = 1e-3;
  double m = 0.0;
  double p = 0.5;            // default prior activation probability
  std::vector<double> p_region;  // optional per-region override

  double prior_p(std::size_t j) const { return j < p_region.size() ? p_region[j] : p; }

  static Hyperparams defaults() { return {}; }

  void validate() const
  {
    if (!(alpha > 0 && beta > 0 && lambda > 0)) throw usage_error("bad-hyperparams", "alpha, beta and lambda must be positive");
    auto ok = [](double q) { return q > 0 && q < 1; };
    if (!ok(p)) throw usage_error("bad-hyperparams", "prior activation probability must lie in (0,1)");
    for (double q : p_region)
      if (!ok(q)) throw usage_error("bad-hyperparams", "prior activation probability must lie in (0,1)");
  }
};

// theta = (eta_j, nu_j^2, sigma_j^2 per region; sigma_S^2). sigma_S^2 <= 0 means no spatial uncertainty.
struct GroupParams {
  std::vector<double> eta, nu2, sigma2;
  double sigmaS2 = 0.0;

  GroupParams() = default;
  explicit GroupParams(std::size_t N, double eta0 = 0, double nu20 = 1, double s20 = 1, double sS2 = 0)
    : eta(N, eta0), nu2(N, nu20), sigma2(N, s20), sigmaS2(sS2) {}

  std::size_t regions() const { return eta.size(); }
  bool su() const { return sigmaS2 > 0; }
};

using Network = std::vector<int>;

inline double log_inv_gamma(double z, double shape, double scale)
{
  if (!(z > 0)) return -INFINITY;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1) * std::log(z) - scale / z;
}

inline double log_normal(double x, double mean, double var)
{
  double d = x - mean;
  return -0.5 * (std::log(2 * std::numbers::pi * var) + d * d / var);
}

// log pi(eta, nu2, sigma2 | gamma) for one region.
inline double log_prior_region(double eta, double nu2, double sigma2, int gamma, const Hyperparams& h)
{
  double lp = log_inv_gamma(nu2, h.alpha, h.beta) + log_inv_gamma(sigma2, h.alpha, h.beta);
  if (gamma) lp += log_normal(eta, h.m, nu2 / h.lambda);
  else if (eta != 0.0) return -INFINITY;
  return lp;
}

// log pi(theta | gamma): region terms plus the sigma_S^2 term when spatial uncertainty is on.
inline double log_prior_theta(const GroupParams& th, const Network& g, const Hyperparams& h)
{
  double lp = 0;
  for (std::size_t j = 0; j < th.regions(); ++j) lp += log_prior_region(th.eta[j], th.nu2[j], th.sigma2[j], g[j], h);
  if (th.su()) lp += log_inv_gamma(th.sigmaS2, h.alpha, h.beta);
  return lp;
}

inline double log_prior_network(const Network& g, const Hyperparams& h)
{
  double lp = 0;
  for (std::size_t j = 0; j < g.size(); ++j) lp += std::log(g[j] ? h.prior_p(j) : 1 - h.prior_p(j));
  return lp;
}

inline double log_prior(const GroupParams& th, const Network& g, const Hyperparams& h)
{
  return log_prior_theta(th, g, h) + log_prior_network(g, h);
}

// log pi(w | sigma_S^2) for the full weight vector.
inline double log_prior_weights(const DisplacementSet& ds, double sigmaS2)
{
  double n = static_cast<double>(ds.w.size());
  return -0.5 * n * std::log(2 * std::numbers::pi * sigmaS2) - 0.5 * ds.sum_squares() / sigmaS2;
}

// ---------------------------------------------------------------------------
// Block likelihood. Observations displaced into one voxel share mu_k ~ N(eta, nu2), so
// y ~ N(eta 1, nu2 11' + diag(sigma2 + s_i^2)). Sherman-Morrison gives the closed form from
// additive per-observation sums, which is what makes incremental updates cheap.

struct BlockAccum {
  double count = 0, sum_log_v = 0, sum_inv_v = 0, sum_y_v = 0, sum_yy_v = 0;

  void add(double y, double s2, double sigma2, double sign = 1.0)
  {
    double v = sigma2 + s2;
    count += sign;
    sum_log_v += sign * std::log(v);
    sum_inv_v += sign / v;
    sum_y_v += sign * y / v;
    sum_yy_v += sign * y * y / v;
  }

  double loglik(double eta, double nu2) const
  {
    if (count < 0.5) return 0.0;
    double r1 = sum_y_v - eta * sum_inv_v;
    double r2 = sum_yy_v - 2 * eta * sum_y_v + eta * eta * sum_inv_v;
    double den = 1 + nu2 * sum_inv_v;
    double logdet = std::log(den) + sum_log_v;
    double quad = r2 - nu2 * r1 * r1 / den;
    return -0.5 * (count * std::log(2 * std::numbers::pi) + logdet + quad);
  }
};

inline double block_loglik(const std::vector<double>& y, const std::vector<double>& s2, double eta, double nu2,
                           double sigma2)
{
  BlockAccum acc;
  for (std::size_t i = 0; i < y.size(); ++i) acc.add(y[i], s2[i], sigma2);
  return acc.loglik(eta, nu2);
}

// log f(y | w, theta) summed over all target voxels. phi[i] maps source voxels of subject i to targets.
inline double data_loglik_given_w(const Dataset& data, const std::vector<std::vector<std::size_t>>& phi,
                                  const GroupParams& th, const Parcellation& parc)
{
  const std::size_t d = data.grid.size();
  std::vector<BlockAccum> acc(d);
  for (std::size_t i = 0; i < data.n(); ++i)
    for (std::size_t l = 0; l < d; ++l) {
      std::size_t k = phi[i][l];
      acc[k].add(data.subjects[i].effects[l], data.subjects[i].variances[l], th.sigma2[parc.labels[k]]);
    }
  double ll = 0;
  for (std::size_t k = 0; k < d; ++k) ll += acc[k].loglik(th.eta[parc.labels[k]], th.nu2[parc.labels[k]]);
  return ll;
}

inline double data_loglik_given_w(const Dataset& data, const DisplacementSet& ds, const GroupParams& th,
                                  const Parcellation& parc, bool exact = false)
{
  return data_loglik_given_w(data, displacement_maps(ds, exact), th, parc);
}

// ---------------------------------------------------------------------------
// Complete-data sufficient statistics.
//   s_S   = beta + 1/2 sum |w|^2
//   s_j1  = 1/2 sum_k n_k              s_j2 = beta + 1/2 sum (x - mu)^2
//   s_j3  = beta + 1/2 sum_k mu_k^2    s_j4 = gamma_j sum_k mu_k
struct SufficientStats {
  double sS = 0;
  std::vector<double> s1, s2, s3, s4;

  explicit SufficientStats(std::size_t N = 0) : s1(N, 0), s2(N, 0), s3(N, 0), s4(N, 0) {}

  void blend(const SufficientStats& o, double c)
  {
    sS += c * (o.sS - sS);
    for (std::size_t j = 0; j < s1.size(); ++j) {
      s1[j] += c * (o.s1[j] - s1[j]);
      s2[j] += c * (o.s2[j] - s2[j]);
      s3[j] += c * (o.s3[j] - s3[j]);
      s4[j] += c * (o.s4[j] - s4[j]);
    }
  }
};

// Closed-form maximizer of the complete-data posterior given statistics.
// region_sizes holds d_j; weight_count is rank * n * B (0 without spatial uncertainty).
inline GroupParams m_step(const SufficientStats& s, const Network& g, const std::vector<std::size_t>& region_sizes,
                          std::size_t weight_count, const Hyperparams& h)
{
  const std::size_t N = s.s1.size();
  GroupParams th(N);
  const double a1 = h.alpha + 1;
  for (std::size_t j = 0; j < N; ++j) {
    double dj = static_cast<double>(region_sizes[j]);
    double den2 = a1 + s.s1[j];
    if (!(den2 > 0) || !(s.s2[j] > 0)) throw numerical_error("degenerate-statistics", "non-positive variance statistic");
    th.sigma2[j] = s.s2[j] / den2;
    if (g[j]) {
      double t = s.s4[j] + h.lambda * h.m;
      th.eta[j] = t / (dj + h.lambda);
      double num = s.s3[j] + 0.5 * h.lambda * h.m * h.m - 0.5 * t * t / (dj + h.lambda);
      double den = a1 + (dj + 1) / 2;
      if (!(num > 0) || !(den > 0)) throw numerical_error("degenerate-statistics", "non-positive regional variance statistic");
      th.nu2[j] = num / den;
    } else {
      th.eta[j] = 0;
      double den = a1 + dj / 2;
      if (!(s.s3[j] > 0) || !(den > 0)) throw numerical_error("degenerate-statistics", "non-positive regional variance statistic");
      th.nu2[j] = s.s3[j] / den;
    }
  }
  if (weight_count > 0) {
    double den = a1 + weight_count / 2.0;
    if (!(s.sS > 0)) throw numerical_error("degenerate-statistics", "non-positive displacement statistic");
    th.sigmaS2 = s.sS / den;
  }
  return th;
}

inline nlohmann::json to_json(const GroupParams& th)
{
  return {{"eta", th.eta}, {"nu2", th.nu2}, {"sigma2", th.sigma2}, {"sigmaS2", th.sigmaS2}};
}

inline GroupParams params_from_json(const nlohmann::json& j)
{
  GroupParams th;
  try {
    th.eta = j.at("eta").get<std::vector<double>>();
    th.nu2 = j.at("nu2").get<std::vector<double>>();
    th.sigma2 = j.at("sigma2").get<std::vector<double>>();
    th.sigmaS2 = j.value("sigmaS2", 0.0);
  } catch (const std::exception& e) {
    throw data_error("malformed-params", e.what());
  }
  if (th.nu2.size() != th.eta.size() || th.sigma2.size() != th.eta.size())
    throw data_error("malformed-params", "parameter vectors differ in length");
  return th;
}

} // namespace voxbayes

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace voxbayes {

// splitmix64 finalizer, used to derive independent stream seeds
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0)
{
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed = 1) : eng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double normal() { return norm_(eng_); }
  double normal(double mean, double sd) { return mean + sd * norm_(eng_); }

  double gamma(double shape, double scale)
  {
    return std::gamma_distribution<double>(shape, scale)(eng_);
  }

  // draw from IG(shape, scale) with density scale^shape/Gamma(shape) z^(-shape-1) exp(-scale/z)
  double inv_gamma(double shape, double scale) { return scale / gamma(shape, 1.0); }

  std::size_t below(std::size_t n)
  {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
  }

  bool coin() { return (eng_() >> 63) != 0; }

  std::mt19937_64& engine() { return eng_; }

private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> norm_{0.0, 1.0};
};

} // namespace voxbayes

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace maskprop {

// Deterministic random source: MT19937-64 with explicit distribution
// transforms. std::mt19937_64 output is fixed by the C++ standard, and the
// transforms below avoid the implementation-defined std:: distributions, so
// identical seeds give identical streams on every platform (and in ports
// that implement the same generator + transforms).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // mode sigma; mean sigma*sqrt(pi/2)
  double rayleigh(double sigma) {
    double u = 0.0;
    do {
      u = uniform();
    } while (u <= 0.0);
    return sigma * std::sqrt(-2.0 * std::log(u));
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace maskprop

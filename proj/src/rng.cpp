#include "mtse/rng.hpp"

#include <cmath>

namespace mtse {

double Rng::normal(double mean, double sigma) {
  if (have_gauss_) {
    have_gauss_ = false;
    return mean + sigma * gauss_;
  }
  // Polar-free Box-Muller on (0,1] uniforms.
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  gauss_ = r * std::sin(a);
  have_gauss_ = true;
  return mean + sigma * r * std::cos(a);
}

}  // namespace mtse

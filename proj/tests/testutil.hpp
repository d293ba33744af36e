#pragma once

#include <cmath>
#include <random>

#include "speckle/tensor.hpp"

namespace testutil {

inline speckle::Tensor rand_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                   double lo = -1.0, double hi = 1.0) {
  speckle::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    t[i] = lo + u * (hi - lo);
  }
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const speckle::Tensor& a, const speckle::Tensor& b, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

/// Central finite differences of eval() with respect to every element of x.
/// x is restored after each probe.
template <typename Eval>
speckle::Tensor fd_gradient(speckle::Tensor& x, Eval eval, double step = 1e-5) {
  speckle::Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = eval();
    x[i] = orig - step;
    const double down = eval();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Scalar probe loss: fixed random weighting of the layer output.
inline double weighted_sum(const speckle::Tensor& out, const speckle::Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

}  // namespace testutil

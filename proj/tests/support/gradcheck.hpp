#pragma once

// Central finite-difference oracle for the autodiff tape, run in double
// precision so truncation error (not rounding) dominates the comparison.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "varlab/numerics/ops.hpp"
#include "varlab/numerics/tensor.hpp"

namespace varlab::testing {

using TensorD = BasicTensor<double>;

inline TensorD random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TensorD::parameter(std::move(shape), std::move(v));
}

// Same as random_param but bounded away from zero (for kinked activations).
inline TensorD random_param_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  std::uniform_real_distribution<double> u(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return TensorD::parameter(std::move(shape), std::move(v));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// |a - b| / max(|a|, |b|), with both-zero entries counting as exact.
inline double relative_error(double a, double b) {
  const double den = std::max(std::abs(a), std::abs(b));
  return den == 0.0 ? 0.0 : std::abs(a - b) / den;
}

// `loss` must rebuild the graph from the current parameter values each call.
inline GradCheckResult grad_check(const std::function<TensorD()>& loss, std::vector<TensorD> params,
                                  double h = 1e-5, double abs_floor = 1e-9) {
  for (auto& p : params) p.zero_grad();
  auto l = loss();
  backward(l);
  GradCheckResult res;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      double up, down;
      {
        NoGradGuard ng;
        up = loss().item();
      }
      data[i] = orig - h;
      {
        NoGradGuard ng;
        down = loss().item();
      }
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double abs_err = std::abs(numeric - analytic[i]);
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (abs_err > abs_floor) res.max_rel_error = std::max(res.max_rel_error, relative_error(numeric, analytic[i]));
      ++res.checked;
    }
  }
  return res;
}

// Fixed random weights projecting an output to a scalar, so every element
// feeds a distinct nonzero coefficient into the loss.
class Projection {
 public:
  Projection(std::size_t n, std::mt19937_64& rng) : w_(n) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto& x : w_) x = u(rng);
  }
  TensorD operator()(const TensorD& out) const {
    return ops::sum(ops::mul(out, TensorD::from_data(out.shape(), w_)));
  }

 private:
  std::vector<double> w_;
};

}  // namespace varlab::testing

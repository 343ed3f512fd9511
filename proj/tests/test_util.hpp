#pragma once

#include <functional>

#include "canas/ops.hpp"

namespace canas::testing {

/// Fixed random weights so any tensor output reduces to a scalar with a
/// non-trivial gradient.
inline Tensor weighted_sum(Tape& tape, const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = randn(out.shape(), rng);
  return sum(tape, mul(tape, out, w));
}

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||) between backward()
/// gradients of f and central differences with step h, over all params.
inline GradCheck grad_check(const std::vector<Tensor>& params, const std::function<Tensor(Tape&)>& f,
                            double h = 1e-5) {
  for (const Tensor& p : params) {
    p.set_requires_grad(true);
    p.ensure_grad();
    p.zero_grad();
  }
  {
    Tape tape;
    tape.backward(f(tape));
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (const Tensor& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p[i];
      p.values()[i] = orig + h;
      Tape t1(false);
      const double fp = f(t1).item();
      p.values()[i] = orig - h;
      Tape t2(false);
      const double fm = f(t2).item();
      p.values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  return {std::sqrt(diff) / denom, std::sqrt(na)};
}

/// Random values bounded away from zero, so kinks of relu-like functions are
/// never within the finite-difference step.
inline Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  Tensor t = randn(std::move(shape), rng);
  for (double& v : t.values())
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return t;
}

}  // namespace canas::testing

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "canas/tensor.hpp"

namespace canas {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam step on each parameter (minimization). Gradients
/// are read, never cleared.
inline void adam_step(std::span<Tensor> params, std::span<AdamState> states, const AdamHyper& h) {
  if (params.size() != states.size()) throw std::invalid_argument("adam_step: params/states length mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    if (!param.has_grad()) throw std::logic_error("adam_step: parameter " + std::to_string(p) + " has no gradient");
    AdamState& s = states[p];
    if (s.m.empty()) {
      s.m.assign(param.numel(), 0.0);
      s.v.assign(param.numel(), 0.0);
    }
    if (s.m.size() != param.numel() || s.v.size() != param.numel()) {
      throw DimensionError("adam_step: moment arrays do not match parameter " + std::to_string(p));
    }
    s.t += 1;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    auto w = param.values();
    auto g = std::as_const(param).grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g[i];
      s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      w[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

/// Owns per-parameter Adam state for a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamHyper hyper)
      : params_(std::move(params)), states_(params_.size()), hyper_(hyper) {}

  void step() { adam_step(params_, states_, hyper_); }

  void zero_grad() {
    for (Tensor& p : params_) p.ensure_grad(), p.zero_grad();
  }

  const AdamHyper& hyper() const { return hyper_; }
  std::span<const AdamState> states() const { return states_; }
  std::span<AdamState> states() { return states_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamHyper hyper_;
};

}  // namespace canas

#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "canas/tensor.hpp"

namespace canas {

/// Records differentiable primitives in execution order for reverse-mode
/// differentiation.
///
/// An op is recorded only when the tape is recording and at least one input
/// requires a gradient; its output then requires a gradient too. Execution
/// order is a topological order, so backward() walks the records in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  bool wants_grad(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) return true;
    }
    return false;
  }

  bool wants_grad(const std::vector<Tensor>& inputs) const {
    if (!recording_) return false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  /// Checks the output for non-finite values and, when gradients are needed,
  /// appends the op. Returns the output handle.
  Tensor record(std::string_view name, Tensor out, bool needs_grad, BackwardFn backward) {
    check_finite(name, out.values());
    if (needs_grad) {
      out.set_requires_grad(true);
      ops_.push_back(Op{std::string(name), out, std::move(backward)});
    }
    return out;
  }

  /// Populates gradients of every leaf reachable from a scalar root.
  /// Returns the number of recorded ops whose backward rule ran.
  std::size_t backward(const Tensor& root) {
    if (root.numel() != 1) {
      throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));
    }
    std::size_t root_index = ops_.size();
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (ops_[i].out.shares_storage(root)) root_index = i;
    }
    if (root_index == ops_.size()) {
      throw std::invalid_argument("backward: root was not produced on this tape");
    }
    // intermediate gradients restart from zero so repeated calls do not compound
    for (Op& op : ops_) op.out.clear_grad();
    Tensor r = ops_[root_index].out;
    r.ensure_grad()[0] = 1.0;

    std::size_t visits = 0;
    for (std::size_t i = root_index + 1; i-- > 0;) {
      Op& op = ops_[i];
      if (!op.out.has_grad()) continue;
      op.backward(std::as_const(op.out).grad());
      ++visits;
    }
    last_visits_ = visits;
    return visits;
  }

  std::size_t last_backward_visits() const { return last_visits_; }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(ops_.size());
    for (const Op& op : ops_) names.push_back(op.name);
    return names;
  }

 private:
  struct Op {
    std::string name;
    Tensor out;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Op> ops_;
  std::size_t last_visits_ = 0;
};

/// Disables gradient tracking on a set of parameters for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Tensor> params) : params_(std::move(params)) {
    for (Tensor& p : params_) {
      was_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(was_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> was_;
};

}  // namespace canas

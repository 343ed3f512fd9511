#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace canas {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Thrown when tensor ranks or extents do not agree with an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN or infinity appears in an operation's output.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline void check_finite(std::string_view what, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value");
    }
  }
}

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a handle: copies alias the same storage, which is how a single
/// convolution kernel is shared between operators. Use clone() for a deep copy.
/// Constness is shallow, as with shared_ptr: a const handle can still write
/// values and gradients.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : d_(std::make_shared<detail::TensorData>()) {
    validate_shape(shape);
    d_->values.assign(shape_numel(shape), fill);
    d_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values)
      : d_(std::make_shared<detail::TensorData>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    check_finite("tensor", values);
    d_->shape = std::move(shape);
    d_->values = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t numel() const { return d_->values.size(); }

  std::span<double> values() const { return d_->values; }
  double operator[](std::size_t i) const { return d_->values[i]; }

  double item() const {
    if (numel() != 1) throw DimensionError("item: tensor is not a scalar " + shape_str(shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  const Tensor& set_requires_grad(bool on) const {
    d_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<double> grad() const { return d_->grad; }

  /// Allocates a zero gradient buffer if none exists.
  std::span<double> ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
  }
  void zero_grad() const {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }
  void clear_grad() const { d_->grad.clear(); }

  /// Deep copy of shape, values and the requires_grad flag; the gradient is not copied.
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  bool shares_storage(const Tensor& other) const { return d_ == other.d_; }
  const void* id() const { return d_.get(); }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor: empty shape");
    for (std::size_t s : shape) {
      if (s == 0) throw DimensionError("tensor: zero extent in " + shape_str(shape));
    }
  }

  std::shared_ptr<detail::TensorData> d_;
};

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor make_parameter(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Derives an independent generator stream from a base seed and a purpose tag.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace canas

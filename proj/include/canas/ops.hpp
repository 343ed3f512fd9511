#pragma once

#include <Eigen/Core>

#include "canas/tape.hpp"

// Differentiable primitives. Every function takes the tape first, returns a
// fresh output tensor, and accumulates into input gradients on backward.
// Loops run over samples in index order and accumulate in that order, so
// results are bitwise reproducible for a fixed build.

namespace canas {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline void accumulate(const Tensor& t, std::span<const double> g, double scale = 1.0) {
  if (!t.requires_grad()) return;
  auto dst = t.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
}

template <class F>
Tensor unary(Tape& tape, std::string_view name, const Tensor& x, F&& fwd,
             std::function<double(double x, double y)> dydx) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  const bool ng = tape.wants_grad({&x});
  return tape.record(name, out, ng, [x, out, dydx](std::span<const double> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.ensure_grad();
    auto xv = std::as_const(x).values();
    auto yv = std::as_const(out).values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  return tape.record("add", out, tape.wants_grad({&a, &b}),
                     [a, b](std::span<const double> g) mutable {
                       detail::accumulate(a, g);
                       detail::accumulate(b, g);
                     });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  return tape.record("sub", out, tape.wants_grad({&a, &b}),
                     [a, b](std::span<const double> g) mutable {
                       detail::accumulate(a, g);
                       detail::accumulate(b, g, -1.0);
                     });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  return tape.record("mul", out, tape.wants_grad({&a, &b}),
                     [a, b](std::span<const double> g) mutable {
                       if (a.requires_grad()) {
                         auto ga = a.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = b.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                       }
                     });
}

inline Tensor scale(Tape& tape, const Tensor& x, double s) {
  return detail::unary(
      tape, "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(Tape& tape, const Tensor& x, double s) {
  return detail::unary(
      tape, "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::unary(
      tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(Tape& tape, const Tensor& x, double slope = 0.2) {
  return detail::unary(
      tape, "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
  return detail::unary(
      tape, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return tape.record("sum", Tensor::scalar(s), tape.wants_grad({&x}),
                     [x](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       for (double& v : x.ensure_grad()) v += g[0];
                     });
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.numel());
  return tape.record("mean", Tensor::scalar(s / n), tape.wants_grad({&x}),
                     [x, n](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       for (double& v : x.ensure_grad()) v += g[0] / n;
                     });
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  return tape.record("reshape", out, tape.wants_grad({&x}),
                     [x](std::span<const double> g) mutable { detail::accumulate(x, g); });
}

/// Concatenates tensors of rank >= 2 along axis 1 (channels).
inline Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() < 2) throw DimensionError("concat_channels: rank < 2");
  const std::size_t b = first.dim(0);
  const std::size_t inner = first.numel() / (b * first.dim(1));
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank() || p.dim(0) != b || p.numel() / (b * p.dim(1)) != inner) {
      throw DimensionError("concat_channels: incompatible part " + shape_str(p.shape()));
    }
    for (std::size_t d = 2; d < p.rank(); ++d) {
      if (p.dim(d) != first.dim(d)) throw DimensionError("concat_channels: trailing extent mismatch");
    }
    channels += p.dim(1);
  }
  Shape shape = first.shape();
  shape[1] = channels;
  Tensor out(shape);
  auto o = out.values();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t block = p.dim(1) * inner;
    for (std::size_t i = 0; i < b; ++i) {
      auto src = p.values().subspan(i * block, block);
      std::copy(src.begin(), src.end(), o.begin() + i * channels * inner + offset);
    }
    offset += block;
  }
  return tape.record("concat_channels", out, tape.wants_grad(parts),
                     [parts, b, inner, channels](std::span<const double> g) mutable {
                       std::size_t off = 0;
                       for (const Tensor& p : parts) {
                         const std::size_t block = p.dim(1) * inner;
                         if (p.requires_grad()) {
                           auto gp = p.ensure_grad();
                           for (std::size_t i = 0; i < b; ++i) {
                             for (std::size_t k = 0; k < block; ++k) {
                               gp[i * block + k] += g[i * channels * inner + off + k];
                             }
                           }
                         }
                         off += block;
                       }
                     });
}

/// Concatenates along axis 0 (batch).
inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat_rows: incompatible part " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor out(shape);
  auto o = out.values();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), o.begin() + offset);
    offset += p.numel();
  }
  return tape.record("concat_rows", out, tape.wants_grad(parts),
                     [parts](std::span<const double> g) mutable {
                       std::size_t off = 0;
                       for (const Tensor& p : parts) {
                         detail::accumulate(p, g.subspan(off, p.numel()));
                         off += p.numel();
                       }
                     });
}

/// Rows [begin, end) along axis 0.
inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(0)) throw DimensionError("slice_rows: bad range");
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto src = x.values().subspan(begin * row, (end - begin) * row);
  Tensor out(shape, std::vector<double>(src.begin(), src.end()));
  return tape.record("slice_rows", out, tape.wants_grad({&x}),
                     [x, begin, row](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto gx = x.ensure_grad();
                       for (std::size_t k = 0; k < g.size(); ++k) gx[begin * row + k] += g[k];
                     });
}

/// Gathers rows of x along axis 0.
inline Tensor take_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("take_rows: empty index");
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = index.size();
  Tensor out(shape);
  auto o = out.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.dim(0)) throw DimensionError("take_rows: index out of range");
    auto src = x.values().subspan(index[r] * row, row);
    std::copy(src.begin(), src.end(), o.begin() + r * row);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record("take_rows", out, tape.wants_grad({&x}),
                     [x, idx, row](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto gx = x.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t k = 0; k < row; ++k) gx[idx[r] * row + k] += g[r * row + k];
                       }
                     });
}

/// Places the rows of x at positions `index` of a zero tensor with `rows` rows.
inline Tensor put_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index, std::size_t rows) {
  if (index.size() != x.dim(0)) throw DimensionError("put_rows: index length != rows of x");
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows;
  Tensor out(shape);
  auto o = out.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw DimensionError("put_rows: index out of range");
    auto src = x.values().subspan(r * row, row);
    std::copy(src.begin(), src.end(), o.begin() + index[r] * row);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record("put_rows", out, tape.wants_grad({&x}),
                     [x, idx, row](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto gx = x.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t k = 0; k < row; ++k) gx[r * row + k] += g[idx[r] * row + k];
                       }
                     });
}

/// Repeats every row `repeats` consecutive times along axis 0.
inline Tensor repeat_interleave(Tape& tape, const Tensor& x, std::size_t repeats) {
  if (repeats == 0) throw DimensionError("repeat_interleave: zero repeats");
  std::vector<std::size_t> idx;
  idx.reserve(x.dim(0) * repeats);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t r = 0; r < repeats; ++r) idx.push_back(i);
  }
  return take_rows(tape, x, idx);
}

/// Sums each channel over its spatial extent: [b,c,h,w] -> [b,c].
inline Tensor sum_pool(Tape& tape, const Tensor& x) {
  detail::require_rank("sum_pool", x, 4);
  const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1)});
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < bc; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += xv[i * hw + k];
    o[i] = s;
  }
  return tape.record("sum_pool", out, tape.wants_grad({&x}),
                     [x, bc, hw](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto gx = x.ensure_grad();
                       for (std::size_t i = 0; i < bc; ++i) {
                         for (std::size_t k = 0; k < hw; ++k) gx[i * hw + k] += g[i];
                       }
                     });
}

/// Selects rows of an embedding table: table [M,d], ids -> [b,d].
inline Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank("embedding", table, 2);
  for (std::size_t id : ids) {
    if (id >= table.dim(0)) {
      throw std::out_of_range("embedding: class id " + std::to_string(id) + " out of range [0," +
                              std::to_string(table.dim(0)) + ")");
    }
  }
  Tensor out = take_rows(tape, table, ids);
  return out;
}

/// out = x W^T + bias; x [b,d_in], W [d_out,d_in], bias [d_out].
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank("linear", x, 2);
  detail::require_rank("linear", weight, 2);
  detail::require_rank("linear", bias, 1);
  const std::size_t b = x.dim(0), din = x.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din || bias.dim(0) != dout) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  Tensor out(Shape{b, dout});
  {
    detail::ConstMatMap X(x.values().data(), b, din), W(weight.values().data(), dout, din);
    detail::MatMap O(out.values().data(), b, dout);
    O.noalias() = X * W.transpose();
    auto bv = bias.values();
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < dout; ++j) O(i, j) += bv[j];
    }
  }
  return tape.record("linear", out, tape.wants_grad({&x, &weight, &bias}),
                     [x, weight, bias, b, din, dout](std::span<const double> g) mutable {
                       detail::ConstMatMap G(g.data(), b, dout);
                       if (x.requires_grad()) {
                         detail::MatMap GX(x.ensure_grad().data(), b, din);
                         GX.noalias() += G * detail::ConstMatMap(weight.values().data(), dout, din);
                       }
                       if (weight.requires_grad()) {
                         detail::MatMap GW(weight.ensure_grad().data(), dout, din);
                         GW.noalias() += G.transpose() * detail::ConstMatMap(x.values().data(), b, din);
                       }
                       if (bias.requires_grad()) {
                         auto gb = bias.ensure_grad();
                         for (std::size_t i = 0; i < b; ++i) {
                           for (std::size_t j = 0; j < dout; ++j) gb[j] += G(i, j);
                         }
                       }
                     });
}

struct Conv2dParams {
  std::size_t padding = 0;
  std::size_t stride = 1;
};

namespace detail {

struct ConvGeometry {
  std::size_t b, cin, h, w, cout, kh, kw, pad, stride, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, Conv2dParams p) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", k, 4);
  if (k.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(k.shape()));
  }
  if (p.stride == 0) throw DimensionError("conv2d: zero stride");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), p.padding, p.stride, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.pad == 0 && g.stride == 1;
}

// cols is [cin*kh*kw, oh*ow]
inline void im2col(const ConvGeometry& g, const double* x, double* cols) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w);
            row[oi * g.ow + oj] = inside ? x[(c * g.h + ii) * g.w + jj] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            x[(c * g.h + ii) * g.w + jj] += row[oi * g.ow + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of x [b,c_in,h,w] with kernel [c_out,c_in,kh,kw].
///
/// Lowered per sample to an im2col matrix and one GEMM; samples are processed
/// in index order and the kernel gradient accumulates in that same order.
inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel, Conv2dParams params = {}) {
  const detail::ConvGeometry g = detail::conv_geometry(x, kernel, params);
  Tensor out(Shape{g.b, g.cout, g.oh, g.ow});
  const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * g.pixels();
  std::vector<double> cols(detail::is_pointwise(g) ? 0 : g.patch() * g.pixels());
  detail::ConstMatMap K(kernel.values().data(), g.cout, g.patch());
  for (std::size_t i = 0; i < g.b; ++i) {
    const double* xi = x.values().data() + i * in_stride;
    const double* src = xi;
    if (!cols.empty()) {
      detail::im2col(g, xi, cols.data());
      src = cols.data();
    }
    detail::MatMap O(out.values().data() + i * out_stride, g.cout, g.pixels());
    O.noalias() = K * detail::ConstMatMap(src, g.patch(), g.pixels());
  }
  return tape.record("conv2d", out, tape.wants_grad({&x, &kernel}),
                     [x, kernel, g](std::span<const double> grad) mutable {
                       const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * g.pixels();
                       const bool pointwise = detail::is_pointwise(g);
                       std::vector<double> cols(pointwise ? 0 : g.patch() * g.pixels());
                       std::vector<double> dcols(g.patch() * g.pixels());
                       detail::ConstMatMap K(kernel.values().data(), g.cout, g.patch());
                       double* gk = kernel.requires_grad() ? kernel.ensure_grad().data() : nullptr;
                       double* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
                       for (std::size_t i = 0; i < g.b; ++i) {
                         detail::ConstMatMap G(grad.data() + i * out_stride, g.cout, g.pixels());
                         const double* xi = x.values().data() + i * in_stride;
                         if (gk) {
                           const double* src = xi;
                           if (!pointwise) {
                             detail::im2col(g, xi, cols.data());
                             src = cols.data();
                           }
                           detail::MatMap GK(gk, g.cout, g.patch());
                           GK.noalias() += G * detail::ConstMatMap(src, g.patch(), g.pixels()).transpose();
                         }
                         if (gx) {
                           if (pointwise) {
                             detail::MatMap GX(gx + i * in_stride, g.patch(), g.pixels());
                             GX.noalias() += K.transpose() * G;
                           } else {
                             detail::MatMap D(dcols.data(), g.patch(), g.pixels());
                             D.noalias() = K.transpose() * G;
                             detail::col2im_add(g, dcols.data(), gx + i * in_stride);
                           }
                         }
                       }
                     });
}

/// Replicates each pixel into a 2x2 block: [b,c,h,w] -> [b,c,2h,2w].
inline Tensor upsample_nearest2x(Tape& tape, const Tensor& x) {
  detail::require_rank("upsample_nearest2x", x, 4);
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t p = 0; p < bc; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        o[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
      }
    }
  }
  return tape.record("upsample_nearest2x", out, tape.wants_grad({&x}),
                     [x, bc, h, w](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto gx = x.ensure_grad();
                       for (std::size_t p = 0; p < bc; ++p) {
                         for (std::size_t i = 0; i < 2 * h; ++i) {
                           for (std::size_t j = 0; j < 2 * w; ++j) {
                             gx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
                           }
                         }
                       }
                     });
}

/// Adds bias[c] to every element of channel c of x [b,c,...].
inline Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: x " + shape_str(x.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1), inner = x.numel() / (b * c);
  Tensor out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t at = (i * c + ch) * inner + k;
        o[at] = xv[at] + bv[ch];
      }
    }
  }
  return tape.record("add_channel_bias", out, tape.wants_grad({&x, &bias}),
                     [x, bias, b, c, inner](std::span<const double> g) mutable {
                       detail::accumulate(x, g);
                       if (!bias.requires_grad()) return;
                       auto gb = bias.ensure_grad();
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           for (std::size_t k = 0; k < inner; ++k) gb[ch] += g[(i * c + ch) * inner + k];
                         }
                       }
                     });
}

/// Row-wise inner product: a, c [b,d] -> [b].
inline Tensor rowwise_dot(Tape& tape, const Tensor& a, const Tensor& c) {
  detail::require_rank("rowwise_dot", a, 2);
  detail::require_same_shape("rowwise_dot", a, c);
  const std::size_t b = a.dim(0), d = a.dim(1);
  Tensor out(Shape{b});
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[i * d + k] * c[i * d + k];
    out.values()[i] = s;
  }
  return tape.record("rowwise_dot", out, tape.wants_grad({&a, &c}),
                     [a, c, b, d](std::span<const double> g) mutable {
                       if (a.requires_grad()) {
                         auto ga = a.ensure_grad();
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += g[i] * c[i * d + k];
                       }
                       if (c.requires_grad()) {
                         auto gc = c.ensure_grad();
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t k = 0; k < d; ++k) gc[i * d + k] += g[i] * a[i * d + k];
                       }
                     });
}

/// Per-row selection among same-shaped candidates: out[i] = sum_o P[i,o] * parts[o][i],
/// where P is a row-major [b, parts.size()] matrix.
inline Tensor indicator_combine(Tape& tape, const std::vector<Tensor>& parts, std::span<const double> indicator) {
  if (parts.empty()) throw DimensionError("indicator_combine: no candidates");
  const Tensor& first = parts.front();
  const std::size_t b = first.dim(0), row = first.numel() / b, k = parts.size();
  for (const Tensor& p : parts) detail::require_same_shape("indicator_combine", first, p);
  if (indicator.size() != b * k) throw DimensionError("indicator_combine: indicator is not b x |O|");
  Tensor out(first.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t op = 0; op < k; ++op) {
      const double w = indicator[i * k + op];
      auto src = parts[op].values();
      for (std::size_t e = 0; e < row; ++e) o[i * row + e] += w * src[i * row + e];
    }
  }
  std::vector<double> ind(indicator.begin(), indicator.end());
  return tape.record("indicator_combine", out, tape.wants_grad(parts),
                     [parts, ind, b, row, k](std::span<const double> g) mutable {
                       for (std::size_t op = 0; op < k; ++op) {
                         const Tensor& p = parts[op];
                         if (!p.requires_grad()) continue;
                         auto gp = p.ensure_grad();
                         for (std::size_t i = 0; i < b; ++i) {
                           const double w = ind[i * k + op];
                           if (w == 0.0) continue;
                           for (std::size_t e = 0; e < row; ++e) gp[i * row + e] += w * g[i * row + e];
                         }
                       }
                     });
}

/// Mean softmax cross-entropy of logits [b,M] against integer labels.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t b = logits.dim(0), m = logits.dim(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: label count mismatch");
  std::vector<double> prob(b * m);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= m) throw std::out_of_range("cross_entropy: label out of range");
    auto row = logits.values().subspan(i * m, m);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < m; ++j) prob[i * m + j] = std::exp(row[j] - mx) / z;
    loss -= row[labels[i]] - mx - std::log(z);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return tape.record("cross_entropy", Tensor::scalar(loss / static_cast<double>(b)), tape.wants_grad({&logits}),
                     [logits, prob, lab, b, m](std::span<const double> g) mutable {
                       if (!logits.requires_grad()) return;
                       auto gl = logits.ensure_grad();
                       const double s = g[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           gl[i * m + j] += s * (prob[i * m + j] - (j == lab[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

inline Tensor zeros_like(const Tensor& x) { return Tensor(x.shape()); }

}  // namespace canas

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "canas/ops.hpp"

namespace canas {

enum class OperatorKind { RConv3x3, CMConv3x3, Zero, Skip };

inline constexpr std::array<OperatorKind, 4> kAllOperators{OperatorKind::RConv3x3, OperatorKind::CMConv3x3,
                                                           OperatorKind::Zero, OperatorKind::Skip};

inline std::string_view operator_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::RConv3x3: return "rconv_3x3";
    case OperatorKind::CMConv3x3: return "cmconv_3x3";
    case OperatorKind::Zero: return "zero";
    case OperatorKind::Skip: return "skip";
  }
  return "?";
}

inline OperatorKind parse_operator(std::string_view name) {
  for (OperatorKind k : kAllOperators) {
    if (operator_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown operator '" + std::string(name) + "'");
}

inline bool is_conv(OperatorKind k) { return k == OperatorKind::RConv3x3 || k == OperatorKind::CMConv3x3; }

inline constexpr double kDemodEps = 1e-8;
inline constexpr std::size_t kKernelSize = 3;

/// Learnable per-class embedding vectors e_y, table [M, d_e].
struct ClassEmbeddingTable {
  Tensor table;

  static ClassEmbeddingTable make(std::size_t classes, std::size_t dim, Rng& rng) {
    return {make_parameter(randn({classes, dim}, rng))};
  }
  std::size_t classes() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }
};

/// Affine map from a class embedding to per-input-channel scales.
struct StyleAffine {
  Tensor weight;  // [c_in, d_e]
  Tensor bias;    // [c_in]

  /// Bias starts at one and the weight near zero, so scales start close to 1.
  static StyleAffine make(std::size_t c_in, std::size_t embed_dim, Rng& rng) {
    const double stddev = 0.1 / std::sqrt(static_cast<double>(embed_dim));
    return {make_parameter(randn({c_in, embed_dim}, rng, stddev)), make_parameter(Tensor({c_in}, 1.0))};
  }
  std::size_t channels() const { return weight.dim(0); }
};

/// One convolution weight per searched edge, read by both RConv and CMConv.
struct SharedConvKernel {
  Tensor weight;  // [c_out, c_in, kh, kw]

  static SharedConvKernel make(std::size_t c_out, std::size_t c_in, Rng& rng) {
    const double fan_in = static_cast<double>(c_in * kKernelSize * kKernelSize);
    return {make_parameter(randn({c_out, c_in, kKernelSize, kKernelSize}, rng, std::sqrt(2.0 / fan_in)))};
  }
  std::size_t c_out() const { return weight.dim(0); }
  std::size_t c_in() const { return weight.dim(1); }
};

/// Scalar linear head psi of a discriminator: weight [1, d_f], bias [1].
struct ProjectionHead {
  Tensor weight;
  Tensor bias;

  static ProjectionHead make(std::size_t features, Rng& rng) {
    return {make_parameter(randn({1, features}, rng, 1.0 / std::sqrt(static_cast<double>(features)))),
            make_parameter(Tensor({1}, 0.0))};
  }
};

/// s_in = Aff(e_y) for a single class; returns [c_in].
inline Tensor style_vector(Tape& tape, const ClassEmbeddingTable& emb, const StyleAffine& aff, std::size_t y) {
  if (y >= emb.classes()) {
    throw std::out_of_range("style_vector: class " + std::to_string(y) + " out of range");
  }
  if (aff.weight.dim(1) != emb.dim()) throw DimensionError("style_vector: embedding dimension mismatch");
  const std::array<std::size_t, 1> ids{y};
  Tensor e = embedding(tape, emb.table, ids);
  Tensor s = linear(tape, e, aff.weight, aff.bias);
  return reshape(tape, s, {aff.channels()});
}

/// Scales every kernel slice of input channel i by s[i].
inline Tensor modulate(Tape& tape, const Tensor& weight, const Tensor& s) {
  detail::require_rank("modulate", weight, 4);
  if (s.numel() != weight.dim(1)) {
    throw DimensionError("modulate: style length " + std::to_string(s.numel()) + " != c_in " +
                         std::to_string(weight.dim(1)));
  }
  const std::size_t co = weight.dim(0), ci = weight.dim(1), u = weight.dim(2) * weight.dim(3);
  Tensor out(weight.shape());
  auto o = out.values();
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t k = 0; k < u; ++k) {
        const std::size_t at = (a * ci + i) * u + k;
        o[at] = weight[at] * s[i];
      }
  return tape.record("modulate", out, tape.wants_grad({&weight, &s}),
                     [weight, s, co, ci, u](std::span<const double> g) mutable {
                       double* gw = weight.requires_grad() ? weight.ensure_grad().data() : nullptr;
                       double* gs = s.requires_grad() ? s.ensure_grad().data() : nullptr;
                       for (std::size_t a = 0; a < co; ++a)
                         for (std::size_t i = 0; i < ci; ++i)
                           for (std::size_t k = 0; k < u; ++k) {
                             const std::size_t at = (a * ci + i) * u + k;
                             if (gw) gw[at] += g[at] * s[i];
                             if (gs) gs[i] += g[at] * weight[at];
                           }
                     });
}

/// Normalizes each output-channel slice: w'' = w' / sqrt(sum(w'^2) + eps).
inline Tensor demodulate(Tape& tape, const Tensor& weight, double eps = kDemodEps) {
  detail::require_rank("demodulate", weight, 4);
  if (!(eps > 0.0)) throw std::invalid_argument("demodulate: eps must be positive");
  const std::size_t co = weight.dim(0), slice = weight.numel() / co;
  std::vector<double> norm(co);
  Tensor out(weight.shape());
  auto o = out.values();
  for (std::size_t a = 0; a < co; ++a) {
    double s = 0.0;
    for (std::size_t k = 0; k < slice; ++k) s += weight[a * slice + k] * weight[a * slice + k];
    norm[a] = std::sqrt(s + eps);
    for (std::size_t k = 0; k < slice; ++k) o[a * slice + k] = weight[a * slice + k] / norm[a];
  }
  return tape.record("demodulate", out, tape.wants_grad({&weight}),
                     [weight, norm, co, slice](std::span<const double> g) mutable {
                       if (!weight.requires_grad()) return;
                       auto gw = weight.ensure_grad();
                       for (std::size_t a = 0; a < co; ++a) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < slice; ++k) dot += g[a * slice + k] * weight[a * slice + k];
                         const double n = norm[a], n3 = n * n * n;
                         for (std::size_t k = 0; k < slice; ++k) {
                           gw[a * slice + k] += g[a * slice + k] / n - weight[a * slice + k] * dot / n3;
                         }
                       }
                     });
}

inline Conv2dParams same_padding(const Tensor& kernel) {
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw DimensionError("same padding needs an odd kernel, got " + shape_str(kernel.shape()));
  }
  return {kernel.dim(2) / 2, 1};
}

/// Class-modulated convolution for a batch whose samples all carry class y.
inline Tensor cmconv_forward(Tape& tape, const Tensor& x, std::size_t y, const SharedConvKernel& kernel,
                             const StyleAffine& aff, const ClassEmbeddingTable& emb, double eps = kDemodEps) {
  if (aff.channels() != kernel.c_in()) throw DimensionError("cmconv: style width != kernel c_in");
  Tensor s = style_vector(tape, emb, aff, y);
  Tensor w = demodulate(tape, modulate(tape, kernel.weight, s), eps);
  return conv2d(tape, x, w, same_padding(kernel.weight));
}

/// Regular convolution on the shared kernel.
inline Tensor rconv_forward(Tape& tape, const Tensor& x, const SharedConvKernel& kernel) {
  return conv2d(tape, x, kernel.weight, same_padding(kernel.weight));
}

inline Tensor zero_forward(const Tensor& x) { return zeros_like(x); }
inline Tensor skip_forward(const Tensor& x) { return x; }

/// score_i = psi(f_i) + <emb[y_i], f_i>; the projection term is omitted when emb is null.
inline Tensor cproj_score(Tape& tape, const Tensor& features, std::span<const std::size_t> ids,
                          const ProjectionHead& head, const ClassEmbeddingTable* emb) {
  detail::require_rank("cproj_score", features, 2);
  const std::size_t b = features.dim(0);
  Tensor score = reshape(tape, linear(tape, features, head.weight, head.bias), {b});
  if (emb == nullptr) return score;
  if (emb->dim() != features.dim(1)) {
    throw DimensionError("cproj_score: embedding dim " + std::to_string(emb->dim()) + " != feature dim " +
                         std::to_string(features.dim(1)));
  }
  if (ids.size() != b) throw DimensionError("cproj_score: label count != batch");
  return add(tape, score, rowwise_dot(tape, embedding(tape, emb->table, ids), features));
}

struct FlopCount {
  std::uint64_t conv = 0;
  std::uint64_t modulation = 0;
  std::uint64_t total() const { return conv + modulation; }
  FlopCount& operator+=(const FlopCount& o) {
    conv += o.conv;
    modulation += o.modulation;
    return *this;
  }
};

/// Multiply-add count (x2) of one operator application on an h x w map.
/// CMConv additionally pays for the style affine and the kernel rescaling.
inline FlopCount op_flops(OperatorKind kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w,
                          std::size_t kh = kKernelSize, std::size_t kw = kKernelSize, std::size_t embed_dim = 0) {
  FlopCount f;
  if (!is_conv(kind)) return f;
  f.conv = 2ull * c_in * c_out * kh * kw * h * w;
  if (kind == OperatorKind::CMConv3x3) f.modulation = 1ull * c_in * c_out * kh * kw + 1ull * c_in * embed_dim;
  return f;
}

}  // namespace canas

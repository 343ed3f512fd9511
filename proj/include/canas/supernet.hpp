#pragma once

#include <map>
#include <set>

#include "canas/search_space.hpp"

namespace canas {

/// Weight-sharing generator over the whole search space.
///
/// Layout: stem linear d_z -> C*h0*h0, then L stages of (nearest 2x upsample,
/// cell), then a 3x3 convolution to RGB and tanh. A cell shrinks channels by
/// N with a 1x1 convolution (node 0), computes intermediate nodes
/// x_j = relu(sum_{i<j} o_ij(x_i)) and concatenates x_1..x_N, so every cell
/// preserves channel count and resolution.
class SuperNetwork {
 public:
  struct CellResult {
    std::vector<Tensor> nodes;  // x_0 .. x_N
    Tensor output;
  };

  SuperNetwork(SearchSpaceSpec space, Rng& rng, double demod_eps = kDemodEps)
      : space_(std::move(space)), eps_(demod_eps) {
    space_.validate();
    const std::size_t c = space_.base_channels, cn = space_.node_channels(), h0 = space_.base_resolution;
    const double dz = static_cast<double>(space_.latent_dim);
    stem_weight_ = make_parameter(randn({c * h0 * h0, space_.latent_dim}, rng, 1.0 / std::sqrt(dz)));
    stem_bias_ = make_parameter(Tensor({c * h0 * h0}, 0.0));
    for (std::size_t l = 0; l < space_.cells; ++l) {
      shrink_.push_back(make_parameter(randn({cn, c, 1, 1}, rng, std::sqrt(2.0 / static_cast<double>(c)))));
    }
    for (std::size_t e = 0; e < space_.edge_count(); ++e) {
      kernels_.push_back(SharedConvKernel::make(cn, cn, rng));
      styles_.push_back(StyleAffine::make(cn, space_.embed_dim, rng));
    }
    embedding_ = ClassEmbeddingTable::make(space_.classes, space_.embed_dim, rng);
    rgb_weight_ = make_parameter(randn({3, c, 3, 3}, rng, std::sqrt(1.0 / static_cast<double>(9 * c))));
    rgb_bias_ = make_parameter(Tensor({3}, 0.0));
    edges_ = enumerate_edges(space_);
  }

  const SearchSpaceSpec& space() const { return space_; }
  double demod_eps() const { return eps_; }
  const std::vector<Edge>& edges() const { return edges_; }

  SharedConvKernel& kernel(std::size_t edge) { return kernels_.at(edge); }
  const SharedConvKernel& kernel(std::size_t edge) const { return kernels_.at(edge); }
  StyleAffine& style(std::size_t edge) { return styles_.at(edge); }
  const StyleAffine& style(std::size_t edge) const { return styles_.at(edge); }
  ClassEmbeddingTable& class_embedding() { return embedding_; }
  const ClassEmbeddingTable& class_embedding() const { return embedding_; }
  Tensor& shrink(std::size_t cell) { return shrink_.at(cell); }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> p{{"stem.weight", stem_weight_}, {"stem.bias", stem_bias_}};
    for (std::size_t l = 0; l < shrink_.size(); ++l) p.emplace_back("cell" + std::to_string(l) + ".shrink", shrink_[l]);
    for (std::size_t e = 0; e < kernels_.size(); ++e) {
      const std::string base = "edge" + std::to_string(e);
      p.emplace_back(base + ".kernel", kernels_[e].weight);
      p.emplace_back(base + ".style.weight", styles_[e].weight);
      p.emplace_back(base + ".style.bias", styles_[e].bias);
    }
    p.emplace_back("class_embedding", embedding_.table);
    p.emplace_back("to_rgb.weight", rgb_weight_);
    p.emplace_back("to_rgb.bias", rgb_bias_);
    return p;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  /// Deep copy; the copy shares no storage with this network.
  SuperNetwork clone() const {
    SuperNetwork c = *this;
    c.stem_weight_ = stem_weight_.clone();
    c.stem_bias_ = stem_bias_.clone();
    for (auto& t : c.shrink_) t = t.clone();
    for (auto& k : c.kernels_) k.weight = k.weight.clone();
    for (auto& s : c.styles_) {
      s.weight = s.weight.clone();
      s.bias = s.bias.clone();
    }
    c.embedding_.table = c.embedding_.table.clone();
    c.rgb_weight_ = rgb_weight_.clone();
    c.rgb_bias_ = rgb_bias_.clone();
    return c;
  }

  /// Applies one candidate operator of an edge to a batch with per-sample labels.
  Tensor apply_operator(Tape& tape, OperatorKind kind, std::size_t edge, const Tensor& x,
                        std::span<const std::size_t> labels) const {
    switch (kind) {
      case OperatorKind::Zero: return zero_forward(x);
      case OperatorKind::Skip: return skip_forward(x);
      case OperatorKind::RConv3x3: return rconv_forward(tape, x, kernels_[edge]);
      case OperatorKind::CMConv3x3: break;
    }
    const std::set<std::size_t> present(labels.begin(), labels.end());
    if (present.size() == 1) {
      return cmconv_forward(tape, x, *present.begin(), kernels_[edge], styles_[edge], embedding_, eps_);
    }
    // mixed labels: run each class on its own rows and scatter back
    Tensor acc;
    for (std::size_t y : present) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == y) rows.push_back(i);
      Tensor part = cmconv_forward(tape, take_rows(tape, x, rows), y, kernels_[edge], styles_[edge], embedding_, eps_);
      Tensor placed = put_rows(tape, part, rows, x.dim(0));
      acc = acc.defined() ? add(tape, acc, placed) : placed;
    }
    return acc;
  }

  /// Runs cell `cell` on x. `rows` holds one architecture row shared by the
  /// whole batch (uniform) or one row per sample (mixed).
  CellResult node_forward(Tape& tape, std::size_t cell, const Tensor& x, std::span<const ArchRow> rows,
                          std::span<const std::size_t> labels, bool mixed) const {
    if (cell >= space_.cells) throw std::out_of_range("node_forward: cell index");
    if (x.rank() != 4 || x.dim(1) != space_.base_channels) {
      throw DimensionError("node_forward: cell input " + shape_str(x.shape()));
    }
    const std::size_t b = x.dim(0), epc = space_.edges_per_cell(), first = cell * epc;
    if (rows.size() != (mixed ? b : 1)) throw DimensionError("node_forward: architecture row count");
    for (const ArchRow& r : rows) validate_row(r, space_.edge_count(), space_.op_count());
    if (labels.size() != b) throw DimensionError("node_forward: label count != batch");

    CellResult res;
    res.nodes.push_back(relu(tape, conv2d(tape, x, shrink_[cell])));
    std::vector<OpIndex> choice(b);
    for (std::size_t j = 1; j <= space_.nodes; ++j) {
      Tensor acc;
      for (std::size_t e = first; e < first + epc; ++e) {
        if (edges_[e].to != j) continue;
        const Tensor& in = res.nodes[edges_[e].from];
        Tensor out;
        if (!mixed) {
          out = apply_operator(tape, space_.operators[rows[0][e]], e, in, labels);
        } else {
          std::vector<Tensor> cands;
          for (OperatorKind k : space_.operators) cands.push_back(apply_operator(tape, k, e, in, labels));
          for (std::size_t i = 0; i < b; ++i) choice[i] = rows[i][e];
          const IndicatorMatrix p = IndicatorMatrix::from_choices(choice, space_.op_count());
          out = indicator_combine(tape, cands, p.data());
        }
        acc = acc.defined() ? add(tape, acc, out) : out;
      }
      res.nodes.push_back(relu(tape, acc));
    }
    res.output = concat_channels(tape, std::vector<Tensor>(res.nodes.begin() + 1, res.nodes.end()));
    return res;
  }

  /// Generates a batch that shares class y and architecture arch.
  Tensor generator_forward(Tape& tape, const Tensor& z, std::size_t y, const ArchCode& arch) const {
    if (y >= space_.classes) throw std::out_of_range("generator_forward: class id out of range");
    validate_row(arch.ops, space_.edge_count(), space_.op_count());
    check_latent(z);
    const std::vector<std::size_t> labels(z.dim(0), y);
    return run(tape, z, labels, std::span<const ArchRow>(&arch.ops, 1), false);
  }

  /// Generates a batch where sample i uses class labels[i] and architecture
  /// rows[i]; every operator runs on the full batch and a one-hot indicator
  /// picks each sample's output.
  Tensor mixed_forward(Tape& tape, const Tensor& z, std::span<const std::size_t> labels,
                       std::span<const ArchRow> rows) const {
    check_latent(z);
    if (labels.size() != z.dim(0) || rows.size() != z.dim(0)) {
      throw DimensionError("mixed_forward: labels/rows must match batch size");
    }
    for (std::size_t y : labels)
      if (y >= space_.classes) throw std::out_of_range("mixed_forward: class id out of range");
    return run(tape, z, labels, rows, true);
  }

  /// Total cost of generating one image with the given architecture.
  FlopCount arch_flops(const ArchRow& ops) const {
    validate_row(ops, space_.edge_count(), space_.op_count());
    const std::size_t c = space_.base_channels, cn = space_.node_channels();
    FlopCount f;
    std::size_t res = space_.base_resolution;
    f.conv += 2ull * space_.latent_dim * c * res * res;
    for (std::size_t l = 0; l < space_.cells; ++l) {
      res *= 2;
      f.conv += 2ull * c * cn * res * res;
      for (std::size_t e = l * space_.edges_per_cell(); e < (l + 1) * space_.edges_per_cell(); ++e) {
        f += op_flops(space_.operators[ops[e]], cn, cn, res, res, kKernelSize, kKernelSize, space_.embed_dim);
      }
    }
    f.conv += 2ull * c * 3 * 9 * res * res;
    return f;
  }

 private:
  void check_latent(const Tensor& z) const {
    if (z.rank() != 2 || z.dim(1) != space_.latent_dim) {
      throw DimensionError("generator: latent " + shape_str(z.shape()) + " does not match d_z=" +
                           std::to_string(space_.latent_dim));
    }
  }

  Tensor run(Tape& tape, const Tensor& z, std::span<const std::size_t> labels, std::span<const ArchRow> rows,
             bool mixed) const {
    const std::size_t b = z.dim(0), c = space_.base_channels, h0 = space_.base_resolution;
    Tensor h = reshape(tape, linear(tape, z, stem_weight_, stem_bias_), {b, c, h0, h0});
    for (std::size_t l = 0; l < space_.cells; ++l) {
      h = node_forward(tape, l, upsample_nearest2x(tape, h), rows, labels, mixed).output;
    }
    Tensor rgb = add_channel_bias(tape, conv2d(tape, h, rgb_weight_, {1, 1}), rgb_bias_);
    return canas::tanh(tape, rgb);
  }

  SearchSpaceSpec space_;
  double eps_;
  std::vector<Edge> edges_;
  Tensor stem_weight_, stem_bias_;
  std::vector<Tensor> shrink_;
  std::vector<SharedConvKernel> kernels_;
  std::vector<StyleAffine> styles_;
  ClassEmbeddingTable embedding_;
  Tensor rgb_weight_, rgb_bias_;
};

/// A batch replicated so every sample meets every fair architecture row.
struct ReplicatedBatch {
  Tensor data;
  std::vector<std::size_t> labels;
  std::vector<ArchRow> rows;
};

/// Repeats sample i |O| consecutive times, pairing copy r with fair_rows[r].
inline ReplicatedBatch replicate_for_fairness(const Tensor& x, std::span<const std::size_t> labels,
                                              std::span<const ArchRow> fair_rows) {
  if (labels.size() != x.dim(0)) throw DimensionError("replicate_for_fairness: label count != batch");
  if (fair_rows.empty()) throw std::invalid_argument("replicate_for_fairness: no fair rows");
  const std::size_t n = fair_rows.size();
  Tape untracked(false);
  ReplicatedBatch out{repeat_interleave(untracked, x, n), {}, {}};
  out.labels.reserve(labels.size() * n);
  out.rows.reserve(labels.size() * n);
  for (std::size_t y : labels) {
    for (std::size_t r = 0; r < n; ++r) {
      out.labels.push_back(y);
      out.rows.push_back(fair_rows[r]);
    }
  }
  return out;
}

}  // namespace canas

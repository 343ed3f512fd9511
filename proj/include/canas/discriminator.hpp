#pragma once

#include "canas/conditional_ops.hpp"
#include "canas/serialize.hpp"

namespace canas {

/// W / sigma with sigma = u^T W v for fixed unit vectors u, v; W viewed as
/// [rows, numel/rows]. u and v are treated as constants in backward.
inline Tensor spectral_normalize(Tape& tape, const Tensor& weight, std::span<const double> u, std::span<const double> v) {
  const std::size_t rows = weight.dim(0), cols = weight.numel() / rows;
  if (u.size() != rows || v.size() != cols) throw DimensionError("spectral_normalize: u/v length mismatch");
  detail::ConstMatMap W(weight.values().data(), rows, cols);
  const Eigen::Map<const Eigen::VectorXd> uu(u.data(), rows), vv(v.data(), cols);
  const double sigma = uu.dot(W * vv);
  if (!(std::abs(sigma) > 0.0)) throw NumericError("spectral_normalize: zero singular value estimate");
  Tensor out(weight.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = weight[i] / sigma;
  std::vector<double> uvec(u.begin(), u.end()), vvec(v.begin(), v.end());
  return tape.record("spectral_normalize", out, tape.wants_grad({&weight}),
                     [weight, uvec, vvec, sigma, rows, cols](std::span<const double> g) mutable {
                       if (!weight.requires_grad()) return;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * weight[i];
                       auto gw = weight.ensure_grad();
                       const double c = dot / (sigma * sigma);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < cols; ++k) {
                           const std::size_t at = r * cols + k;
                           gw[at] += g[at] / sigma - c * uvec[r] * vvec[k];
                         }
                     });
}

struct DiscriminatorSpec {
  std::vector<std::size_t> channels{3, 64, 128, 256, 256};
  double slope = 0.2;
  bool spectral_norm = true;
  bool class_aware = true;
  std::size_t classes = 10;
  std::size_t image_size = 32;

  std::size_t feature_dim() const { return channels.back(); }
};

/// Stride-2 3x3 conv blocks with leaky ReLU, global sum pooling to phi(x),
/// a linear head psi, and (when class-aware) a class projection term.
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, Rng& rng) : spec_(std::move(spec)) {
    if (spec_.channels.size() < 2 || spec_.channels.front() != 3) {
      throw std::invalid_argument("discriminator.channels: must start at 3 and have at least one block");
    }
    for (std::size_t i = 0; i + 1 < spec_.channels.size(); ++i) {
      const std::size_t ci = spec_.channels[i], co = spec_.channels[i + 1];
      const double fan_in = static_cast<double>(ci * 9);
      weights_.push_back(make_parameter(randn({co, ci, 3, 3}, rng, std::sqrt(2.0 / fan_in))));
      biases_.push_back(make_parameter(Tensor({co}, 0.0)));
      std::vector<double> u(co);
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& x : u) x = n(rng);
      normalize(u);
      sn_u_.push_back(u);
      sn_v_.push_back(std::vector<double>(ci * 9));
      refresh_v(i);
    }
    head_ = ProjectionHead::make(spec_.feature_dim(), rng);
    embedding_ = ClassEmbeddingTable{make_parameter(randn({spec_.classes, spec_.feature_dim()}, rng, 0.1))};
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  bool class_aware() const { return spec_.class_aware; }
  ClassEmbeddingTable& class_embedding() { return embedding_; }
  const ClassEmbeddingTable& class_embedding() const { return embedding_; }
  ProjectionHead& head() { return head_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> p;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      p.emplace_back("block" + std::to_string(i) + ".weight", weights_[i]);
      p.emplace_back("block" + std::to_string(i) + ".bias", biases_[i]);
    }
    p.emplace_back("head.weight", head_.weight);
    p.emplace_back("head.bias", head_.bias);
    p.emplace_back("class_embedding", embedding_.table);
    return p;
  }

  /// Trainable parameters; the embedding table is excluded when not class-aware.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
      if (!spec_.class_aware && name == "class_embedding") continue;
      out.push_back(t);
    }
    return out;
  }

  Discriminator clone() const {
    Discriminator d = *this;
    for (auto& t : d.weights_) t = t.clone();
    for (auto& t : d.biases_) t = t.clone();
    d.head_.weight = head_.weight.clone();
    d.head_.bias = head_.bias.clone();
    d.embedding_.table = embedding_.table.clone();
    return d;
  }

  /// One power-iteration step per block, refreshing the singular vector estimates.
  void power_iteration() {
    if (!spec_.spectral_norm) return;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      refresh_v(i);
      const std::size_t rows = weights_[i].dim(0), cols = weights_[i].numel() / rows;
      detail::ConstMatMap W(weights_[i].values().data(), rows, cols);
      Eigen::Map<Eigen::VectorXd> u(sn_u_[i].data(), rows);
      u = W * Eigen::Map<const Eigen::VectorXd>(sn_v_[i].data(), cols);
      normalize(sn_u_[i]);
    }
  }

  /// phi(x): [b,3,s,s] -> [b, d_f].
  Tensor features(Tape& tape, const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != spec_.image_size || x.dim(3) != spec_.image_size) {
      throw DimensionError("discriminator: input " + shape_str(x.shape()) + " does not match image size " +
                           std::to_string(spec_.image_size));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      Tensor w = spec_.spectral_norm ? spectral_normalize(tape, weights_[i], sn_u_[i], sn_v_[i]) : weights_[i];
      h = leaky_relu(tape, add_channel_bias(tape, conv2d(tape, h, w, {1, 2}), biases_[i]), spec_.slope);
    }
    return sum_pool(tape, h);
  }

  /// D(x, y) = psi(phi(x)) + <e'_y, phi(x)> (projection omitted when not class-aware).
  Tensor forward(Tape& tape, const Tensor& x, std::span<const std::size_t> labels) const {
    if (labels.size() != x.dim(0)) throw DimensionError("discriminator: label count != batch");
    return cproj_score(tape, features(tape, x), labels, head_, spec_.class_aware ? &embedding_ : nullptr);
  }

  nlohmann::json state_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (auto& [name, t] : named_parameters()) j[name] = tensor_to_json(t);
    j["sn_u"] = sn_u_;
    j["sn_v"] = sn_v_;
    return j;
  }

  void load_state_json(const nlohmann::json& j) {
    for (auto& [name, t] : named_parameters()) {
      Tensor dst = t;
      assign_from_json(dst, j.at(name), name);
    }
    auto u = j.at("sn_u").get<std::vector<std::vector<double>>>();
    auto v = j.at("sn_v").get<std::vector<std::vector<double>>>();
    if (u.size() != sn_u_.size() || v.size() != sn_v_.size()) throw DimensionError("checkpoint: spectral vectors");
    sn_u_ = std::move(u);
    sn_v_ = std::move(v);
  }

 private:
  static void normalize(std::vector<double>& x) {
    double n = 0.0;
    for (double v : x) n += v * v;
    n = std::sqrt(n) + 1e-12;
    for (double& v : x) v /= n;
  }

  void refresh_v(std::size_t i) {
    const std::size_t rows = weights_[i].dim(0), cols = weights_[i].numel() / rows;
    detail::ConstMatMap W(weights_[i].values().data(), rows, cols);
    Eigen::Map<Eigen::VectorXd> v(sn_v_[i].data(), cols);
    v = W.transpose() * Eigen::Map<const Eigen::VectorXd>(sn_u_[i].data(), rows);
    normalize(sn_v_[i]);
  }

  DiscriminatorSpec spec_;
  std::vector<Tensor> weights_, biases_;
  std::vector<std::vector<double>> sn_u_, sn_v_;
  ProjectionHead head_;
  ClassEmbeddingTable embedding_;
};

}  // namespace canas

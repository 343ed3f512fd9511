#pragma once

#include <Eigen/Eigenvalues>
#include <iostream>

#include "canas/adam.hpp"
#include "canas/data.hpp"

namespace canas {

/// Receives non-fatal diagnostics such as eigenvalue clipping. Defaults to stderr.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

/// Gaussian fit of a feature set: mean, unbiased covariance, sample count.
struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::size_t n = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
};

/// features [n, d]; covariance uses the n-1 denominator.
inline FeatureStats feature_stats(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("feature_stats: expected [n, d], got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw std::invalid_argument("feature_stats: need at least 2 samples, got " + std::to_string(n));
  detail::ConstMatMap x(features.values().data(), n, d);
  FeatureStats s;
  s.n = n;
  s.mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

/// Stats of the union of two sample sets from the stats of each part.
inline FeatureStats combine_stats(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) throw DimensionError("combine_stats: dimension mismatch");
  const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n), n = na + nb;
  FeatureStats s;
  s.n = a.n + b.n;
  s.mu = (na * a.mu + nb * b.mu) / n;
  const Eigen::VectorXd d = a.mu - b.mu;
  s.sigma = ((na - 1.0) * a.sigma + (nb - 1.0) * b.sigma + (na * nb / n) * d * d.transpose()) / (n - 1.0);
  return s;
}

inline nlohmann::json stats_to_json(const FeatureStats& s) {
  const std::size_t d = s.dim();
  std::vector<double> mu(s.mu.data(), s.mu.data() + d);
  std::vector<std::vector<double>> sigma(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) sigma[i][j] = s.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return {{"dim", d}, {"n", s.n}, {"mu", mu}, {"sigma", sigma}};
}

inline FeatureStats stats_from_json(const nlohmann::json& j) {
  const std::size_t d = j.at("dim").get<std::size_t>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  const auto sigma = j.at("sigma").get<std::vector<std::vector<double>>>();
  if (mu.size() != d || sigma.size() != d) throw DimensionError("stats file: dim does not match mu/sigma");
  FeatureStats s;
  s.n = j.value("n", std::size_t{0});
  s.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(d));
  s.sigma.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    if (sigma[i].size() != d) throw DimensionError("stats file: sigma row " + std::to_string(i) + " length");
    for (std::size_t k = 0; k < d; ++k) s.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = sigma[i][k];
  }
  return s;
}

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The trace of the square root is computed as sum(sqrt(eig(A^{1/2} S_b A^{1/2})))
/// with A^{1/2} from the symmetric eigendecomposition of S_a. That product is
/// similar to S_a S_b, so the eigenvalues agree; negative ones from round-off
/// are clipped to zero.
inline double gaussian_fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("gaussian_fid: dimension " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  if (a.mu == b.mu && a.sigma == b.sigma) return 0.0;
  const double mean_term = (a.mu - b.mu).squaredNorm();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.sigma);
  if (ea.info() != Eigen::Success) throw NumericError("gaussian_fid: eigendecomposition of sigma_a failed");
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = root_a * b.sigma * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  if (ei.info() != Eigen::Success) throw NumericError("gaussian_fid: eigendecomposition of the product failed");

  double trace_sqrt = 0.0;
  const double scale = std::max(1.0, inner.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ei.eigenvalues().size(); ++i) {
    const double lambda = ei.eigenvalues()(i);
    if (lambda < -1e-10 * scale) warning_sink()("gaussian_fid: clipped eigenvalue " + format_double(lambda));
    trace_sqrt += std::sqrt(std::max(lambda, 0.0));
  }
  const double fid = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt;
  return std::max(fid, 0.0);
}

/// exp(E_x KL(p(y|x) || p(y))) for a row-stochastic posterior matrix [n, M],
/// clamped to [1, M].
inline double inception_score_from_probs(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("inception score: expected [n, M] posteriors");
  const std::size_t n = probs.dim(0), m = probs.dim(1);
  std::vector<double> marginal(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) marginal[k] += probs[i * m + k] / static_cast<double>(n);
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      const double p = probs[i * m + k];
      if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[k]));
    }
  kl /= static_cast<double>(n);
  return std::clamp(std::exp(kl), 1.0, static_cast<double>(m));
}

inline Tensor softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.values().subspan(i * m, m);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < m; ++k) z += (p.values()[i * m + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < m; ++k) p.values()[i * m + k] /= z;
  }
  return p;
}

struct ClassifierTraining {
  std::size_t max_epochs = 30;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double holdout_fraction = 0.2;
  double min_accuracy = 0.95;
  std::uint64_t seed = 0;
};

/// Small conv net: three stride-2 3x3 conv + ReLU blocks, global mean pool to
/// the feature vector, linear head to class logits. The pooled features are
/// the FID-proxy embedding.
class ToyClassifier {
 public:
  ToyClassifier(std::size_t classes, std::size_t image_size, std::size_t feature_dim, Rng& rng)
      : classes_(classes), image_size_(image_size) {
    const std::vector<std::size_t> ch{3, std::max<std::size_t>(feature_dim / 4, 1), std::max<std::size_t>(feature_dim / 2, 1),
                                      feature_dim};
    for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
      convs_.push_back(make_parameter(randn({ch[i + 1], ch[i], 3, 3}, rng, std::sqrt(2.0 / static_cast<double>(9 * ch[i])))));
      biases_.push_back(make_parameter(Tensor({ch[i + 1]}, 0.0)));
    }
    head_w_ = make_parameter(randn({classes, feature_dim}, rng, 1.0 / std::sqrt(static_cast<double>(feature_dim))));
    head_b_ = make_parameter(Tensor({classes}, 0.0));
  }

  std::size_t classes() const { return classes_; }
  std::size_t image_size() const { return image_size_; }
  std::size_t feature_dim() const { return head_w_.dim(1); }
  double accuracy() const { return accuracy_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> p;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      p.emplace_back("conv" + std::to_string(i) + ".weight", convs_[i]);
      p.emplace_back("conv" + std::to_string(i) + ".bias", biases_[i]);
    }
    p.emplace_back("head.weight", head_w_);
    p.emplace_back("head.bias", head_b_);
    return p;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
  }

  Tensor features(Tape& tape, const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != image_size_ || x.dim(3) != image_size_) {
      throw DimensionError("classifier: input " + shape_str(x.shape()) + " does not match image size " +
                           std::to_string(image_size_));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = relu(tape, add_channel_bias(tape, conv2d(tape, h, convs_[i], {1, 2}), biases_[i]));
    }
    return scale(tape, sum_pool(tape, h), 1.0 / static_cast<double>(h.dim(2) * h.dim(3)));
  }

  Tensor logits(Tape& tape, const Tensor& x) const { return linear(tape, features(tape, x), head_w_, head_b_); }

  /// Features of every image, computed in chunks without recording.
  Tensor embed(const Tensor& images, std::size_t chunk = 256) const {
    return chunked(images, chunk, [this](Tape& t, const Tensor& x) { return features(t, x); });
  }

  Tensor posteriors(const Tensor& images, std::size_t chunk = 256) const {
    return softmax_rows(chunked(images, chunk, [this](Tape& t, const Tensor& x) { return logits(t, x); }));
  }

  double evaluate(const LabeledImages& data) const {
    const Tensor p = posteriors(data.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto row = p.values().subspan(i * classes_, classes_);
      if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  }

  /// Trains on a stratified split and checks held-out accuracy. Throws when
  /// the accuracy gate is not met within max_epochs.
  void train(const LabeledImages& data, const ClassifierTraining& cfg) {
    if (data.classes != classes_) throw DimensionError("classifier: dataset class count mismatch");
    Rng rng = make_rng(cfg.seed, 0xc1a55);
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t k = 0; k < classes_; ++k) {
      auto idx = data.indices_of(k);
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::size_t hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(idx.size())));
      if (idx.size() <= hold) throw std::invalid_argument("classifier: class " + std::to_string(k) + " has too few samples");
      test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(hold));
      train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(hold), idx.end());
    }
    const LabeledImages test = data.subset(test_idx);
    Adam opt(parameters(), {cfg.lr, 0.9, 0.999, 1e-8});
    BatchSampler sampler(train_idx, make_rng(cfg.seed, 0xba7c4));
    const std::size_t steps_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        const LabeledImages batch = data.subset(sampler.next(cfg.batch_size));
        opt.zero_grad();
        Tape tape;
        tape.backward(cross_entropy(tape, logits(tape, batch.images), batch.labels));
        opt.step();
      }
      accuracy_ = evaluate(test);
      if (accuracy_ >= cfg.min_accuracy) return;
    }
    throw std::runtime_error("classifier: held-out accuracy " + format_double(accuracy_) + " below gate " +
                             format_double(cfg.min_accuracy));
  }

  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (auto& [n, t] : named_parameters()) params[n] = tensor_to_json(t);
    return {{"format", "canas-classifier"}, {"version", 1},         {"classes", classes_}, {"image_size", image_size_},
            {"feature_dim", feature_dim()}, {"accuracy", accuracy_}, {"params", params}};
  }

  static ToyClassifier from_json(const nlohmann::json& j) {
    Rng rng(0);
    ToyClassifier c(j.at("classes").get<std::size_t>(), j.at("image_size").get<std::size_t>(),
                    j.at("feature_dim").get<std::size_t>(), rng);
    for (auto& [n, t] : c.named_parameters()) {
      Tensor dst = t;
      assign_from_json(dst, j.at("params").at(n), n);
    }
    c.accuracy_ = j.at("accuracy").get<double>();
    return c;
  }

 private:
  template <class F>
  Tensor chunked(const Tensor& images, std::size_t chunk, F&& fn) const {
    const std::size_t n = images.dim(0);
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < n; b += chunk) {
      Tape untracked(false);
      parts.push_back(fn(untracked, slice_rows(untracked, images, b, std::min(n, b + chunk))));
    }
    Tape untracked(false);
    return parts.size() == 1 ? parts.front() : concat_rows(untracked, parts);
  }

  std::size_t classes_, image_size_;
  std::vector<Tensor> convs_, biases_;
  Tensor head_w_, head_b_;
  double accuracy_ = 0.0;
};

inline double surrogate_inception_score(const Tensor& images, const ToyClassifier& classifier) {
  return inception_score_from_probs(classifier.posteriors(images));
}

/// FID-proxy between precomputed real stats and a set of generated images.
inline double fid_proxy(const ToyClassifier& classifier, const FeatureStats& real, const Tensor& generated) {
  return gaussian_fid(real, feature_stats(classifier.embed(generated)));
}

/// Intra-class FID-proxy: real stats of class k against n generated class-k
/// images produced by `generate(n)`.
inline double intra_fid_proxy(const ToyClassifier& classifier, const FeatureStats& real_k,
                              const std::function<Tensor(std::size_t)>& generate, std::size_t n) {
  return fid_proxy(classifier, real_k, generate(n));
}

}  // namespace canas

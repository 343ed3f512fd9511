#pragma once

#include "canas/trainer.hpp"

namespace canas {

/// Everything a pipeline run depends on. Loaded from a JSON document whose
/// keys mirror to_json(); absent keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  SearchSpaceSpec space;
  double demod_eps = kDemodEps;
  Schedule schedule{5, 50, 20000, 50000, 1000, 32, 0};
  AdamHyper gan_optimizer{1e-4, 0.0, 0.9, 1e-8};
  AdamHyper calibrate_optimizer{2e-5, 0.0, 0.9, 1e-8};
  PolicyOptions policy;
  std::vector<std::size_t> disc_channels{3, 64, 128, 256, 256};
  bool spectral_norm = true;
  bool class_aware_discriminator = true;
  double disc_slope = 0.2;
  std::string data_path;  // external dataset directory; empty means generate a toy set
  std::size_t samples_per_class = 500;
  int data_jitter = 2;
  double data_noise = 0.05;
  std::uint64_t data_seed = 0;
  std::size_t classifier_features = 64;
  ClassifierTraining classifier;
  std::size_t eval_images_per_class = 1000;

  /// Desk-scale preset: 4 classes at 16x16 with a narrow generator and discriminator.
  static RunConfig smoke() {
    RunConfig c;
    c.out = "runs/smoke";
    c.space.classes = 4;
    c.space.base_channels = 16;
    c.space.base_resolution = 2;
    c.space.latent_dim = 32;
    c.space.embed_dim = 32;
    c.schedule.search_iters = 5000;
    c.schedule.retrain_iters = 10000;
    c.schedule.calibrate_iters = 500;
    c.policy.reward_images = 64;
    c.disc_channels = {3, 16, 32, 64, 64};
    c.samples_per_class = 200;
    return c;
  }

  std::size_t image_size() const { return space.output_resolution(); }

  DiscriminatorSpec discriminator_spec() const {
    DiscriminatorSpec d;
    d.channels = disc_channels;
    d.slope = disc_slope;
    d.spectral_norm = spectral_norm;
    d.class_aware = class_aware_discriminator;
    d.classes = space.classes;
    d.image_size = image_size();
    return d;
  }

  ToyDatasetSpec dataset_spec() const {
    ToyDatasetSpec d;
    d.classes = space.classes;
    d.image_size = image_size();
    d.samples_per_class = samples_per_class;
    d.jitter = data_jitter;
    d.noise = data_noise;
    d.seed = data_seed;
    return d;
  }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw std::invalid_argument(field + ": " + why); };
    space.validate();
    if (!(demod_eps > 0.0)) fail("space.demod_eps", "must be > 0");
    schedule.validate();
    auto check_adam = [&](const std::string& base, const AdamHyper& h) {
      if (!(h.lr > 0.0)) fail(base + ".lr", "must be > 0");
      if (!(h.beta1 >= 0.0 && h.beta1 < 1.0)) fail(base + ".beta1", "must be in [0, 1)");
      if (!(h.beta2 >= 0.0 && h.beta2 < 1.0)) fail(base + ".beta2", "must be in [0, 1)");
      if (!(h.eps > 0.0)) fail(base + ".eps", "must be > 0");
    };
    check_adam("gan_optimizer", gan_optimizer);
    check_adam("calibrate_optimizer", calibrate_optimizer);
    check_adam("policy", policy.hyper);
    if (policy.samples == 0) fail("policy.samples", "must be >= 1");
    if (!(policy.baseline_momentum >= 0.0 && policy.baseline_momentum < 1.0)) fail("policy.baseline_momentum", "must be in [0, 1)");
    if (policy.reward_images < space.classes) fail("policy.reward_images", "must be >= space.classes");
    if (disc_channels.size() < 2 || disc_channels.front() != 3) fail("discriminator.channels", "must start with 3 and list at least one block");
    for (std::size_t c : disc_channels)
      if (c == 0) fail("discriminator.channels", "entries must be >= 1");
    if (image_size() >> (disc_channels.size() - 1) == 0) fail("discriminator.channels", "too many stride-2 blocks for the image size");
    if (!(disc_slope >= 0.0)) fail("discriminator.slope", "must be >= 0");
    if (data_path.empty()) dataset_spec().validate();
    if (classifier_features < 4) fail("classifier.feature_dim", "must be >= 4");
    if (classifier.max_epochs == 0) fail("classifier.max_epochs", "must be >= 1");
    if (!(classifier.min_accuracy >= 0.0 && classifier.min_accuracy <= 1.0)) fail("classifier.min_accuracy", "must be in [0, 1]");
    if (eval_images_per_class < 2) fail("eval.images_per_class", "must be >= 2");
  }

  nlohmann::json to_json() const {
    nlohmann::json ops = nlohmann::json::array();
    for (OperatorKind k : space.operators) ops.push_back(std::string(operator_name(k)));
    auto adam = [](const AdamHyper& h) { return nlohmann::json{{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}}; };
    nlohmann::json pol = adam(policy.hyper);
    pol["samples"] = policy.samples;
    pol["baseline_momentum"] = policy.baseline_momentum;
    pol["embedded"] = policy.embedded;
    pol["reward_images"] = policy.reward_images;
    return {
        {"seed", seed},
        {"out", out},
        {"space",
         {{"cells", space.cells},
          {"nodes", space.nodes},
          {"operators", ops},
          {"classes", space.classes},
          {"base_channels", space.base_channels},
          {"base_resolution", space.base_resolution},
          {"latent_dim", space.latent_dim},
          {"embed_dim", space.embed_dim},
          {"demod_eps", demod_eps}}},
        {"schedule",
         {{"critic", schedule.critic},
          {"policy", schedule.policy},
          {"search_iters", schedule.search_iters},
          {"retrain_iters", schedule.retrain_iters},
          {"calibrate_iters", schedule.calibrate_iters},
          {"batch_size", schedule.batch_size},
          {"checkpoint_every", schedule.checkpoint_every}}},
        {"gan_optimizer", adam(gan_optimizer)},
        {"calibrate_optimizer", adam(calibrate_optimizer)},
        {"policy", pol},
        {"discriminator",
         {{"channels", disc_channels},
          {"spectral_norm", spectral_norm},
          {"class_aware", class_aware_discriminator},
          {"slope", disc_slope}}},
        {"data",
         {{"path", data_path},
          {"samples_per_class", samples_per_class},
          {"jitter", data_jitter},
          {"noise", data_noise},
          {"seed", data_seed}}},
        {"classifier",
         {{"feature_dim", classifier_features},
          {"max_epochs", classifier.max_epochs},
          {"batch_size", classifier.batch_size},
          {"lr", classifier.lr},
          {"holdout_fraction", classifier.holdout_fraction},
          {"min_accuracy", classifier.min_accuracy}}},
        {"eval", {{"images_per_class", eval_images_per_class}}},
    };
  }

  /// Overlays the keys present in j onto this config. Unknown keys and
  /// ill-typed values are errors naming the offending key.
  void merge_json(const nlohmann::json& j) {
    nlohmann::json cur = to_json();
    overlay(cur, j, "");
    from_full_json(cur);
  }

  /// Hash of the canonical config with the output directory left out.
  std::string hash() const {
    nlohmann::json j = to_json();
    j.erase("out");
    return fnv1a_hex(j.dump());
  }

 private:
  static void overlay(nlohmann::json& dst, const nlohmann::json& src, const std::string& prefix) {
    if (!src.is_object()) throw std::invalid_argument((prefix.empty() ? "config" : prefix) + ": expected an object");
    for (auto it = src.begin(); it != src.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (!dst.contains(it.key())) throw std::invalid_argument(key + ": unknown key");
      nlohmann::json& slot = dst[it.key()];
      if (slot.is_object()) {
        overlay(slot, it.value(), key);
      } else {
        const bool num_ok = slot.is_number() && it.value().is_number();
        if (slot.type() != it.value().type() && !num_ok && !(slot.is_array() && it.value().is_array())) {
          throw std::invalid_argument(key + ": expected " + std::string(slot.type_name()) + ", got " +
                                      std::string(it.value().type_name()));
        }
        if (slot.is_number_unsigned() && it.value().is_number() && !it.value().is_number_unsigned()) {
          throw std::invalid_argument(key + ": expected a non-negative integer");
        }
        slot = it.value();
      }
    }
  }

  template <class T>
  static T get(const nlohmann::json& j, const std::string& section, const std::string& key) {
    try {
      return j.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(section + "." + key + ": invalid value");
    }
  }

  void from_full_json(const nlohmann::json& j) {
    seed = j.at("seed").get<std::uint64_t>();
    out = j.at("out").get<std::string>();
    space.cells = get<std::size_t>(j, "space", "cells");
    space.nodes = get<std::size_t>(j, "space", "nodes");
    space.operators.clear();
    for (const auto& name : j.at("space").at("operators")) {
      try {
        space.operators.push_back(parse_operator(name.get<std::string>()));
      } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("space.operators: ") + e.what());
      }
    }
    space.classes = get<std::size_t>(j, "space", "classes");
    space.base_channels = get<std::size_t>(j, "space", "base_channels");
    space.base_resolution = get<std::size_t>(j, "space", "base_resolution");
    space.latent_dim = get<std::size_t>(j, "space", "latent_dim");
    space.embed_dim = get<std::size_t>(j, "space", "embed_dim");
    demod_eps = get<double>(j, "space", "demod_eps");
    schedule.critic = get<std::size_t>(j, "schedule", "critic");
    schedule.policy = get<std::size_t>(j, "schedule", "policy");
    schedule.search_iters = get<std::size_t>(j, "schedule", "search_iters");
    schedule.retrain_iters = get<std::size_t>(j, "schedule", "retrain_iters");
    schedule.calibrate_iters = get<std::size_t>(j, "schedule", "calibrate_iters");
    schedule.batch_size = get<std::size_t>(j, "schedule", "batch_size");
    schedule.checkpoint_every = get<std::size_t>(j, "schedule", "checkpoint_every");
    auto adam = [&](const std::string& s) {
      return AdamHyper{get<double>(j, s, "lr"), get<double>(j, s, "beta1"), get<double>(j, s, "beta2"), get<double>(j, s, "eps")};
    };
    gan_optimizer = adam("gan_optimizer");
    calibrate_optimizer = adam("calibrate_optimizer");
    policy.hyper = adam("policy");
    policy.samples = get<std::size_t>(j, "policy", "samples");
    policy.baseline_momentum = get<double>(j, "policy", "baseline_momentum");
    policy.embedded = get<bool>(j, "policy", "embedded");
    policy.reward_images = get<std::size_t>(j, "policy", "reward_images");
    disc_channels = get<std::vector<std::size_t>>(j, "discriminator", "channels");
    spectral_norm = get<bool>(j, "discriminator", "spectral_norm");
    class_aware_discriminator = get<bool>(j, "discriminator", "class_aware");
    disc_slope = get<double>(j, "discriminator", "slope");
    data_path = get<std::string>(j, "data", "path");
    samples_per_class = get<std::size_t>(j, "data", "samples_per_class");
    data_jitter = get<int>(j, "data", "jitter");
    data_noise = get<double>(j, "data", "noise");
    data_seed = get<std::uint64_t>(j, "data", "seed");
    classifier_features = get<std::size_t>(j, "classifier", "feature_dim");
    classifier.max_epochs = get<std::size_t>(j, "classifier", "max_epochs");
    classifier.batch_size = get<std::size_t>(j, "classifier", "batch_size");
    classifier.lr = get<double>(j, "classifier", "lr");
    classifier.holdout_fraction = get<double>(j, "classifier", "holdout_fraction");
    classifier.min_accuracy = get<double>(j, "classifier", "min_accuracy");
    eval_images_per_class = get<std::size_t>(j, "eval", "images_per_class");
  }
};

}  // namespace canas

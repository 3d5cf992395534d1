#pragma once

// Finite-difference check of the complete pre-training loss with respect to
// every parameter tensor of a small model, in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "multimae/gradcheck.hpp"
#include "multimae/pretrain_loss.hpp"

namespace multimae {

/// 16 px inputs (one token per modality), D_enc = 32, two encoder blocks.
inline ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.resolution = 16;
  c.encoder = {32, 2, 4, 4};
  c.decoder = {32, 2, 2, 4};
  return c;
}

/// Samples with a distinct shape per sample so no loss term is degenerate.
inline Sample gradcheck_sample(std::size_t side, std::uint64_t seed, std::size_t classes) {
  Rng rng(seed);
  Sample s;
  s.height = s.width = side;
  const std::size_t n = side * side;
  s.rgb.resize(n * 3);
  s.depth.resize(n);
  s.depth_valid.resize(n);
  s.semseg.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) s.rgb[i * 3 + c] = static_cast<float>(rng.uniform());
    s.depth[i] = static_cast<float>(rng.uniform(1.0, 5.0));
    s.depth_valid[i] = rng.bernoulli(0.9) ? 1 : 0;
    s.semseg[i] = static_cast<std::uint8_t>(rng.below(classes));
  }
  return s;
}

/// Three samples, each hiding a different modality, so every decoder scores
/// masked tokens.
inline GradCheckResult model_gradient_check(const ModelConfig& config, std::size_t entries_per_leaf,
                                            double tolerance, std::uint64_t seed = 5) {
  auto params = init_params<double>(model_param_specs(config), seed);
  // Non-trivial norms and biases so their gradients are not structurally special.
  {
    Rng rng = Rng::derive(seed, {hash_name("gradcheck.perturb")});
    for (auto& [name, t] : params) {
      if (ends_with(name, ".gain") || ends_with(name, ".bias")) {
        for (auto& v : t.mutable_data()) v += rng.uniform(-0.1, 0.1);
      }
    }
  }
  const MultiMae<double> model(config, params);

  const std::size_t M = config.inputs.size();
  const std::size_t G2 = config.tokens_per_modality();
  std::vector<Sample> samples;
  std::vector<MaskPlan> plans;
  for (std::size_t b = 0; b < M; ++b) {
    samples.push_back(gradcheck_sample(config.resolution, seed * 31 + b, config.num_classes));
    std::vector<double> lambda(M, 1.0 / static_cast<double>(M - 1));
    lambda[b] = 0.0;
    plans.push_back(mask_plan_from_proportions(lambda, config.inputs, config.caps(), (M - 1) * G2, seed + b));
  }
  const PreparedBatch batch = prepare_batch(samples, config);

  std::vector<Tensor<double>> leaves;
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params()) {
    leaves.push_back(t);
    names.push_back(name);
  }
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.max_entries_per_leaf = entries_per_leaf;
  options.seed = seed;
  return check_gradients("full_model", leaves, names, [&] {
    const auto tokens = model.tokenize(batch);
    const auto out = model.forward_pretrain(tokens, plans);
    return total_loss(pretrain_terms(out, batch, config, plans));
  }, options);
}

}  // namespace multimae

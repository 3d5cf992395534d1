#pragma once

// Multi-modal masked autoencoder.
//
// Tokenizer: per-modality linear patch projection plus the fixed sine-cosine
// table; semseg class maps are embedded before patching. No input-side
// modality embedding is added.
//
// Encoder: a learned, position-free global token followed by the visible
// tokens in (modality, index) order, pre-norm Transformer blocks and a final
// norm. Only visible tokens enter the encoder.
//
// Decoder (one per task): encoded tokens are projected to the decoder width
// and receive positional and modality embeddings (the global token receives
// neither). The query grid holds the task's mask token everywhere except at
// positions where the task's source modality was visible, which carry the
// projected encoded token instead; the grid then gets the same positional
// and modality embeddings. One cross-attention step (queries -> all encoded
// tokens, global included), an MLP, self-attention blocks, a norm and a
// linear head produce one output patch per grid position.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "multimae/batch.hpp"
#include "multimae/mask.hpp"
#include "multimae/model_config.hpp"
#include "multimae/nn.hpp"
#include "multimae/ops.hpp"
#include "multimae/params.hpp"

namespace multimae {

inline std::string input_prefix(Modality m) { return "input." + std::string(modality_name(m)); }
inline std::string decoder_prefix(Task t) { return "decoder." + std::string(task_name(t)); }

inline std::vector<ParamSpec> model_param_specs(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  const std::size_t D = config.encoder.dim;
  for (Modality m : config.inputs) {
    nn::add_linear(specs, input_prefix(m), config.modality(m).patch_values(), D);
    if (m == Modality::semseg) {
      specs.push_back({input_prefix(m) + ".class_embed", {config.num_classes, config.class_embed_dim}, Init::trunc_normal});
    }
  }
  specs.push_back({"encoder.global_token", {D}, Init::trunc_normal});
  for (std::size_t i = 0; i < config.encoder.depth; ++i) {
    nn::add_block(specs, "encoder.blocks." + std::to_string(i), D, config.encoder.mlp_ratio);
  }
  nn::add_norm(specs, "encoder.norm", D);

  const std::size_t Dd = config.decoder.dim;
  for (Task t : config.tasks) {
    const std::string pre = decoder_prefix(t);
    nn::add_linear(specs, pre + ".context_proj", D, Dd);
    specs.push_back({pre + ".modality_embed", {kAllModalities.size(), Dd}, Init::trunc_normal});
    specs.push_back({pre + ".mask_token", {Dd}, Init::trunc_normal});
    nn::add_norm(specs, pre + ".cross.query_norm", Dd);
    nn::add_norm(specs, pre + ".cross.context_norm", Dd);
    nn::add_attention(specs, pre + ".cross.attn", Dd);
    nn::add_norm(specs, pre + ".mlp_norm", Dd);
    nn::add_mlp(specs, pre + ".mlp", Dd, config.decoder.mlp_ratio);
    for (std::size_t i = 0; i < config.decoder.depth; ++i) {
      nn::add_block(specs, pre + ".blocks." + std::to_string(i), Dd, config.decoder.mlp_ratio);
    }
    nn::add_norm(specs, pre + ".norm", Dd);
    nn::add_linear(specs, pre + ".head", Dd, config.task_patch_dim(t));
  }
  return specs;
}

struct TokenMeta {
  Modality modality = Modality::rgb;
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const TokenMeta&) const = default;
};

/// Tokens [B, N, D] laid out as contiguous per-modality blocks of grid^2
/// tokens each, in `modalities` order; `meta` describes the N positions.
template <typename T>
struct TokenBatch {
  Tensor<T> tokens;
  std::vector<Modality> modalities;
  std::size_t grid = 0;
  std::vector<TokenMeta> meta;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t per_modality() const { return grid * grid; }
};

/// Raw input patches [B, G*G, P] of one modality; semseg goes through the
/// class-embedding table first, so its patches are differentiable.
template <typename T>
Tensor<T> modality_patches(const PreparedBatch& prepared, Modality m, const ModelConfig& config, const ParamMap<T>& params) {
  const std::size_t B = prepared.batch;
  const std::size_t G2 = prepared.grid * prepared.grid;
  const auto mc = config.modality(m);
  const std::size_t P = mc.patch_values();
  auto from_floats = [&](const std::vector<float>& v) {
    if (v.size() != B * G2 * P) throw DataError("prepared batch lacks the " + std::string(modality_name(m)) + " patches");
    return Tensor<T>::from_data({B, G2, P}, std::vector<T>(v.begin(), v.end()));
  };
  switch (m) {
    case Modality::rgb: return from_floats(prepared.rgb);
    case Modality::depth: return from_floats(prepared.depth);
    case Modality::semseg: {
      const std::size_t side = prepared.semseg_side;
      if (prepared.semseg_small.size() != B * side * side) throw DataError("prepared batch lacks the semseg map");
      const auto& table = param(params, input_prefix(m) + ".class_embed");
      std::vector<Tensor<T>> per_sample;
      for (std::size_t b = 0; b < B; ++b) {
        std::span<const std::uint8_t> map(prepared.semseg_small.data() + b * side * side, side * side);
        // Already downsampled, so embed with factor 1.
        auto raster = embed_semseg(map, side, side, table, 1);
        per_sample.push_back(reshape(patchify(raster, mc.patch_size), {1, G2, P}));
      }
      return concat(per_sample, 0);
    }
  }
  throw ConfigError("unknown modality");
}

/// patches . W + b + positional table.
template <typename T>
Tensor<T> project_modality(const Tensor<T>& patches, Modality m, const ParamMap<T>& params, std::size_t grid) {
  const std::string pre = input_prefix(m);
  if (!params.count(pre + ".weight")) {
    throw ConfigError("no input projection for modality '" + std::string(modality_name(m)) + "'");
  }
  auto tokens = nn::linear(patches, params, pre);
  return add(tokens, pos_embed_2d<T>(tokens.dim(-1), grid));
}

template <typename T>
TokenBatch<T> tokenize(const PreparedBatch& prepared, const ModelConfig& config, const ParamMap<T>& params,
                       const std::vector<Modality>& modalities) {
  TokenBatch<T> out;
  out.grid = prepared.grid;
  out.modalities = modalities;
  std::vector<Tensor<T>> blocks;
  for (Modality m : modalities) {
    blocks.push_back(project_modality(modality_patches(prepared, m, config, params), m, params, prepared.grid));
    for (std::size_t r = 0; r < prepared.grid; ++r)
      for (std::size_t c = 0; c < prepared.grid; ++c) out.meta.push_back({m, r, c});
  }
  out.tokens = blocks.size() == 1 ? blocks[0] : concat(blocks, 1);
  return out;
}

template <typename T>
TokenBatch<T> tokenize(const PreparedBatch& prepared, const ModelConfig& config, const ParamMap<T>& params) {
  return tokenize(prepared, config, params, config.inputs);
}

/// Global token, Transformer blocks and final norm over tokens [B, N, D].
template <typename T>
Tensor<T> encoder_trunk(const Tensor<T>& tokens, const ParamMap<T>& params, const ModelConfig& config) {
  const std::size_t B = tokens.dim(0), D = tokens.dim(2);
  auto global = add(Tensor<T>::zeros({B, 1, D}), param(params, "encoder.global_token"));
  auto x = concat<T>({global, tokens}, 1);
  for (std::size_t i = 0; i < config.encoder.depth; ++i) {
    x = nn::block(x, params, "encoder.blocks." + std::to_string(i), config.encoder.heads, config.norm_eps);
  }
  return nn::norm(x, params, "encoder.norm", config.norm_eps);
}

template <typename T>
struct PretrainOutput {
  Tensor<T> encoded;  // [B, V + 1, D]
  std::vector<Task> tasks;
  std::vector<Tensor<T>> predictions;  // [B, G*G, patch_dim] per task

  const Tensor<T>& prediction(Task t) const {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i] == t) return predictions[i];
    }
    throw ConfigError("no prediction for task '" + std::string(task_name(t)) + "'");
  }
};

template <typename T>
class MultiMae {
 public:
  MultiMae(ModelConfig config, ParamMap<T> params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    for (const auto& spec : model_param_specs(config_)) {
      const auto& t = param(params_, spec.name);
      if (t.shape() != spec.shape) {
        throw DimensionError("parameter '" + spec.name + "' has shape " + shape_str(t.shape()) + ", config expects " +
                             shape_str(spec.shape));
      }
    }
  }

  static MultiMae initialize(const ModelConfig& config, std::uint64_t seed) {
    return MultiMae(config, init_params<T>(model_param_specs(config), seed));
  }

  const ModelConfig& config() const { return config_; }
  ParamMap<T>& params() { return params_; }
  const ParamMap<T>& params() const { return params_; }

  TokenBatch<T> tokenize(const PreparedBatch& prepared) const { return multimae::tokenize(prepared, config_, params_); }

  /// Encoder over [global, visible tokens] -> [B, V + 1, D].
  Tensor<T> encode_visible(const TokenBatch<T>& batch, const std::vector<MaskPlan>& plans) const {
    const std::size_t B = batch.batch();
    const std::size_t G2 = batch.per_modality();
    const std::size_t N = batch.tokens.dim(1);
    const std::size_t D = batch.tokens.dim(2);
    if (plans.size() != B) {
      throw ContractError(std::to_string(plans.size()) + " mask plans for a batch of " + std::to_string(B));
    }
    const std::size_t V = plans[0].total_visible();
    std::vector<std::size_t> rows;
    rows.reserve(B * V);
    for (std::size_t b = 0; b < B; ++b) {
      const MaskPlan& plan = plans[b];
      if (plan.modalities != batch.modalities) throw ContractError("mask plan modalities do not match the token batch");
      if (plan.total_visible() != V) throw ContractError("mask plans in one batch must share the visible count");
      for (std::size_t s = 0; s < plan.modalities.size(); ++s) {
        if (plan.visible[s].size() != plan.counts[s]) throw ContractError("mask plan counts disagree with index lists");
        for (std::size_t i : plan.visible[s]) {
          if (i >= G2) throw ContractError("mask plan index " + std::to_string(i) + " outside grid of " + std::to_string(G2));
          rows.push_back(b * N + s * G2 + i);
        }
      }
    }
    if (V == 0) throw ContractError("mask plan leaves no visible token");
    auto visible = reshape(index_select(reshape(batch.tokens, {B * N, D}), 0, rows), {B, V, D});
    return encoder_trunk(visible, params_, config_);
  }

  /// Mask-free forward over every token -> [B, N + 1, D].
  Tensor<T> forward_transfer(const TokenBatch<T>& batch) const { return encoder_trunk(batch.tokens, params_, config_); }

  /// Predictions [B, G*G, patch_dim] for one task.
  Tensor<T> decode_task(Task task, const Tensor<T>& encoded, const std::vector<MaskPlan>& plans) const {
    if (!config_.has_task(task)) throw ConfigError("no decoder for task '" + std::string(task_name(task)) + "'");
    const std::string pre = decoder_prefix(task);
    const std::size_t B = encoded.dim(0);
    const std::size_t L = encoded.dim(1);  // V + 1
    const std::size_t Dd = config_.decoder.dim;
    const std::size_t G = config_.grid();
    const std::size_t G2 = G * G;
    if (plans.size() != B || plans[0].total_visible() + 1 != L) {
      throw ContractError("mask plans do not match the encoded sequence");
    }
    const auto pos = pos_embed_2d<T>(Dd, G);
    const auto& modality_embed = param(params_, pre + ".modality_embed");
    const Modality source = task_source(task);

    auto context = nn::linear(encoded, params_, pre + ".context_proj");  // [B, L, Dd]

    // Embeddings of the visible context tokens; the global token gets none.
    std::vector<std::size_t> modality_ids;
    std::vector<T> pos_rows;
    pos_rows.reserve(B * (L - 1) * Dd);
    std::vector<std::size_t> dst_rows, src_rows;
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t offset = 1;
      for (std::size_t s = 0; s < plans[b].modalities.size(); ++s) {
        const Modality m = plans[b].modalities[s];
        for (std::size_t i : plans[b].visible[s]) {
          modality_ids.push_back(static_cast<std::size_t>(m));
          const auto row = pos.data().subspan(i * Dd, Dd);
          pos_rows.insert(pos_rows.end(), row.begin(), row.end());
          if (m == source) {
            dst_rows.push_back(b * G2 + i);
            src_rows.push_back(b * L + offset);
          }
          ++offset;
        }
      }
    }
    auto context_embed = add(reshape(embedding(modality_embed, modality_ids), {B, L - 1, Dd}),
                             Tensor<T>::from_data({B, L - 1, Dd}, std::move(pos_rows)));
    auto context_in = add(context, concat<T>({Tensor<T>::zeros({B, 1, Dd}), context_embed}, 1));

    auto grid = add(Tensor<T>::zeros({B * G2, Dd}), param(params_, pre + ".mask_token"));
    grid = overwrite_rows(grid, reshape(context, {B * L, Dd}), dst_rows, src_rows);
    auto source_embed = reshape(embedding(modality_embed, {static_cast<std::size_t>(source)}), {Dd});
    auto queries = add(add(reshape(grid, {B, G2, Dd}), pos), source_embed);

    const double eps = config_.norm_eps;
    auto x = add(queries, nn::attention(nn::norm(queries, params_, pre + ".cross.query_norm", eps),
                                        nn::norm(context_in, params_, pre + ".cross.context_norm", eps), params_,
                                        pre + ".cross.attn", config_.decoder.heads));
    x = add(x, nn::mlp(nn::norm(x, params_, pre + ".mlp_norm", eps), params_, pre + ".mlp"));
    for (std::size_t i = 0; i < config_.decoder.depth; ++i) {
      x = nn::block(x, params_, pre + ".blocks." + std::to_string(i), config_.decoder.heads, eps);
    }
    return nn::linear(nn::norm(x, params_, pre + ".norm", eps), params_, pre + ".head");
  }

  PretrainOutput<T> forward_pretrain(const TokenBatch<T>& batch, const std::vector<MaskPlan>& plans) const {
    PretrainOutput<T> out;
    out.encoded = encode_visible(batch, plans);
    for (Task t : config_.tasks) {
      out.tasks.push_back(t);
      out.predictions.push_back(decode_task(t, out.encoded, plans));
    }
    return out;
  }

 private:
  ModelConfig config_;
  ParamMap<T> params_;
};

/// Parameters of a standard single-modality ViT: the chosen input
/// projection (and class table for semseg), the global token and the
/// encoder. Other projections and all decoders are dropped.
template <typename T>
ParamMap<T> export_single_modal_vit(const ParamMap<T>& params, Modality m) {
  const std::string pre = input_prefix(m) + ".";
  if (!params.count(pre + "weight")) {
    throw ConfigError("cannot export modality '" + std::string(modality_name(m)) + "': no input projection");
  }
  ParamMap<T> out;
  for (const auto& [name, t] : params) {
    if (name.rfind(pre, 0) == 0 || name.rfind("encoder.", 0) == 0) out.emplace(name, t);
  }
  return out;
}

/// Forward of an exported single-modality ViT -> [B, G*G + 1, D].
template <typename T>
Tensor<T> vit_forward(const ParamMap<T>& vit, const ModelConfig& config, Modality m, const PreparedBatch& prepared) {
  auto patches = modality_patches(prepared, m, config, vit);
  auto tokens = project_modality(patches, m, vit, prepared.grid);
  const std::size_t B = tokens.dim(0), D = tokens.dim(2);
  auto x = concat<T>({add(Tensor<T>::zeros({B, 1, D}), param(vit, "encoder.global_token")), tokens}, 1);
  for (std::size_t i = 0; param_exists(vit, "encoder.blocks." + std::to_string(i) + ".norm1.gain"); ++i) {
    x = nn::block(x, vit, "encoder.blocks." + std::to_string(i), config.encoder.heads, config.norm_eps);
  }
  return nn::norm(x, vit, "encoder.norm", config.norm_eps);
}

}  // namespace multimae

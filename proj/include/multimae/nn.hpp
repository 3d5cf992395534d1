#pragma once

// Transformer building blocks over named parameters.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "multimae/ops.hpp"
#include "multimae/params.hpp"

namespace multimae::nn {

inline void add_linear(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t in, std::size_t out) {
  specs.push_back({prefix + ".weight", {in, out}, Init::trunc_normal});
  specs.push_back({prefix + ".bias", {out}, Init::zeros});
}

inline void add_norm(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t dim) {
  specs.push_back({prefix + ".gain", {dim}, Init::ones});
  specs.push_back({prefix + ".bias", {dim}, Init::zeros});
}

inline void add_attention(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t dim) {
  for (const char* part : {".q", ".k", ".v", ".proj"}) add_linear(specs, prefix + part, dim, dim);
}

inline void add_mlp(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t dim, std::size_t ratio) {
  add_linear(specs, prefix + ".fc1", dim, dim * ratio);
  add_linear(specs, prefix + ".fc2", dim * ratio, dim);
}

inline void add_block(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t dim, std::size_t ratio) {
  add_norm(specs, prefix + ".norm1", dim);
  add_attention(specs, prefix + ".attn", dim);
  add_norm(specs, prefix + ".norm2", dim);
  add_mlp(specs, prefix + ".mlp", dim, ratio);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const ParamMap<T>& p, const std::string& prefix) {
  return add(matmul(x, param(p, prefix + ".weight")), param(p, prefix + ".bias"));
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const ParamMap<T>& p, const std::string& prefix, double eps) {
  return layer_norm(x, param(p, prefix + ".gain"), param(p, prefix + ".bias"), static_cast<T>(eps));
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const ParamMap<T>& p, const std::string& prefix) {
  return linear(gelu(linear(x, p, prefix + ".fc1")), p, prefix + ".fc2");
}

/// [B, N, D] -> [B, H, N, D/H]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  return permute_0213(reshape(x, {B, N, heads, D / heads}));
}

/// [B, H, N, d] -> [B, N, H*d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t B = x.dim(0), H = x.dim(1), N = x.dim(2), d = x.dim(3);
  return reshape(permute_0213(x), {B, N, H * d});
}

/// Multi-head scaled dot-product attention from `queries` [B, Nq, D] to
/// `context` [B, Nk, D].
template <typename T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& context, const ParamMap<T>& p, const std::string& prefix,
                    std::size_t heads) {
  const std::size_t D = queries.dim(-1);
  auto q = split_heads(linear(queries, p, prefix + ".q"), heads);
  auto k = split_heads(linear(context, p, prefix + ".k"), heads);
  auto v = split_heads(linear(context, p, prefix + ".v"), heads);
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D / heads)));
  auto weights = softmax_lastdim(scale(matmul(q, transpose_last2(k)), inv_scale));
  return linear(merge_heads(matmul(weights, v)), p, prefix + ".proj");
}

/// Pre-norm Transformer block: x + attn(norm(x)), then x + mlp(norm(x)).
template <typename T>
Tensor<T> block(const Tensor<T>& x, const ParamMap<T>& p, const std::string& prefix, std::size_t heads, double eps) {
  auto h = norm(x, p, prefix + ".norm1", eps);
  auto y = add(x, attention(h, h, p, prefix + ".attn", heads));
  return add(y, mlp(norm(y, p, prefix + ".norm2", eps), p, prefix + ".mlp"));
}

}  // namespace multimae::nn

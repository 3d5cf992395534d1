#pragma once

// Named parameter storage and initialisation.
//
// Naming convention, relied on by the optimizer's weight-decay rule:
//   *.weight       linear projection matrices [in, out] (decayed)
//   *.bias         linear / norm biases
//   *.gain         norm gains
//   *_token        learned tokens
//   *_embed        learned embedding tables

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/rng.hpp"
#include "multimae/tensor.hpp"

namespace multimae {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

enum class Init : std::uint8_t { trunc_normal, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::trunc_normal;
};

inline constexpr double kInitStd = 0.02;

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

/// Weight decay applies to projection matrices only; norms, biases, tokens
/// and embedding tables are exempt.
inline bool decays(std::string_view name) { return ends_with(name, ".weight"); }

/// Each tensor draws from its own stream keyed by (seed, name), so values do
/// not depend on which other tensors exist.
template <typename T>
ParamMap<T> init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamMap<T> out;
  for (const auto& spec : specs) {
    if (out.count(spec.name)) throw ContractError("duplicate parameter name '" + spec.name + "'");
    const std::size_t n = shape_numel(spec.shape);
    std::vector<T> v(n);
    switch (spec.init) {
      case Init::zeros: break;
      case Init::ones: std::fill(v.begin(), v.end(), T(1)); break;
      case Init::trunc_normal: {
        Rng rng = Rng::derive(seed, {hash_name(spec.name)});
        for (auto& x : v) x = static_cast<T>(rng.truncated_normal(kInitStd));
        break;
      }
    }
    out.emplace(spec.name, Tensor<T>::from_data(spec.shape, std::move(v), true));
  }
  return out;
}

template <typename T>
const Tensor<T>& param(const ParamMap<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
bool param_exists(const ParamMap<T>& params, const std::string& name) {
  return params.find(name) != params.end();
}

template <typename U, typename T>
ParamMap<U> cast_params(const ParamMap<T>& params, bool requires_grad = true) {
  ParamMap<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>(requires_grad));
  return out;
}

template <typename T>
std::size_t count_values(const ParamMap<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
void zero_grads(ParamMap<T>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

}  // namespace multimae

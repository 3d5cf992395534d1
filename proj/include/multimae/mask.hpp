#pragma once

// Two-stage multi-modal mask sampling.
//
// 1. Token proportions over modalities are drawn from a symmetric
//    Dirichlet(alpha) via normalised Gamma(alpha, 1) draws, or fixed to 1/M
//    for the equal-split strategy (the alpha -> infinity limit).
// 2. Proportions are apportioned to integer counts summing to the visible
//    budget V (largest remainder, ties to the lower modality index, overflow
//    beyond a modality's token count spills down the same remainder order),
//    and each modality draws its count uniformly without replacement.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/modality.hpp"
#include "multimae/rng.hpp"

namespace multimae {

struct DirichletParams {
  /// Concentration; std::nullopt selects the equal-split strategy.
  std::optional<double> alpha = 1.0;
  std::size_t num_modalities = 3;
  std::size_t num_visible = 98;

  bool is_equal() const { return !alpha.has_value(); }

  void validate() const {
    if (alpha && !(*alpha > 0.0 && std::isfinite(*alpha))) {
      throw ConfigError("Dirichlet alpha must be a positive finite number or 'equal'");
    }
    if (num_modalities == 0) throw ConfigError("mask sampling needs at least one modality");
  }
};

/// Parses "equal" (also "inf") or a positive number.
inline std::optional<double> parse_alpha(const std::string& text) {
  if (text == "equal" || text == "inf" || text == "infinity") return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError("alpha must be a positive number or 'equal', got '" + text + "'");
  }
  return v;
}

inline std::string alpha_to_string(const std::optional<double>& alpha) {
  if (!alpha) return "equal";
  std::ostringstream os;
  os.precision(17);
  os << *alpha;
  return os.str();
}

struct MaskPlan {
  std::vector<Modality> modalities;
  std::vector<std::size_t> counts;
  std::vector<std::vector<std::size_t>> visible;  // sorted, per modality
  std::uint64_t seed = 0;

  std::size_t total_visible() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  /// Slot of modality m in this plan, or npos when absent.
  std::size_t slot(Modality m) const {
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      if (modalities[i] == m) return i;
    }
    return npos;
  }

  bool is_visible(Modality m, std::size_t index) const {
    const std::size_t s = slot(m);
    return s != npos && std::binary_search(visible[s].begin(), visible[s].end(), index);
  }

  bool operator==(const MaskPlan&) const = default;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

inline std::vector<double> sample_proportions(const DirichletParams& params, Rng& rng) {
  params.validate();
  const std::size_t M = params.num_modalities;
  if (params.is_equal()) return std::vector<double>(M, 1.0 / static_cast<double>(M));
  if (M == 1) return {1.0};
  std::vector<double> logs(M);
  for (auto& l : logs) l = rng.log_gamma_draw(*params.alpha);
  const double mx = *std::max_element(logs.begin(), logs.end());
  std::vector<double> lambda(M);
  double total = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    lambda[m] = std::exp(logs[m] - mx);
    total += lambda[m];
  }
  for (auto& l : lambda) l /= total;
  return lambda;
}

inline std::vector<std::size_t> allocate_counts(std::span<const double> lambda, std::size_t num_visible,
                                                std::span<const std::size_t> caps) {
  if (lambda.size() != caps.size()) throw ContractError("allocate_counts: proportions and caps differ in length");
  const std::size_t cap_total = std::accumulate(caps.begin(), caps.end(), std::size_t{0});
  if (num_visible > cap_total) {
    throw ConfigError("visible budget " + std::to_string(num_visible) + " exceeds the " + std::to_string(cap_total) +
                      " available tokens");
  }
  const std::size_t M = lambda.size();
  std::vector<std::size_t> counts(M);
  std::vector<double> remainder(M);
  std::size_t assigned = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const double quota = lambda[m] * static_cast<double>(num_visible);
    const double fl = std::floor(quota);
    counts[m] = static_cast<std::size_t>(fl);
    remainder[m] = quota - fl;
    assigned += counts[m];
  }
  // Rounding of lambda can leave the floors above V; trim from the smallest remainders.
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = M; assigned > num_visible && i-- > 0;) {
    if (counts[order[i]] > 0) {
      --counts[order[i]];
      --assigned;
    }
  }
  for (std::size_t i = 0; assigned < num_visible; i = (i + 1) % M) {
    ++counts[order[i]];
    ++assigned;
  }
  std::size_t overflow = 0;
  for (std::size_t m = 0; m < M; ++m) {
    if (counts[m] > caps[m]) {
      overflow += counts[m] - caps[m];
      counts[m] = caps[m];
    }
  }
  while (overflow > 0) {
    for (std::size_t i = 0; i < M && overflow > 0; ++i) {
      const std::size_t m = order[i];
      if (counts[m] < caps[m]) {
        ++counts[m];
        --overflow;
      }
    }
  }
  return counts;
}

inline std::vector<std::vector<std::size_t>> sample_visible_indices(std::span<const std::size_t> counts,
                                                                    std::span<const std::size_t> caps, Rng& rng) {
  if (counts.size() != caps.size()) throw ContractError("sample_visible_indices: counts and caps differ in length");
  std::vector<std::vector<std::size_t>> out(counts.size());
  for (std::size_t m = 0; m < counts.size(); ++m) {
    if (counts[m] > caps[m]) {
      throw ContractError("visible count " + std::to_string(counts[m]) + " exceeds modality size " + std::to_string(caps[m]));
    }
    std::vector<std::size_t> pool(caps[m]);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < counts[m]; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(caps[m] - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(counts[m]);
    std::sort(pool.begin(), pool.end());
    out[m] = std::move(pool);
  }
  return out;
}

/// Plan for fixed proportions (e.g. a single-modality corner of the simplex).
inline MaskPlan mask_plan_from_proportions(std::span<const double> lambda, std::span<const Modality> modalities,
                                           std::span<const std::size_t> caps, std::size_t num_visible,
                                           std::uint64_t seed) {
  if (modalities.size() != caps.size()) throw ContractError("modalities and caps differ in length");
  Rng rng(seed);
  MaskPlan plan;
  plan.modalities.assign(modalities.begin(), modalities.end());
  plan.counts = allocate_counts(lambda, num_visible, caps);
  plan.visible = sample_visible_indices(plan.counts, caps, rng);
  plan.seed = seed;
  return plan;
}

/// Deterministic in (params, caps, seed).
inline MaskPlan build_mask_plan(const DirichletParams& params, std::span<const Modality> modalities,
                                std::span<const std::size_t> caps, std::uint64_t seed) {
  params.validate();
  if (modalities.size() != params.num_modalities || caps.size() != params.num_modalities) {
    throw ContractError("mask plan: modality count does not match Dirichlet parameters");
  }
  Rng rng(seed);
  const auto lambda = sample_proportions(params, rng);
  MaskPlan plan;
  plan.modalities.assign(modalities.begin(), modalities.end());
  plan.counts = allocate_counts(lambda, params.num_visible, caps);
  plan.visible = sample_visible_indices(plan.counts, caps, rng);
  plan.seed = seed;
  return plan;
}

/// Plan with every token visible.
inline MaskPlan full_mask_plan(std::span<const Modality> modalities, std::span<const std::size_t> caps) {
  MaskPlan plan;
  plan.modalities.assign(modalities.begin(), modalities.end());
  for (std::size_t cap : caps) {
    plan.counts.push_back(cap);
    std::vector<std::size_t> all(cap);
    std::iota(all.begin(), all.end(), std::size_t{0});
    plan.visible.push_back(std::move(all));
  }
  return plan;
}

/// Text form: "seed=<n>" followed by one "<modality>:<i>,<j>,..." line per
/// modality in plan order.
inline std::string mask_plan_to_text(const MaskPlan& plan) {
  std::ostringstream os;
  os << "seed=" << plan.seed << '\n';
  for (std::size_t s = 0; s < plan.modalities.size(); ++s) {
    os << modality_name(plan.modalities[s]) << ':';
    for (std::size_t i = 0; i < plan.visible[s].size(); ++i) os << (i ? "," : "") << plan.visible[s][i];
    os << '\n';
  }
  return os.str();
}

inline MaskPlan mask_plan_from_text(const std::string& text) {
  MaskPlan plan;
  std::istringstream in(text);
  std::string line;
  auto number = [](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw FormatError("mask plan: bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("seed=", 0) == 0) {
      plan.seed = number(line.substr(5));
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError("mask plan: expected '<modality>:<indices>', got '" + line + "'");
    Modality m;
    try {
      m = parse_modality(line.substr(0, colon));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("mask plan: ") + e.what());
    }
    std::vector<std::size_t> idx;
    std::istringstream list(line.substr(colon + 1));
    std::string item;
    while (std::getline(list, item, ',')) idx.push_back(static_cast<std::size_t>(number(item)));
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) throw FormatError("mask plan: repeated index for " + line.substr(0, colon));
    plan.modalities.push_back(m);
    plan.counts.push_back(idx.size());
    plan.visible.push_back(std::move(idx));
  }
  return plan;
}

}  // namespace multimae

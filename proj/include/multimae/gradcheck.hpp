#pragma once

// Central finite-difference gradient checks in double precision.
//
// The loss closure is re-evaluated with one leaf entry shifted by +h and -h;
// the quotient is compared against the entry of the analytic gradient from
// backward(). The closure must rebuild the graph on every call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/rng.hpp"
#include "multimae/tensor.hpp"

namespace multimae {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error, so entries whose true
  /// gradient is ~0 are judged on absolute error.
  double floor = 1e-6;
  /// Entries checked per leaf; 0 checks all of them, otherwise a seeded
  /// random subset (always including the largest-gradient entry).
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "leaf[index] analytic vs numeric"
  bool passed = true;
};

inline double gradcheck_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Checks d loss / d leaf for every leaf. Leaves must be double tensors with
/// requires_grad set; their gradients are cleared on return.
inline GradCheckResult check_gradients(const std::string& name, std::vector<Tensor<double>> leaves,
                                       const std::vector<std::string>& leaf_names,
                                       const std::function<Tensor<double>()>& loss_fn,
                                       const GradCheckOptions& options = {}) {
  GradCheckResult result;
  result.name = name;
  for (auto& leaf : leaves) leaf.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
    leaf.zero_grad();
  }

  Rng rng = Rng::derive(options.seed, {hash_name(name)});
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    std::vector<std::size_t> entries(values.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (options.max_entries_per_leaf != 0 && entries.size() > options.max_entries_per_leaf) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(analytic[l].begin(), analytic[l].end(),
                           [](double a, double b) { return std::abs(a) < std::abs(b); }) -
          analytic[l].begin());
      rng.shuffle(entries);
      entries.resize(options.max_entries_per_leaf);
      if (std::find(entries.begin(), entries.end(), largest) == entries.end()) entries.back() = largest;
    }
    for (std::size_t i : entries) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = loss_fn().item();
      values[i] = original - options.step;
      const double down = loss_fn().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = gradcheck_rel_error(analytic[l][i], numeric, options.floor);
      ++result.entries_checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        std::ostringstream os;
        os << (l < leaf_names.size() ? leaf_names[l] : "leaf" + std::to_string(l)) << '[' << i
           << "] analytic " << analytic[l][i] << " numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace multimae

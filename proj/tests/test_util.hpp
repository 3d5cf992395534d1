#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "multimae/gradcheck.hpp"
#include "multimae/modality.hpp"
#include "multimae/rng.hpp"

namespace testutil {

using multimae::Rng;
using multimae::Shape;
using T64 = multimae::Tensor<double>;

inline T64 random_leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(multimae::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T64::from_data(std::move(shape), std::move(v), true);
}

template <typename T>
multimae::Tensor<T> probe(const multimae::Tensor<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<T> w(y.numel());
  for (auto& x : w) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return multimae::sum(multimae::mul(y, multimae::Tensor<T>::from_data(y.shape(), std::move(w))));
}

inline void expect_grads(const std::string& name, std::vector<T64> leaves, const std::function<T64()>& fn,
                         double tol = 1e-5) {
  multimae::GradCheckOptions opt;
  opt.tolerance = tol;
  const auto r = multimae::check_gradients(name, std::move(leaves), {}, fn, opt);
  EXPECT_TRUE(r.passed) << r.name << ": max rel err " << r.max_rel_error << " at " << r.worst;
  EXPECT_GT(r.entries_checked, 0u);
}

/// Random sample with every modality present and roughly 5% invalid depth.
inline multimae::Sample random_sample(std::size_t side, std::uint64_t seed, std::size_t classes = 133) {
  Rng rng(seed);
  multimae::Sample s;
  s.height = s.width = side;
  const std::size_t n = side * side;
  s.rgb.resize(n * 3);
  for (auto& v : s.rgb) v = static_cast<float>(rng.uniform());
  s.depth.resize(n);
  s.depth_valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.depth[i] = static_cast<float>(rng.uniform(1.0, 10.0));
    s.depth_valid[i] = rng.bernoulli(0.95) ? 1 : 0;
  }
  s.semseg.resize(n);
  for (auto& c : s.semseg) c = static_cast<std::uint8_t>(rng.below(classes));
  return s;
}

template <typename T>
std::vector<T> values(const multimae::Tensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

}  // namespace testutil

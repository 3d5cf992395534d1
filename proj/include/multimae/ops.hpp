#pragma once

// Differentiable tensor operations.
//
// Broadcasting is limited to what the model needs: in binary elementwise ops
// one operand's shape may be a trailing suffix of the other's (bias rows,
// positional tables, layer-norm gains). Matmul broadcasts a rank-2 right
// operand over the left operand's leading dimensions.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/tensor.hpp"

namespace multimae {

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, GA grad_a,
                             GB grad_b) {
  Shape out_shape;
  if (a.shape() == b.shape() || is_suffix(b.shape(), a.shape())) {
    out_shape = a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    out_shape = b.shape();
  } else {
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
  }
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  return make_result<T>(std::move(out_shape), std::move(out), {a, b}, [na, nb, grad_a, grad_b](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    const std::size_t m = self.grad.size();
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        g[i % na] += grad_a(an.value[i % na], bn.value[i % nb], self.grad[i]);
      }
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        g[i % nb] += grad_b(an.value[i % na], bn.value[i % nb], self.grad[i]);
      }
    }
  });
}

template <typename T, typename F, typename D>
Tensor<T> unary_elementwise(const Tensor<T>& x, F f, D dfdx) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [dfdx](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    auto& g = xn.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xn.value[i], self.value[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_elementwise(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_elementwise(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// |x| with subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Exact Gaussian-error GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary_elementwise(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.node()->value) acc += v;
  return detail::make_result<T>({1}, {acc}, {x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum over the last axis; rank-1 input yields shape [1].
template <typename T>
Tensor<T> sum_lastdim(const Tensor<T>& x) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const auto& xv = x.node()->value;
  std::vector<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r] += xv[r * c + j];
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x}, [c, rows](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), x.node()->value, {x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(-2), n = x.dim(-1);
  const std::size_t batch = x.numel() / (m * n);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[off + j * m + i] = xv[off + i * n + j];
    }
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x}, [batch, m, n](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = b * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[off + i * n + j] += self.grad[off + j * m + i];
      }
    }
  });
}

/// [A, B, C, D] -> [A, C, B, D]; used to split/merge attention heads.
template <typename T>
Tensor<T> permute_0213(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("permute_0213 needs rank 4, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* src = &xv[((a * B + b) * C + c) * D];
        T* dst = &out[((a * C + c) * B + b) * D];
        std::copy(src, src + D, dst);
      }
  return detail::make_result<T>({A, C, B, D}, std::move(out), {x}, [A, B, C, D](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          T* dst = &g[((a * B + b) * C + c) * D];
          const T* src = &self.grad[((a * C + c) * B + b) * D];
          for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat needs at least one tensor");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " does not match " + shape_str(ref) + " off axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> chunk(parts.size());
  std::size_t total_chunk = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = parts[p].shape()[axis] * inner;
    total_chunk += chunk[p];
  }
  std::vector<T> out(outer * total_chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * total_chunk;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const T* src = parts[p].node()->value.data() + o * chunk[p];
      std::copy(src, src + chunk[p], out.data() + off);
      off += chunk[p];
    }
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), parts,
                                [outer, chunk, total_chunk](detail::Node<T>& self) {
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    std::size_t off = o * total_chunk;
                                    for (std::size_t p = 0; p < chunk.size(); ++p) {
                                      detail::Node<T>& in = *self.inputs[p];
                                      if (in.requires_grad) {
                                        auto& g = in.grad_buffer();
                                        for (std::size_t i = 0; i < chunk[p]; ++i) g[o * chunk[p] + i] += self.grad[off + i];
                                      }
                                      off += chunk[p];
                                    }
                                  }
                                });
}

/// Selects entries `indices` (repeats allowed) along `axis`.
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("index_select axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  if (indices.empty()) throw DimensionError("index_select needs at least one index");
  for (std::size_t i : indices) {
    if (i >= s[axis]) throw DimensionError("index_select: index " + std::to_string(i) + " out of range for axis extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = indices.size();
  const auto& xv = x.node()->value;
  std::vector<T> out(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const T* src = &xv[(o * extent + indices[k]) * inner];
      std::copy(src, src + inner, &out[(o * indices.size() + k) * inner]);
    }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [outer, inner, extent, indices](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t k = 0; k < indices.size(); ++k) {
                                      T* dst = &g[(o * extent + indices[k]) * inner];
                                      const T* src = &self.grad[(o * indices.size() + k) * inner];
                                      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                                    }
                                });
}

/// Copy of `base` [R, D] whose rows dst_rows[i] are replaced by src [S, D]
/// rows src_rows[i]. Destination rows must be distinct.
template <typename T>
Tensor<T> overwrite_rows(const Tensor<T>& base, const Tensor<T>& src, const std::vector<std::size_t>& dst_rows,
                         const std::vector<std::size_t>& src_rows) {
  if (base.rank() != 2 || src.rank() != 2 || base.dim(1) != src.dim(1)) {
    throw DimensionError("overwrite_rows: base " + shape_str(base.shape()) + " and src " + shape_str(src.shape()) + " must be [R, D] and [S, D]");
  }
  if (dst_rows.size() != src_rows.size()) throw ContractError("overwrite_rows: row lists differ in length");
  const std::size_t R = base.dim(0), S = src.dim(0), D = base.dim(1);
  std::vector<char> hit(R, 0);
  for (std::size_t i = 0; i < dst_rows.size(); ++i) {
    if (dst_rows[i] >= R || src_rows[i] >= S) throw DimensionError("overwrite_rows: row index out of range");
    if (hit[dst_rows[i]]) throw ContractError("overwrite_rows: destination row " + std::to_string(dst_rows[i]) + " repeated");
    hit[dst_rows[i]] = 1;
  }
  std::vector<T> out = base.node()->value;
  const auto& sv = src.node()->value;
  for (std::size_t i = 0; i < dst_rows.size(); ++i) {
    std::copy(&sv[src_rows[i] * D], &sv[src_rows[i] * D] + D, &out[dst_rows[i] * D]);
  }
  return detail::make_result<T>({R, D}, std::move(out), {base, src},
                                [D, hit, dst_rows, src_rows](detail::Node<T>& self) {
                                  detail::Node<T>& bn = *self.inputs[0];
                                  detail::Node<T>& sn = *self.inputs[1];
                                  if (bn.requires_grad) {
                                    auto& g = bn.grad_buffer();
                                    for (std::size_t r = 0; r < hit.size(); ++r) {
                                      if (hit[r]) continue;
                                      for (std::size_t d = 0; d < D; ++d) g[r * D + d] += self.grad[r * D + d];
                                    }
                                  }
                                  if (sn.requires_grad) {
                                    auto& g = sn.grad_buffer();
                                    for (std::size_t i = 0; i < dst_rows.size(); ++i)
                                      for (std::size_t d = 0; d < D; ++d) g[src_rows[i] * D + d] += self.grad[dst_rows[i] * D + d];
                                  }
                                });
}

/// Row lookup into `table` [C, E]; result is [indices.size(), E].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t C = table.dim(0);
  for (std::size_t i : indices) {
    if (i >= C) throw DataError("embedding index " + std::to_string(i) + " outside table of " + std::to_string(C) + " rows");
  }
  return index_select(table, 0, indices);
}

/// Dense product over the last two axes. The right operand is either rank 2
/// (shared across the left operand's leading axes) or has the same leading
/// axes as the left operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = detail::MatRM<T>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) fail();
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs && !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2)) fail();
  if (!shared_rhs && a.rank() != b.rank()) fail();
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);
  const T* av = a.node()->value.data();
  const T* bv = b.node()->value.data();
  const auto im = static_cast<Eigen::Index>(m), ik = static_cast<Eigen::Index>(k), in = static_cast<Eigen::Index>(n);
  if (shared_rhs) {
    const auto rows = static_cast<Eigen::Index>(batch * m);
    MMap(out.data(), rows, in).noalias() = CMap(av, rows, ik) * CMap(bv, ik, in);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MMap(out.data() + i * m * n, im, in).noalias() = CMap(av + i * m * k, im, ik) * CMap(bv + i * k * n, ik, in);
    }
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {a, b},
                                [batch, m, k, n, shared_rhs](detail::Node<T>& self) {
                                  detail::Node<T>& an = *self.inputs[0];
                                  detail::Node<T>& bn = *self.inputs[1];
                                  const auto im = static_cast<Eigen::Index>(m), ik = static_cast<Eigen::Index>(k),
                                             in = static_cast<Eigen::Index>(n);
                                  const T* gv = self.grad.data();
                                  if (shared_rhs) {
                                    const auto rows = static_cast<Eigen::Index>(batch * m);
                                    CMap gc(gv, rows, in);
                                    if (an.requires_grad) {
                                      MMap(an.grad_buffer().data(), rows, ik).noalias() += gc * CMap(bn.value.data(), ik, in).transpose();
                                    }
                                    if (bn.requires_grad) {
                                      MMap(bn.grad_buffer().data(), ik, in).noalias() += CMap(an.value.data(), rows, ik).transpose() * gc;
                                    }
                                    return;
                                  }
                                  for (std::size_t i = 0; i < batch; ++i) {
                                    CMap gc(gv + i * m * n, im, in);
                                    if (an.requires_grad) {
                                      MMap(an.grad_buffer().data() + i * m * k, im, ik).noalias() +=
                                          gc * CMap(bn.value.data() + i * k * n, ik, in).transpose();
                                    }
                                    if (bn.requires_grad) {
                                      MMap(bn.grad_buffer().data() + i * k * n, ik, in).noalias() +=
                                          CMap(an.value.data() + i * m * k, im, ik).transpose() * gc;
                                    }
                                  }
                                });
}

/// Softmax over the last axis, stabilised by subtracting the row maximum.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &xv[r * c];
    T* o = &out[r * c];
    const T mx = *std::max_element(in, in + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [rows, c](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = &self.value[r * c];
      const T* gy = &self.grad[r * c];
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &xv[r * c];
    const T mx = *std::max_element(in, in + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [rows, c](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = &self.value[r * c];
      const T* gy = &self.grad[r * c];
      T gsum = T(0);
      for (std::size_t j = 0; j < c; ++j) gsum += gy[j];
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += gy[j] - std::exp(y[j]) * gsum;
    }
  });
}

/// out[r] = x[r, targets[r]] over rows of the last axis.
template <typename T>
Tensor<T> pick_lastdim(const Tensor<T>& x, const std::vector<std::size_t>& targets) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  if (targets.size() != rows) {
    throw DimensionError("pick_lastdim: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  for (std::size_t t : targets) {
    if (t >= c) throw DataError("pick_lastdim: target " + std::to_string(t) + " outside " + std::to_string(c) + " classes");
  }
  const auto& xv = x.node()->value;
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = xv[r * c + targets[r]];
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x}, [c, targets](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < targets.size(); ++r) g[r * c + targets[r]] += self.grad[r];
  });
}

/// Layer normalisation over the last axis with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t c = x.dim(-1);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " must match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &xv[r * c];
    T mu = T(0);
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (in[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x, gain, bias}, [rows, c, xhat, rstd](detail::Node<T>& self) {
    detail::Node<T>& xn = *self.inputs[0];
    detail::Node<T>& gn = *self.inputs[1];
    detail::Node<T>& bn = *self.inputs[2];
    const auto& h = *xhat;
    if (gn.requires_grad) {
      auto& g = gn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j] * h[r * c + j];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    }
    if (xn.requires_grad) {
      auto& g = xn.grad_buffer();
      std::vector<T> dh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = T(0), mean_dh_h = T(0);
        for (std::size_t j = 0; j < c; ++j) {
          dh[j] = self.grad[r * c + j] * gn.value[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * h[r * c + j];
        }
        mean_dh /= static_cast<T>(c);
        mean_dh_h /= static_cast<T>(c);
        for (std::size_t j = 0; j < c; ++j) {
          g[r * c + j] += (*rstd)[r] * (dh[j] - mean_dh - h[r * c + j] * mean_dh_h);
        }
      }
    }
  });
}

}  // namespace multimae

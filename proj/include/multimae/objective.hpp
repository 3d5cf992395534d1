#pragma once

// Masked reconstruction losses.
//
// Every loss reads predictions only at positions the mask plan hides from
// the encoder. Each task loss is an error sum divided by the number of
// contributing elements (masked patch values, excluding invalid depth
// pixels; masked pixels for cross-entropy). A task with nothing to score
// contributes zero and is left out of the equal-weight mean.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "multimae/mask.hpp"
#include "multimae/modality.hpp"
#include "multimae/ops.hpp"

namespace multimae {

inline constexpr double kPatchStdEps = 1e-6;

template <typename T>
using Values = std::span<const std::type_identity_t<T>>;

/// Per-patch standardisation over the last axis with population std.
template <typename T>
std::vector<T> per_patch_standardize_values(std::span<const T> patches, std::size_t patch_dim, double eps = kPatchStdEps) {
  if (patch_dim < 2 || patches.size() % patch_dim != 0) {
    throw DimensionError("per-patch standardisation needs patch dim >= 2 dividing " + std::to_string(patches.size()));
  }
  std::vector<T> out(patches.size());
  for (std::size_t p = 0; p < patches.size() / patch_dim; ++p) {
    const T* in = &patches[p * patch_dim];
    double mu = 0.0;
    for (std::size_t j = 0; j < patch_dim; ++j) mu += in[j];
    mu /= static_cast<double>(patch_dim);
    double var = 0.0;
    for (std::size_t j = 0; j < patch_dim; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(patch_dim);
    const double denom = std::sqrt(var) + eps;
    for (std::size_t j = 0; j < patch_dim; ++j) out[p * patch_dim + j] = static_cast<T>((in[j] - mu) / denom);
  }
  return out;
}

template <typename T>
Tensor<T> per_patch_standardize(const Tensor<T>& patches) {
  return Tensor<T>::from_data(patches.shape(), per_patch_standardize_values<T>(patches.data(), patches.dim(-1)));
}

/// Flattened rows (b * grid2 + position) of tokens hidden from the encoder
/// for modality m. A modality absent from the plan is fully masked.
inline std::vector<std::size_t> masked_rows(const std::vector<MaskPlan>& plans, Modality m, std::size_t grid2) {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    const std::size_t s = plans[b].slot(m);
    std::vector<char> visible(grid2, 0);
    if (s != MaskPlan::npos) {
      for (std::size_t i : plans[b].visible[s]) visible.at(i) = 1;
    }
    for (std::size_t p = 0; p < grid2; ++p) {
      if (!visible[p]) rows.push_back(b * grid2 + p);
    }
  }
  return rows;
}

/// Unnormalised error sum of one task and the element count it covers.
template <typename T>
struct TaskTerm {
  Task task = Task::rgb;
  Tensor<T> error_sum;
  double count = 0.0;
};

namespace detail {

template <typename T>
Tensor<T> select_masked(const Tensor<T>& pred, const std::vector<std::size_t>& rows) {
  const std::size_t P = pred.dim(-1);
  return index_select(reshape(pred, {pred.numel() / P, P}), 0, rows);
}

template <typename V>
std::vector<V> select_rows_values(std::span<const V> values, std::size_t width, const std::vector<std::size_t>& rows) {
  std::vector<V> out;
  out.reserve(rows.size() * width);
  for (std::size_t r : rows) {
    if ((r + 1) * width > values.size()) throw DimensionError("masked row outside target tensor");
    out.insert(out.end(), values.begin() + static_cast<std::ptrdiff_t>(r * width),
               values.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  return out;
}

template <typename T>
TaskTerm<T> masked_error_term(Task task, const Tensor<T>& pred, Values<T> target, Values<T> weights,
                              const std::vector<std::size_t>& rows, bool absolute) {
  if (pred.numel() != target.size()) {
    throw DimensionError("prediction " + shape_str(pred.shape()) + " and target of " + std::to_string(target.size()) +
                         " values differ");
  }
  if (!weights.empty() && weights.size() != target.size()) throw DimensionError("loss weights do not match target");
  TaskTerm<T> term;
  term.task = task;
  double count = 0.0;
  const std::size_t P = pred.dim(-1);
  std::vector<T> w_sel;
  if (!weights.empty()) {
    w_sel = select_rows_values(weights, P, rows);
    for (T w : w_sel) count += static_cast<double>(w);
  } else {
    count = static_cast<double>(rows.size() * P);
  }
  if (rows.empty() || count == 0.0) {
    term.error_sum = Tensor<T>::scalar(T(0));
    term.count = 0.0;
    return term;
  }
  auto sel = select_masked(pred, rows);
  auto tgt = Tensor<T>::from_data(sel.shape(), select_rows_values(target, P, rows));
  auto diff = sub(sel, tgt);
  auto err = absolute ? abs(diff) : mul(diff, diff);
  if (!w_sel.empty()) err = mul(err, Tensor<T>::from_data(sel.shape(), std::move(w_sel)));
  term.error_sum = sum(err);
  term.count = count;
  return term;
}

}  // namespace detail

/// Squared error summed over masked rows; `weights` (optional, same size as
/// target) excludes entries with weight 0.
template <typename T>
TaskTerm<T> masked_mse_term(Task task, const Tensor<T>& pred, Values<T> target,
                            const std::vector<std::size_t>& rows, Values<T> weights = {}) {
  return detail::masked_error_term(task, pred, target, weights, rows, false);
}

template <typename T>
TaskTerm<T> masked_l1_term(Task task, const Tensor<T>& pred, Values<T> target,
                           const std::vector<std::size_t>& rows, Values<T> weights = {}) {
  return detail::masked_error_term(task, pred, target, weights, rows, true);
}

/// Cross-entropy over the pixels of masked patches. `logits` is
/// [B, grid2, pixels_per_patch * classes] (pixel-major, class-minor) and
/// `classes` is [B, grid2, pixels_per_patch].
template <typename T>
TaskTerm<T> masked_cross_entropy_term(const Tensor<T>& logits, std::span<const std::uint8_t> classes,
                                      std::size_t num_classes, const std::vector<std::size_t>& rows) {
  const std::size_t P = logits.dim(-1);
  if (num_classes == 0 || P % num_classes != 0) throw DimensionError("logit width not a multiple of the class count");
  const std::size_t pixels = P / num_classes;
  if (classes.size() * num_classes != logits.numel()) {
    throw DimensionError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(classes.size()) + " target pixels");
  }
  for (std::uint8_t c : classes) {
    if (c >= num_classes) throw DataError("semseg target class " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  TaskTerm<T> term;
  term.task = Task::semseg;
  if (rows.empty()) {
    term.error_sum = Tensor<T>::scalar(T(0));
    return term;
  }
  auto sel = reshape(detail::select_masked(logits, rows), {rows.size() * pixels, num_classes});
  const auto tgt8 = detail::select_rows_values(classes, pixels, rows);
  std::vector<std::size_t> tgt(tgt8.begin(), tgt8.end());
  term.error_sum = scale(sum(pick_lastdim(log_softmax_lastdim(sel), tgt)), T(-1));
  term.count = static_cast<double>(tgt.size());
  return term;
}

/// Normalised task loss (error_sum / count, or 0 when count is 0).
template <typename T>
Tensor<T> task_loss(const TaskTerm<T>& term, std::optional<double> denominator = std::nullopt) {
  const double d = denominator.value_or(term.count);
  if (d == 0.0) return Tensor<T>::scalar(T(0));
  return scale(term.error_sum, static_cast<T>(1.0 / d));
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, Values<T> target, const std::vector<MaskPlan>& plans, Modality m) {
  const std::size_t grid2 = pred.dim(-2);
  return task_loss(masked_mse_term(Task::rgb, pred, target, masked_rows(plans, m, grid2)));
}

template <typename T>
Tensor<T> masked_l1(const Tensor<T>& pred, Values<T> target, const std::vector<MaskPlan>& plans, Modality m,
                    Values<T> weights = {}) {
  const std::size_t grid2 = pred.dim(-2);
  return task_loss(masked_l1_term(Task::depth, pred, target, masked_rows(plans, m, grid2), weights));
}

template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> classes, std::size_t num_classes,
                               const std::vector<MaskPlan>& plans) {
  const std::size_t grid2 = logits.dim(-2);
  return task_loss(masked_cross_entropy_term(logits, classes, num_classes, masked_rows(plans, Modality::semseg, grid2)));
}

struct LossReport {
  std::size_t step = 0;
  double lr = 0.0;
  std::vector<Task> tasks;
  std::vector<double> losses;        // per task, same order as tasks
  std::vector<double> masked_counts; // elements scored per task
  double total = 0.0;

  /// One structured line: "step=<n> lr=<x> <task>=<loss>... total=<x>".
  std::string to_line() const {
    std::ostringstream os;
    os.precision(9);
    os << std::scientific;
    os << "step=" << step << " lr=" << lr;
    for (std::size_t i = 0; i < tasks.size(); ++i) os << ' ' << task_name(tasks[i]) << '=' << losses[i];
    os << " total=" << total;
    return os.str();
  }
};

/// Equal-weight mean over tasks that scored at least one element. With
/// `denominators` the per-task normalisers (and the set of present tasks)
/// come from the caller, which lets micro-batches share full-batch scaling.
template <typename T>
Tensor<T> total_loss(const std::vector<TaskTerm<T>>& terms, LossReport* report = nullptr,
                     const std::vector<double>* denominators = nullptr) {
  if (terms.empty()) throw ContractError("total_loss needs at least one task");
  std::vector<Tensor<T>> present;
  if (report) {
    report->tasks.clear();
    report->losses.clear();
    report->masked_counts.clear();
  }
  std::size_t num_present = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double d = denominators ? (*denominators)[i] : terms[i].count;
    if (d > 0.0) ++num_present;
  }
  Tensor<T> acc;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double d = denominators ? (*denominators)[i] : terms[i].count;
    auto l = task_loss(terms[i], d);
    if (report) {
      report->tasks.push_back(terms[i].task);
      report->losses.push_back(static_cast<double>(l.item()));
      report->masked_counts.push_back(terms[i].count);
    }
    if (d == 0.0) continue;
    acc = acc.defined() ? add(acc, l) : l;
  }
  Tensor<T> total = num_present == 0 ? Tensor<T>::scalar(T(0)) : scale(acc, static_cast<T>(1.0 / static_cast<double>(num_present)));
  if (report) report->total = static_cast<double>(total.item());
  return total;
}

}  // namespace multimae

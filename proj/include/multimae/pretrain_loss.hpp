#pragma once

// Task terms of a pre-training forward pass against a prepared batch.

#include <vector>

#include "multimae/batch.hpp"
#include "multimae/model.hpp"
#include "multimae/objective.hpp"

namespace multimae {

template <typename T>
std::vector<T> as_values(const std::vector<float>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T>
TaskTerm<T> pretrain_term(Task task, const Tensor<T>& pred, const PreparedBatch& batch, const ModelConfig& config,
                          const std::vector<MaskPlan>& plans) {
  const std::size_t G2 = batch.grid * batch.grid;
  const auto rows = masked_rows(plans, task_source(task), G2);
  switch (task) {
    case Task::rgb: {
      const auto target = as_values<T>(batch.rgb);
      return masked_mse_term<T>(task, pred, target, rows);
    }
    case Task::rgb_standardized: {
      const auto target = as_values<T>(batch.rgb_standardized);
      return masked_mse_term<T>(task, pred, target, rows);
    }
    case Task::depth: {
      const auto target = as_values<T>(batch.depth);
      const auto weight = as_values<T>(batch.depth_weight);
      return masked_l1_term<T>(task, pred, target, rows, weight);
    }
    case Task::semseg: return masked_cross_entropy_term<T>(pred, batch.semseg_patches, config.num_classes, rows);
  }
  throw ConfigError("unknown task");
}

template <typename T>
std::vector<TaskTerm<T>> pretrain_terms(const PretrainOutput<T>& out, const PreparedBatch& batch,
                                        const ModelConfig& config, const std::vector<MaskPlan>& plans) {
  std::vector<TaskTerm<T>> terms;
  for (std::size_t i = 0; i < out.tasks.size(); ++i) {
    terms.push_back(pretrain_term(out.tasks[i], out.predictions[i], batch, config, plans));
  }
  return terms;
}

}  // namespace multimae

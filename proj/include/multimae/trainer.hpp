#pragma once

// Pre-training loop.
//
// Every random choice of step s derives from (seed, s) or (seed, epoch), so a
// run resumed from a checkpoint at step k replays exactly what an
// uninterrupted run does from step k onwards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/datakit.hpp"
#include "multimae/optim.hpp"
#include "multimae/pretrain_loss.hpp"

namespace multimae {

struct TrainConfig {
  double base_lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 2000;
  std::size_t warmup_epochs = 200;
  double warmup_lr = 1e-6;
  std::optional<double> alpha = 1.0;
  std::size_t num_visible = 16;
  std::uint64_t seed = 0;
  std::size_t accumulation = 1;       // micro-batches per optimizer step
  bool augment = true;
  std::size_t checkpoint_every = 0;   // epochs; 0 = only at the end

  void validate() const {
    if (!(base_lr > 0.0) || !(warmup_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be smaller than epochs");
    if (num_visible == 0) throw ConfigError("num_visible must be >= 1");
    if (accumulation == 0 || accumulation > batch_size) throw ConfigError("accumulation must be in [1, batch_size]");
    if (alpha && !(*alpha > 0.0)) throw ConfigError("alpha must be positive or 'equal'");
  }

  AdamWConfig adamw() const { return {weight_decay, beta1, beta2, adam_eps}; }
  double peak_lr() const { return effective_lr(base_lr, batch_size); }

  bool operator==(const TrainConfig&) const = default;
};

/// Step geometry for a dataset of n samples: one epoch is floor(n / B)
/// batches of B (at least one batch; B is clipped to n).
struct Schedule {
  std::size_t batch = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  double peak_lr = 0.0;
  double warmup_lr = 0.0;

  double lr(std::size_t step) const { return lr_at(step, total_steps, warmup_steps, peak_lr, warmup_lr); }
};

inline Schedule make_schedule(const TrainConfig& config, std::size_t dataset_size) {
  if (dataset_size == 0) throw DataError("training needs at least one sample");
  Schedule s;
  s.batch = std::min(config.batch_size, dataset_size);
  s.steps_per_epoch = std::max<std::size_t>(1, dataset_size / s.batch);
  s.total_steps = config.epochs * s.steps_per_epoch;
  s.warmup_steps = config.warmup_epochs * s.steps_per_epoch;
  s.peak_lr = config.peak_lr();
  s.warmup_lr = config.warmup_lr;
  return s;
}

inline DirichletParams mask_params(const TrainConfig& train, const ModelConfig& model) {
  DirichletParams p;
  p.alpha = train.alpha;
  p.num_modalities = model.inputs.size();
  p.num_visible = train.num_visible;
  return p;
}

/// Sample indices of every batch in one epoch.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t seed, std::size_t epoch, std::size_t n,
                                                           const Schedule& s) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, {hash_name("epoch_order"), epoch});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < s.steps_per_epoch; ++b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b * s.batch),
                     order.begin() + static_cast<std::ptrdiff_t>((b + 1) * s.batch));
  }
  return out;
}

inline std::uint64_t mask_seed(std::uint64_t seed, std::size_t step, std::size_t slot) {
  return Rng::derive(seed, {hash_name("mask"), step, slot}).next_u64();
}

/// Elements each task scores for one micro-batch, without running the model.
inline double task_count(Task task, const PreparedBatch& batch, const ModelConfig& config,
                         const std::vector<MaskPlan>& plans) {
  const std::size_t G2 = batch.grid * batch.grid;
  const auto rows = masked_rows(plans, task_source(task), G2);
  switch (task) {
    case Task::rgb:
    case Task::rgb_standardized: return static_cast<double>(rows.size() * config.modality(Modality::rgb).patch_values());
    case Task::depth: {
      const std::size_t P = config.task_patch_dim(task);
      double n = 0.0;
      for (std::size_t r : rows)
        for (std::size_t k = 0; k < P; ++k) n += batch.depth_weight[r * P + k];
      return n;
    }
    case Task::semseg: return static_cast<double>(rows.size() * config.semseg_patch_size * config.semseg_patch_size);
  }
  return 0.0;
}

/// Forward, backward and optimizer update on one batch. `plans[i]` belongs
/// to `samples[i]`. The batch is split into `accumulation` micro-batches
/// whose losses share the full-batch normalisers, so the summed gradient
/// equals that of the whole batch.
inline LossReport train_step(MultiMae<float>& model, AdamWState<float>& adam, const std::vector<Sample>& samples,
                             const std::vector<MaskPlan>& plans, double lr, const AdamWConfig& opt,
                             std::size_t accumulation, std::size_t step) {
  const ModelConfig& config = model.config();
  const std::size_t B = samples.size();
  if (plans.size() != B) throw ContractError("one mask plan per sample required");
  const std::size_t micro = std::min(accumulation, B);

  std::vector<PreparedBatch> batches;
  std::vector<std::vector<MaskPlan>> micro_plans;
  for (std::size_t k = 0; k < micro; ++k) {
    const std::size_t lo = k * B / micro, hi = (k + 1) * B / micro;
    batches.push_back(prepare_batch(std::span(samples).subspan(lo, hi - lo), config));
    micro_plans.emplace_back(plans.begin() + static_cast<std::ptrdiff_t>(lo), plans.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  std::vector<double> denominators(config.tasks.size(), 0.0);
  for (std::size_t k = 0; k < micro; ++k) {
    for (std::size_t t = 0; t < config.tasks.size(); ++t) {
      denominators[t] += task_count(config.tasks[t], batches[k], config, micro_plans[k]);
    }
  }

  LossReport report;
  report.step = step;
  report.lr = lr;
  report.tasks = config.tasks;
  report.losses.assign(config.tasks.size(), 0.0);
  report.masked_counts = denominators;
  zero_grads(model.params());
  for (std::size_t k = 0; k < micro; ++k) {
    const auto out = model.forward_pretrain(model.tokenize(batches[k]), micro_plans[k]);
    LossReport part;
    auto loss = total_loss(pretrain_terms(out, batches[k], config, micro_plans[k]), &part, &denominators);
    for (std::size_t t = 0; t < config.tasks.size(); ++t) report.losses[t] += part.losses[t];
    report.total += part.total;
    if (!std::isfinite(part.total)) break;
    loss.backward();
  }
  if (!std::isfinite(report.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << " (lr " << lr << "):";
    for (std::size_t t = 0; t < report.tasks.size(); ++t) os << ' ' << task_name(report.tasks[t]) << '=' << report.losses[t];
    os << " total=" << report.total;
    throw NumericError(os.str());
  }
  // Parameters the mask plans cut out of the graph (e.g. the decoder of a
  // task with nothing masked) take an explicit zero gradient.
  for (auto& [name, p] : model.params()) {
    if (!p.has_grad()) p.mutable_grad();
  }
  adamw_step(model.params(), adam, lr, opt);
  return report;
}

struct TrainHooks {
  std::function<void(const LossReport&)> on_step;
  /// Called after the last step of each epoch with the number of completed steps.
  std::function<void(std::size_t epoch, std::size_t steps_done)> on_epoch_end;
};

/// Runs steps [start_step, stop_step) (stop defaults to the schedule's end).
/// `adam.step` must equal start_step.
inline std::vector<LossReport> train_loop(MultiMae<float>& model, AdamWState<float>& adam,
                                          const std::vector<Sample>& data, const TrainConfig& config,
                                          const TrainHooks& hooks = {},
                                          std::optional<std::size_t> stop_step = std::nullopt) {
  config.validate();
  const Schedule sched = make_schedule(config, data.size());
  const std::size_t start = adam.step;
  const std::size_t stop = std::min(stop_step.value_or(sched.total_steps), sched.total_steps);
  const DirichletParams dparams = mask_params(config, model.config());
  const auto caps = model.config().caps();
  AugmentParams aug;
  aug.output_resolution = model.config().resolution;

  std::vector<LossReport> log;
  std::vector<std::vector<std::size_t>> batches;
  std::size_t batches_epoch = std::numeric_limits<std::size_t>::max();
  for (std::size_t step = start; step < stop; ++step) {
    const std::size_t epoch = step / sched.steps_per_epoch;
    if (epoch != batches_epoch) {
      batches = epoch_batches(config.seed, epoch, data.size(), sched);
      batches_epoch = epoch;
    }
    const auto& idx = batches[step % sched.steps_per_epoch];
    std::vector<Sample> samples;
    std::vector<MaskPlan> plans;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (config.augment) {
        Rng rng = Rng::derive(config.seed, {hash_name("augment"), step, i});
        samples.push_back(random_resized_crop_flip(data[idx[i]], aug, rng));
      } else {
        samples.push_back(data[idx[i]]);
      }
      plans.push_back(build_mask_plan(dparams, model.config().inputs, caps, mask_seed(config.seed, step, i)));
    }
    log.push_back(train_step(model, adam, samples, plans, sched.lr(step), config.adamw(), config.accumulation, step));
    if (hooks.on_step) hooks.on_step(log.back());
    if ((step + 1) % sched.steps_per_epoch == 0 && hooks.on_epoch_end) hooks.on_epoch_end(epoch, step + 1);
  }
  return log;
}

}  // namespace multimae

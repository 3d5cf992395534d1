#pragma once

// Invariant suites runnable outside the unit tests: finite-difference
// gradients, mask statistics, loss locality and ViT export equivalence.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/model_gradcheck.hpp"

namespace multimae {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;

  std::string to_line() const { return std::string(passed ? "PASS " : "FAIL ") + suite + "/" + name + " " + detail; }
};

using CheckList = std::vector<CheckResult>;

inline bool all_passed(const CheckList& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

struct GradSuiteOptions {
  double tolerance = 1e-4;
  std::size_t model_entries_per_leaf = 8;
};

namespace detail {

inline Tensor<double> leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng = Rng::derive(seed, {hash_name("check.leaf")});
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v), true);
}

/// Random linear functional of y, so every output entry carries gradient.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 99) {
  Rng rng = Rng::derive(seed, {hash_name("check.probe")});
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor<double>::from_data(y.shape(), std::move(w))));
}

inline CheckResult from_gradcheck(const GradCheckResult& r) {
  std::ostringstream os;
  os << std::setprecision(3) << "entries=" << r.entries_checked << " max_rel_err=" << r.max_rel_error;
  if (!r.passed) os << " worst=" << r.worst;
  return {"grads", r.name, r.passed && r.entries_checked > 0, os.str()};
}

inline ParamMap<double> block_params(std::size_t dim, std::uint64_t seed) {
  std::vector<ParamSpec> specs;
  nn::add_block(specs, "blk", dim, 2);
  auto p = init_params<double>(specs, seed);
  Rng rng = Rng::derive(seed, {hash_name("check.block")});
  for (auto& [name, t] : p)
    for (auto& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
  return p;
}

inline std::vector<Tensor<double>> values_of(const ParamMap<double>& p) {
  std::vector<Tensor<double>> out;
  for (const auto& [n, t] : p) out.push_back(t);
  return out;
}

}  // namespace detail

/// Every differentiable op, the building blocks, the loss terms, and the full
/// model at D_enc = 32, depth 2, 16 px inputs.
inline CheckList gradient_checks(const GradSuiteOptions& options = {}) {
  using detail::leaf;
  using detail::probe;
  using T = Tensor<double>;
  CheckList out;
  GradCheckOptions go;
  go.tolerance = options.tolerance;
  auto run = [&](const std::string& name, std::vector<T> leaves, const std::function<T()>& fn) {
    out.push_back(detail::from_gradcheck(check_gradients(name, std::move(leaves), {}, fn, go)));
  };

  const auto a = leaf({2, 3, 4}, 1), b = leaf({2, 3, 4}, 2), row = leaf({4}, 3), table = leaf({3, 4}, 4);
  run("add", {a, b}, [&] { return probe(add(a, b)); });
  run("sub", {a, b}, [&] { return probe(sub(a, b)); });
  run("mul", {a, b}, [&] { return probe(mul(a, b)); });
  run("add_broadcast", {a, row, table}, [&] { return probe(add(add(a, row), table)); });
  run("mul_broadcast", {a, row}, [&] { return probe(mul(a, row)); });
  run("scale", {a}, [&] { return probe(scale(a, -1.7)); });
  run("add_scalar", {a}, [&] { return probe(add_scalar(a, 0.3)); });
  const auto kinked = T::from_data({4}, {-1.5, -0.2, 0.3, 2.0}, true);
  run("abs", {kinked}, [&] { return probe(abs(kinked)); });
  const auto g = leaf({12}, 5, -3.0, 3.0);
  run("gelu", {g}, [&] { return probe(gelu(g)); });
  run("sum", {a}, [&] { return sum(mul(a, a)); });
  run("mean", {a}, [&] { return mean(mul(a, a)); });
  run("sum_lastdim", {a}, [&] { return probe(sum_lastdim(a)); });
  run("reshape", {a}, [&] { return probe(reshape(a, {6, 4})); });
  run("transpose_last2", {a}, [&] { return probe(transpose_last2(a)); });
  const auto q = leaf({2, 3, 2, 5}, 6);
  run("permute_0213", {q}, [&] { return probe(permute_0213(q)); });
  const auto c = leaf({2, 5, 4}, 7);
  run("concat", {a, c}, [&] { return probe(concat<double>({a, c}, 1)); });
  run("index_select", {c}, [&] { return probe(index_select(c, 1, {4, 0, 4})); });
  const auto base = leaf({6, 3}, 8), src = leaf({2, 3}, 9);
  run("overwrite_rows", {base, src}, [&] { return probe(overwrite_rows(base, src, {5, 1}, {0, 1})); });
  const auto emb = leaf({7, 4}, 10);
  run("embedding", {emb}, [&] { return probe(embedding(emb, {6, 2, 2, 0})); });
  const auto ma = leaf({2, 3, 4}, 11), mb = leaf({2, 4, 5}, 12), mw = leaf({4, 5}, 13);
  run("matmul_batched", {ma, mb}, [&] { return probe(matmul(ma, mb)); });
  run("matmul_shared", {ma, mw}, [&] { return probe(matmul(ma, mw)); });
  const auto s = leaf({5, 7}, 14, -3.0, 3.0);
  run("softmax", {s}, [&] { return probe(softmax_lastdim(s)); });
  run("log_softmax", {s}, [&] { return probe(log_softmax_lastdim(s)); });
  run("pick", {s}, [&] { return probe(pick_lastdim(log_softmax_lastdim(s), {0, 6, 3, 3, 1})); });
  const auto x = leaf({3, 8}, 15, -2.0, 2.0), gain = leaf({8}, 16, 0.5, 1.5), bias = leaf({8}, 17);
  run("layer_norm", {x, gain, bias}, [&] { return probe(layer_norm(x, gain, bias, 1e-6)); });

  const auto bp = detail::block_params(8, 18);
  const auto tok = leaf({2, 3, 8}, 19), ctx = leaf({2, 5, 8}, 20);
  auto with = [](std::vector<T> v, const T& t) {
    v.push_back(t);
    return v;
  };
  run("linear", with(detail::values_of(bp), tok), [&] { return probe(nn::linear(tok, bp, "blk.attn.q")); });
  run("cross_attention", with(with(detail::values_of(bp), tok), ctx),
      [&] { return probe(nn::attention(tok, ctx, bp, "blk.attn", 2)); });
  run("block", with(detail::values_of(bp), tok), [&] { return probe(nn::block(tok, bp, "blk", 2, 1e-6)); });

  const auto patches = leaf({2, 4, 6}, 21);
  ParamMap<double> proj;
  const auto pw = leaf({6, 8}, 22), pb = leaf({8}, 23);
  proj.emplace("input.depth.weight", pw);
  proj.emplace("input.depth.bias", pb);
  run("project_modality", {pw, pb, patches}, [&] { return probe(project_modality(patches, Modality::depth, proj, 2)); });

  MaskPlan p0, p1;
  p0.modalities = p1.modalities = {Modality::rgb};
  p0.visible = {{1}};
  p0.counts = {1};
  p1.visible = {{0, 3}};
  p1.counts = {2};
  const std::vector<MaskPlan> plans{p0, p1};
  const auto pred = leaf({2, 4, 3}, 24);
  std::vector<double> target(24), weights(24);
  {
    Rng rng(25);
    for (auto& v : target) v = rng.uniform(-1.0, 1.0);
    for (auto& v : weights) v = rng.bernoulli(0.8) ? 1.0 : 0.0;
  }
  const auto rows = masked_rows(plans, Modality::rgb, 4);
  run("masked_mse", {pred}, [&] { return task_loss(masked_mse_term<double>(Task::rgb, pred, target, rows)); });
  run("masked_l1", {pred}, [&] { return task_loss(masked_l1_term<double>(Task::depth, pred, target, rows, weights)); });
  const auto logits = leaf({2, 4, 2 * 5}, 26, -2.0, 2.0);
  std::vector<std::uint8_t> classes(16);
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<std::uint8_t>((i * 7) % 5);
  run("masked_cross_entropy", {logits}, [&] { return task_loss(masked_cross_entropy_term(logits, classes, 5, rows)); });

  const auto model = model_gradient_check(gradcheck_model_config(), options.model_entries_per_leaf, options.tolerance);
  out.push_back(detail::from_gradcheck(model));
  return out;
}

inline CheckList mask_checks() {
  CheckList out;
  {
    Rng rng(2024);
    DirichletParams p;
    const int n = 100000;
    std::vector<double> mean(3, 0.0), sq(3, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto l = sample_proportions(p, rng);
      for (int m = 0; m < 3; ++m) {
        mean[m] += l[m];
        sq[m] += l[m] * l[m];
      }
    }
    double worst_mean = 0.0, worst_var = 0.0;
    for (int m = 0; m < 3; ++m) {
      const double mu = mean[m] / n;
      worst_mean = std::max(worst_mean, std::abs(mu - 1.0 / 3.0));
      worst_var = std::max(worst_var, std::abs(sq[m] / n - mu * mu - 1.0 / 18.0));
    }
    std::ostringstream os;
    os << std::setprecision(3) << "draws=" << n << " max|mean-1/3|=" << worst_mean << " max|var-1/18|=" << worst_var;
    out.push_back({"mask", "dirichlet_alpha1_moments", worst_mean <= 0.005 && worst_var <= 0.003, os.str()});
  }
  {
    DirichletParams p;
    p.alpha = std::nullopt;
    p.num_visible = 98;
    const std::vector<Modality> mods{Modality::rgb, Modality::depth, Modality::semseg};
    const std::vector<std::size_t> caps(3, 196);
    const auto plan = build_mask_plan(p, mods, caps, 7);
    const bool ok = plan.counts == std::vector<std::size_t>{33, 33, 32};
    out.push_back({"mask", "equal_alpha_98", ok,
                   "counts=" + std::to_string(plan.counts[0]) + "," + std::to_string(plan.counts[1]) + "," +
                       std::to_string(plan.counts[2])});
  }
  {
    bool ok = true;
    Rng rng(3);
    DirichletParams p;
    p.alpha = 0.5;
    p.num_visible = 40;
    const std::vector<Modality> mods{Modality::rgb, Modality::depth, Modality::semseg};
    const std::vector<std::size_t> caps(3, 16);
    for (int i = 0; i < 500 && ok; ++i) {
      const auto plan = build_mask_plan(p, mods, caps, rng.next_u64());
      std::size_t total = 0;
      for (std::size_t m = 0; m < 3; ++m) {
        total += plan.counts[m];
        ok = ok && plan.counts[m] <= 16 && plan.visible[m].size() == plan.counts[m];
        ok = ok && std::is_sorted(plan.visible[m].begin(), plan.visible[m].end()) &&
             std::adjacent_find(plan.visible[m].begin(), plan.visible[m].end()) == plan.visible[m].end();
      }
      ok = ok && total == 40 && mask_plan_from_text(mask_plan_to_text(plan)) == plan;
    }
    out.push_back({"mask", "plan_budget_caps_roundtrip", ok, "plans=500 budget=40 cap=16"});
  }
  return out;
}

/// Perturbing predictions or targets at visible positions leaves every loss
/// bit unchanged, and d loss / d prediction is exactly zero there.
inline CheckList loss_checks() {
  CheckList out;
  ModelConfig config = gradcheck_model_config();
  config.resolution = 32;
  config.num_classes = 9;
  const std::size_t G2 = config.tokens_per_modality();
  std::vector<Sample> samples;
  std::vector<MaskPlan> plans;
  for (std::size_t b = 0; b < 3; ++b) {
    samples.push_back(gradcheck_sample(config.resolution, 40 + b, config.num_classes));
    std::vector<double> lambda{0.5, 0.3, 0.2};
    std::rotate(lambda.begin(), lambda.begin() + static_cast<std::ptrdiff_t>(b), lambda.end());
    plans.push_back(mask_plan_from_proportions(lambda, config.inputs, config.caps(), 5, 50 + b));
  }
  const PreparedBatch batch = prepare_batch(samples, config);

  PretrainOutput<double> pred;
  pred.tasks = config.tasks;
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    pred.predictions.push_back(detail::leaf({3, G2, config.task_patch_dim(config.tasks[t])}, 60 + t));
  }
  auto loss_of = [&](const PretrainOutput<double>& o, const PreparedBatch& pb) {
    return total_loss(pretrain_terms(o, pb, config, plans));
  };
  auto base = loss_of(pred, batch);
  const double reference = base.item();
  base.backward();

  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    const Task task = config.tasks[t];
    const std::size_t P = config.task_patch_dim(task);
    const auto& p = pred.predictions[t];
    std::vector<std::size_t> visible_rows;
    for (std::size_t b = 0; b < plans.size(); ++b) {
      const auto k = plans[b].slot(task_source(task));
      for (std::size_t i : plans[b].visible[k]) visible_rows.push_back(b * G2 + i);
    }
    double grad_at_visible = 0.0, grad_elsewhere = 0.0;
    for (std::size_t r = 0; r < 3 * G2; ++r) {
      const bool vis = std::find(visible_rows.begin(), visible_rows.end(), r) != visible_rows.end();
      for (std::size_t k = 0; k < P; ++k) (vis ? grad_at_visible : grad_elsewhere) += std::abs(p.grad()[r * P + k]);
    }
    out.push_back({"losses", "zero_grad_at_visible." + std::string(task_name(task)),
                   grad_at_visible == 0.0 && grad_elsewhere > 0.0,
                   "sum|grad| visible=" + std::to_string(grad_at_visible) + " masked=" + std::to_string(grad_elsewhere)});

    PretrainOutput<double> moved = pred;
    std::vector<double> values(p.data().begin(), p.data().end());
    for (std::size_t r : visible_rows)
      for (std::size_t k = 0; k < P; ++k) values[r * P + k] += 3.0 + 0.1 * static_cast<double>(k);
    moved.predictions[t] = Tensor<double>::from_data(p.shape(), std::move(values));
    const double pred_moved = loss_of(moved, batch).item();

    PreparedBatch shifted = batch;
    for (std::size_t r : visible_rows) {
      switch (task) {
        case Task::rgb:
          for (std::size_t k = 0; k < P; ++k) shifted.rgb[r * P + k] += 1.5f;
          break;
        case Task::rgb_standardized:
          for (std::size_t k = 0; k < P; ++k) shifted.rgb_standardized[r * P + k] *= -2.0f;
          break;
        case Task::depth:
          for (std::size_t k = 0; k < P; ++k) shifted.depth[r * P + k] -= 4.0f;
          break;
        case Task::semseg: {
          const std::size_t q = P / config.num_classes;
          for (std::size_t k = 0; k < q; ++k) {
            auto& cls = shifted.semseg_patches[r * q + k];
            cls = static_cast<std::uint8_t>((cls + 1) % config.num_classes);
          }
          break;
        }
      }
    }
    const double target_moved = loss_of(pred, shifted).item();
    const bool same = std::bit_cast<std::uint64_t>(pred_moved) == std::bit_cast<std::uint64_t>(reference) &&
                      std::bit_cast<std::uint64_t>(target_moved) == std::bit_cast<std::uint64_t>(reference);
    std::ostringstream os;
    os << std::setprecision(17) << "loss=" << reference << " pred_perturbed=" << pred_moved
       << " target_perturbed=" << target_moved;
    out.push_back({"losses", "visible_perturbation_invisible." + std::string(task_name(task)), same, os.str()});
  }
  return out;
}

/// Exported single-modal encoder against the multi-modal encoder restricted
/// to the same modality.
inline CheckList export_checks(double tolerance = 1e-6) {
  CheckList out;
  ModelConfig config = ModelConfig::desk();
  config.encoder = {32, 2, 4, 4};
  config.decoder = {32, 1, 2, 4};
  const auto model = MultiMae<float>::initialize(config, 19);
  std::vector<Sample> samples;
  for (std::size_t b = 0; b < 2; ++b) samples.push_back(gradcheck_sample(config.resolution, 70 + b, config.num_classes));
  const auto batch = prepare_batch(samples, config);
  for (Modality m : config.inputs) {
    const auto vit = export_single_modal_vit(model.params(), m);
    const auto exported = vit_forward(vit, config, m, batch);
    const auto restricted = model.forward_transfer(tokenize(batch, config, model.params(), {m}));
    double worst = 0.0;
    bool ok = exported.shape() == restricted.shape();
    for (std::size_t i = 0; ok && i < exported.numel(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(exported.data()[i]) - restricted.data()[i]));
    }
    ok = ok && worst <= tolerance && vit.size() < model.params().size();
    if (m == Modality::semseg) ok = ok && vit.count("input.semseg.class_embed");
    std::ostringstream os;
    os << std::setprecision(3) << "max|diff|=" << worst << " params " << vit.size() << "/" << model.params().size();
    out.push_back({"export", "vit_equivalence." + std::string(modality_name(m)), ok, os.str()});
  }
  return out;
}

inline const std::vector<std::string>& check_suite_names() {
  static const std::vector<std::string> names{"grads", "mask", "losses", "export", "all"};
  return names;
}

inline CheckList run_check_suite(const std::string& suite, const GradSuiteOptions& grads = {}) {
  if (suite == "grads") return gradient_checks(grads);
  if (suite == "mask") return mask_checks();
  if (suite == "losses") return loss_checks();
  if (suite == "export") return export_checks();
  if (suite == "all") {
    CheckList out;
    for (const char* s : {"grads", "mask", "losses", "export"}) {
      auto part = run_check_suite(s, grads);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  throw ConfigError("unknown check suite '" + suite + "' (grads, mask, losses, export, all)");
}

}  // namespace multimae

// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
//
//   acceptance [--only N,N,...] [--work DIR] [--grad-entries N]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "multimae/cli.hpp"

namespace {

namespace fs = std::filesystem;
using namespace multimae;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Context {
  std::string work;
  std::size_t grad_entries = 0;
  std::string overfit_checkpoint;  // set by criterion 8
  std::string overfit_data;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

/// Runs the CLI in-process; throws when the command fails.
std::string cli(std::vector<std::string> args) {
  args.insert(args.begin(), "multimae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw Error(args[1] + " exited with " + std::to_string(code) + ": " + err.str());
  return out.str();
}

std::vector<double> read_losses(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<double> out;
  for (std::string line; std::getline(in, line);) {
    const auto at = line.find("total=");
    if (at == std::string::npos) throw FormatError(path + ": no total in '" + line + "'");
    out.push_back(std::stod(line.substr(at + 6)));
  }
  return out;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Outcome from_checks(const CheckList& checks) {
  Outcome o{all_passed(checks), ""};
  for (const auto& c : checks) {
    if (!c.passed) o.detail += "[" + c.to_line() + "] ";
  }
  if (o.passed) {
    o.detail = std::to_string(checks.size()) + " checks";
    for (const auto& c : checks) {
      if (c.name == "full_model" || c.name == "dirichlet_alpha1_moments") o.detail += "; " + c.name + " " + c.detail;
    }
  }
  return o;
}

// 1: token arithmetic of the ViT-B configuration.
Outcome token_arithmetic(Context&) {
  const ModelConfig c = ModelConfig::vit_base_paper();
  const RunConfig run = preset_config("vitb-paper");
  const std::size_t n = c.total_tokens();
  const std::size_t v = run.train.num_visible;
  const std::size_t seq = v + 1;
  const bool ok = c.inputs.size() == 3 && c.resolution == 224 && c.patch_size == 16 && n == 588 && v == 98 && v * 6 == n &&
                  seq == 99;
  return {ok, "N=" + std::to_string(n) + " V=" + std::to_string(v) + " V/N=1/" + std::to_string(n / v) +
                  " encoder_len=" + std::to_string(seq)};
}

// 2: learning-rate rule and schedule endpoints.
Outcome schedule_facts(Context&) {
  constexpr std::size_t kImageNetTrain = 1281167;
  const RunConfig vitb = preset_config("vitb-paper");
  const Schedule s = make_schedule(vitb.train, kImageNetTrain);
  bool ok = effective_lr(1e-4, 2048) == 8e-4 && s.peak_lr == 8e-4;
  ok = ok && s.lr(0) == 1e-6 && s.lr(s.warmup_steps) == s.peak_lr && s.lr(s.total_steps) == 0.0;
  std::ostringstream d;
  d << "peak=" << s.peak_lr << " lr(0)=" << s.lr(0) << " lr(warmup_end)=" << s.lr(s.warmup_steps)
    << " lr(end)=" << s.lr(s.total_steps);
  const double vitb_fraction = static_cast<double>(vitb.train.warmup_epochs) / static_cast<double>(vitb.train.epochs);
  for (const auto& name : preset_names()) {
    const RunConfig rc = preset_config(name);
    const double epochs_fraction = static_cast<double>(rc.train.warmup_epochs) / static_cast<double>(rc.train.epochs);
    for (std::size_t n : {std::size_t{8}, std::size_t{1000}, kImageNetTrain}) {
      const Schedule sn = make_schedule(rc.train, n);
      const double steps_fraction = static_cast<double>(sn.warmup_steps) / static_cast<double>(sn.total_steps);
      ok = ok && steps_fraction == epochs_fraction && sn.lr(sn.warmup_steps) == sn.peak_lr && sn.lr(sn.total_steps) == 0.0;
    }
    d << " " << name << ":warmup=" << rc.train.warmup_epochs << "/" << rc.train.epochs;
  }
  const RunConfig desk = preset_config("desk");
  ok = ok && static_cast<double>(desk.train.warmup_epochs) / static_cast<double>(desk.train.epochs) == vitb_fraction;
  return {ok, d.str()};
}

Outcome dirichlet(Context&) { return from_checks(mask_checks()); }

Outcome gradients(Context& ctx) {
  GradSuiteOptions g;
  g.model_entries_per_leaf = ctx.grad_entries;
  return from_checks(gradient_checks(g));
}

Outcome locality(Context&) { return from_checks(loss_checks()); }

// 6: the encoder only sees visible tokens, and pays only for them.
Outcome encoder_masking(Context&) {
  std::ostringstream d;
  bool ok = true;
  for (std::size_t res : {64, 96, 128}) {
    ModelConfig c = ModelConfig::desk();
    c.resolution = res;
    const auto model = MultiMae<float>::initialize(c, 1);
    SyntheticParams sp;
    sp.resolution = res;
    std::vector<Sample> samples{generate_synthetic_scene(5, sp)};
    const auto tokens = model.tokenize(prepare_batch(samples, c));
    DirichletParams p;
    p.num_visible = 16;
    const auto plan = build_mask_plan(p, c.inputs, c.caps(), 3);
    NoGradGuard guard;
    const auto enc = model.encode_visible(tokens, {plan});
    ok = ok && enc.shape()[1] == 17;
    d << "N=" << c.total_tokens() << "->len " << enc.shape()[1] << "; ";
  }

  const ModelConfig c = ModelConfig::desk();
  const auto model = MultiMae<float>::initialize(c, 2);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 8; ++i) samples.push_back(generate_synthetic_scene(40 + i, SyntheticParams{}));
  const auto tokens = model.tokenize(prepare_batch(samples, c));
  DirichletParams sparse;
  sparse.num_visible = 16;
  DirichletParams full;
  full.num_visible = c.total_tokens();
  std::vector<MaskPlan> sparse_plans, full_plans;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sparse_plans.push_back(build_mask_plan(sparse, c.inputs, c.caps(), i));
    full_plans.push_back(build_mask_plan(full, c.inputs, c.caps(), i));
  }
  NoGradGuard guard;
  auto time_it = [&](const std::vector<MaskPlan>& plans) {
    std::vector<double> t;
    for (int rep = 0; rep < 15; ++rep) {
      const auto start = Clock::now();
      const auto enc = model.encode_visible(tokens, plans);
      t.push_back(seconds_since(start));
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
  };
  time_it(full_plans);
  const double t_sparse = time_it(sparse_plans);
  const double t_full = time_it(full_plans);
  const double ratio = t_sparse / t_full;
  ok = ok && ratio < 0.6;
  d << "median forward V=16 " << fmt(t_sparse * 1e3, 3) << " ms, N=48 " << fmt(t_full * 1e3, 3) << " ms, ratio "
    << fmt(ratio, 3);
  return {ok, d.str()};
}

Outcome vit_export(Context&) { return from_checks(export_checks(1e-6)); }

// 8: overfit 8 scenes through the CLI, then read the reconstructions.
Outcome overfit(Context& ctx) {
  const std::string data = ctx.work + "/overfit_data";
  const std::string run = ctx.work + "/overfit_run";
  cli({"gen-data", "--out", data, "--num", "8", "--seed", "1"});
  cli({"pretrain", "--preset", "desk", "--data", data, "--out", run, "--set", "train.augment=false", "--log-every",
       "1000000"});
  const auto losses = read_losses(run + "/loss_log.txt");
  if (losses.size() < 2000) return {false, "only " + std::to_string(losses.size()) + " steps"};
  const double first = mean_of(std::span(losses).first(10));
  const double last = mean_of(std::span(losses).last(10));
  ctx.overfit_checkpoint = run + "/checkpoint.mmae";
  ctx.overfit_data = data;

  const auto loaded = cli::load_model(ctx.overfit_checkpoint);
  const auto manifest = read_manifest(data);
  EdgeAgreement edges;
  double worst = 1.0;
  for (std::size_t i = 0; i < manifest.ids.size(); ++i) {
    const std::string out = ctx.work + "/reconstruct_" + manifest.ids[i];
    cli({"reconstruct", "--checkpoint", ctx.overfit_checkpoint, "--sample", data + "/" + manifest.ids[i], "--seed",
         std::to_string(i), "--out", out});
    const auto text = read_file_bytes(out + "/mask.txt");
    const MaskPlan plan = mask_plan_from_text(std::string(text.begin(), text.end()));
    const auto rec = reconstruct(loaded.model, load_sample(data, manifest.ids[i], manifest.num_classes), plan);
    edges += rec.semseg_edges;
    worst = std::min(worst, rec.semseg_edges.score());
  }
  const double ratio = last / first;
  const bool ok = ratio < 0.1 && edges.score() >= 0.8;
  return {ok, "steps=" + std::to_string(losses.size()) + " loss " + fmt(first) + " -> " + fmt(last) + " (ratio " +
                  fmt(ratio, 3) + "); semseg edge agreement " + fmt(edges.score()) + " (" +
                  std::to_string(edges.matched) + "/" + std::to_string(edges.edges) + ", worst sample " + fmt(worst, 3) +
                  ")"};
}

// 9: semseg from depth alone on the overfit model.
Outcome cross_modal(Context& ctx) {
  if (ctx.overfit_checkpoint.empty()) return {false, "needs criterion 8's model"};
  const auto loaded = cli::load_model(ctx.overfit_checkpoint);
  const auto data = load_dataset(read_manifest(ctx.overfit_data));
  const auto acc = depth_only_semseg_accuracy(loaded.model, data, loaded.config.train.num_visible, 0);
  const double gain = 100.0 * (acc.accuracy() - acc.baseline());
  return {gain >= 20.0, "accuracy " + fmt(100.0 * acc.accuracy(), 4) + "% vs majority class " +
                            std::to_string(acc.majority_class) + " " + fmt(100.0 * acc.baseline(), 4) + "% (+" +
                            fmt(gain, 3) + " points over " + std::to_string(acc.pixels) + " masked pixels)"};
}

// 10: identical logs for identical seeds; interrupted + resumed == uninterrupted.
Outcome determinism(Context& ctx) {
  const std::string data = ctx.work + "/det_data";
  cli({"gen-data", "--out", data, "--num", "8", "--seed", "2"});
  const std::vector<std::string> base = {"pretrain", "--preset", "desk", "--data", data, "--set", "train.seed=9",
                                         "--set", "train.checkpoint_every=2", "--log-every", "1000000"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  cli(with({"--out", ctx.work + "/det_a", "--stop-step", "24"}));
  cli(with({"--out", ctx.work + "/det_b", "--stop-step", "24"}));
  const auto log_a = read_file_bytes(ctx.work + "/det_a/loss_log.txt");
  const bool same_logs = log_a == read_file_bytes(ctx.work + "/det_b/loss_log.txt");
  const bool same_ckpt = read_file_bytes(ctx.work + "/det_a/checkpoint.mmae") == read_file_bytes(ctx.work + "/det_b/checkpoint.mmae");

  const std::string resumed = ctx.work + "/det_resume";
  cli(with({"--out", resumed, "--stop-step", "11"}));
  cli({"pretrain", "--resume", resumed + "/checkpoint.mmae", "--out", resumed, "--stop-step", "24", "--log-every", "1000000"});
  const bool resume_log = read_file_bytes(resumed + "/loss_log.txt") == log_a;
  const bool resume_ckpt = read_file_bytes(resumed + "/checkpoint.mmae") == read_file_bytes(ctx.work + "/det_a/checkpoint.mmae");

  // Resuming from a periodic (epoch boundary) checkpoint as well.
  const std::string from_epoch = ctx.work + "/det_epoch";
  cli({"pretrain", "--resume", ctx.work + "/det_a/checkpoint_epoch2.mmae", "--out", from_epoch, "--stop-step", "24",
       "--log-every", "1000000"});
  const bool epoch_ckpt = read_file_bytes(from_epoch + "/checkpoint.mmae") == read_file_bytes(ctx.work + "/det_a/checkpoint.mmae");

  const auto lines = std::count(log_a.begin(), log_a.end(), '\n');
  std::ostringstream d;
  d << "steps=" << lines << " same_seed_logs=" << same_logs << " same_seed_checkpoints=" << same_ckpt
    << " resume@11 log=" << resume_log << " checkpoint=" << resume_ckpt << " resume@epoch2 checkpoint=" << epoch_ckpt;
  return {lines == 24 && same_logs && same_ckpt && resume_log && resume_ckpt && epoch_ckpt, d.str()};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  Context ctx;
  ctx.work = (fs::temp_directory_path() / ("multimae_acceptance_" + std::to_string(::getpid()))).string();
  ctx.grad_entries = 48;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--work", ctx.work, "Scratch directory");
  app.add_option("--grad-entries", ctx.grad_entries, "Entries per parameter in the full-model gradient check");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "token_arithmetic", 1, token_arithmetic},
      {2, "schedule_facts", 1, schedule_facts},
      {3, "dirichlet_statistics", 5, dirichlet},
      {4, "gradient_suite", 120, gradients},
      {5, "masked_loss_locality", 5, locality},
      {6, "encoder_masking", 30, encoder_masking},
      {7, "vit_export_equivalence", 5, vit_export},
      {8, "overfit", 900, overfit},
      {9, "cross_modal_signal", 60, cross_modal},
      {10, "determinism_resume", 300, determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  if (selected.contains(9) && !selected.contains(8)) {
    std::cerr << "criterion 9 needs criterion 8\n";
    return 2;
  }
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  bool all = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(start);
    if (secs > c.budget_seconds) {
      o.passed = false;
      o.detail += "; over budget";
    }
    all = all && o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " " << c.id << " " << c.name << " [" << std::fixed << std::setprecision(1)
              << secs << " s / " << c.budget_seconds << " s] " << std::defaultfloat << o.detail << std::endl;
  }
  fs::remove_all(ctx.work);
  std::cout << (all ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << std::endl;
  return all ? 0 : 1;
}

#pragma once

// Command-line front end: gen-data, pretrain, reconstruct, check, export-vit.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config/data/IO error,
// 3 numeric abort.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "multimae/checkpoint.hpp"
#include "multimae/checks.hpp"
#include "multimae/config.hpp"
#include "multimae/evaluation.hpp"

namespace multimae {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kSingleModalTag = "single_modal=";

namespace cli {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string out_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

/// run.txt: command, version, seeds and the full configuration.
inline void write_run_metadata(const std::string& dir, const std::string& command,
                               const std::vector<std::pair<std::string, std::string>>& fields,
                               const std::string& config_text = "") {
  std::ostringstream os;
  os << "command=" << command << '\n' << "version=" << kVersion << '\n' << "checkpoint_format=" << kCheckpointVersion << '\n';
  for (const auto& [k, v] : fields) os << k << '=' << v << '\n';
  if (!config_text.empty()) os << "[config]\n" << config_text;
  write_text(out_path(dir, "run.txt"), os.str());
}

inline std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

inline Checkpoint make_checkpoint(const RunConfig& config, const MultiMae<float>& model, const AdamWState<float>& adam) {
  Checkpoint ck;
  ck.config_text = run_config_to_text(config);
  ck.step = adam.step;
  ck.seed = config.train.seed;
  store_params(ck, model.params());
  store_adam(ck, model.params(), adam);
  return ck;
}

struct LoadedModel {
  RunConfig config;
  Checkpoint checkpoint;
  MultiMae<float> model;
};

inline LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_text.rfind(kSingleModalTag, 0) == 0) {
    throw ConfigError(path + ": exported single-modal checkpoint, expected a pre-training checkpoint");
  }
  RunConfig config = parse_run_config(ck.config_text, path + " (embedded config)");
  config.validate();
  MultiMae<float> model(config.model, restore_params<float>(ck));
  return {std::move(config), std::move(ck), std::move(model)};
}

/// "<root>/<id>" -> (root, id).
inline std::pair<std::string, std::string> split_sample(const std::string& spec) {
  const std::filesystem::path p(spec);
  std::string root = p.parent_path().string();
  if (root.empty()) root = ".";
  const std::string id = p.filename().string();
  if (id.empty()) throw ConfigError("--sample must look like <dataset dir>/<id>, got '" + spec + "'");
  return {root, id};
}

}  // namespace cli

struct GenDataOptions {
  std::string out;
  long long num = 8;
  std::size_t resolution = 64;
  std::uint64_t seed = 0;
  std::size_t shapes = 3;
  std::size_t classes = kDefaultNumClasses;
  double invalid_fraction = 0.05;
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  if (o.num < 1) throw ConfigError("num must be >= 1");
  SyntheticParams p;
  p.resolution = o.resolution;
  p.shapes = o.shapes;
  p.num_classes = o.classes;
  p.invalid_fraction = o.invalid_fraction;
  p.validate();
  const auto m = generate_dataset(o.out, static_cast<std::size_t>(o.num), o.seed, p);
  cli::write_run_metadata(o.out, "gen-data",
                          {{"num", std::to_string(o.num)}, {"seed", std::to_string(o.seed)},
                           {"resolution", std::to_string(o.resolution)}, {"shapes", std::to_string(o.shapes)},
                           {"num_classes", std::to_string(o.classes)}, {"invalid_fraction", detail::format_double(o.invalid_fraction)}});
  out << "wrote " << m.ids.size() << " samples to " << o.out << '\n';
  return kExitOk;
}

struct PretrainOptions {
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<std::size_t> stop_step;
  std::size_t log_every = 1;
  bool dry_run = false;
};

inline int cmd_pretrain(const PretrainOptions& o, std::ostream& out) {
  RunConfig config;
  std::optional<MultiMae<float>> resumed;
  AdamWState<float> adam;
  if (!o.resume.empty()) {
    if (!o.config_path.empty() || !o.preset.empty() || !o.overrides.empty()) {
      throw ConfigError("--resume takes its configuration from the checkpoint; drop --config/--preset/--set");
    }
    auto loaded = cli::load_model(o.resume);
    config = loaded.config;
    resumed.emplace(std::move(loaded.model));
    adam = restore_adam<float>(loaded.checkpoint);
  } else {
    if (!o.config_path.empty() && !o.preset.empty()) throw ConfigError("give either --config or --preset, not both");
    config = !o.config_path.empty() ? load_run_config(o.config_path) : preset_config(o.preset.empty() ? "desk" : o.preset);
    for (const auto& s : o.overrides) apply_override(config, s);
  }
  if (!o.data.empty()) config.data.path = o.data;
  config.validate();
  if (o.log_every == 0) throw ConfigError("--log-every must be >= 1");

  out << "preset=" << config.preset << " effective_lr=" << cli::sci(config.train.peak_lr()) << " (base_lr "
      << cli::sci(config.train.base_lr) << " x batch " << config.train.batch_size << " / 256)\n";
  if (o.dry_run) {
    out << run_config_to_text(config);
    return kExitOk;
  }
  if (config.data.path.empty()) throw ConfigError("no dataset: pass --data or set data.path");
  if (o.out.empty()) throw ConfigError("--out is required");
  const auto manifest = read_manifest(config.data.path);
  if (manifest.resolution != config.model.resolution) {
    throw ConfigError("dataset resolution " + std::to_string(manifest.resolution) + " differs from model.resolution " +
                      std::to_string(config.model.resolution));
  }
  if (manifest.num_classes != config.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(manifest.num_classes) + " classes, model.num_classes is " +
                      std::to_string(config.model.num_classes));
  }
  const auto data = load_dataset(manifest);
  const Schedule sched = make_schedule(config.train, data.size());
  if (adam.step > sched.total_steps) throw ConfigError("checkpoint step is past the end of the schedule");
  out << "samples=" << data.size() << " steps_per_epoch=" << sched.steps_per_epoch << " total_steps=" << sched.total_steps
      << " warmup_steps=" << sched.warmup_steps << " start_step=" << adam.step << '\n';

  MultiMae<float> model = resumed ? std::move(*resumed) : MultiMae<float>::initialize(config.model, config.train.seed);
  cli::ensure_dir(o.out);
  cli::write_run_metadata(o.out, "pretrain",
                          {{"seed", std::to_string(config.train.seed)}, {"data", config.data.path},
                           {"resume", o.resume}, {"start_step", std::to_string(adam.step)}},
                          run_config_to_text(config));
  std::ofstream log(cli::out_path(o.out, "loss_log.txt"), adam.step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + cli::out_path(o.out, "loss_log.txt"));

  TrainHooks hooks;
  std::size_t done = 0;
  hooks.on_step = [&](const LossReport& r) {
    log << r.to_line() << '\n';
    if (++done % o.log_every == 0) out << r.to_line() << '\n';
  };
  hooks.on_epoch_end = [&](std::size_t epoch, std::size_t steps_done) {
    if (config.train.checkpoint_every != 0 && (epoch + 1) % config.train.checkpoint_every == 0 && steps_done < sched.total_steps) {
      save_checkpoint(cli::out_path(o.out, "checkpoint_epoch" + std::to_string(epoch + 1) + ".mmae"),
                      cli::make_checkpoint(config, model, adam));
    }
  };
  const auto reports = train_loop(model, adam, data, config.train, hooks, o.stop_step);
  const std::string final_path = cli::out_path(o.out, "checkpoint.mmae");
  save_checkpoint(final_path, cli::make_checkpoint(config, model, adam));
  if (!reports.empty()) out << "final " << reports.back().to_line() << '\n';
  out << "checkpoint=" << final_path << " step=" << adam.step << '\n';
  return kExitOk;
}

struct ReconstructOptions {
  std::string checkpoint;
  std::string sample;
  std::string alpha = "1";
  std::uint64_t seed = 0;
  std::optional<std::size_t> num_visible;
  std::string mask;
  std::string out;
};

inline int cmd_reconstruct(const ReconstructOptions& o, std::ostream& out) {
  auto loaded = cli::load_model(o.checkpoint);
  const ModelConfig& mc = loaded.config.model;
  const auto [root, id] = cli::split_sample(o.sample);
  const Sample sample = load_sample(root, id, mc.num_classes);
  MaskPlan plan;
  if (!o.mask.empty()) {
    const auto bytes = read_file_bytes(o.mask);
    plan = mask_plan_from_text(std::string(bytes.begin(), bytes.end()));
  } else {
    DirichletParams dp;
    dp.alpha = parse_alpha(o.alpha);
    dp.num_modalities = mc.inputs.size();
    dp.num_visible = o.num_visible.value_or(loaded.config.train.num_visible);
    dp.validate();
    plan = build_mask_plan(dp, mc.inputs, mc.caps(), o.seed);
  }
  const auto rec = reconstruct(loaded.model, sample, plan);

  cli::ensure_dir(o.out);
  cli::write_text(cli::out_path(o.out, "mask.txt"), mask_plan_to_text(plan));
  for (const auto& t : rec.panels) {
    const std::string m(modality_name(t.modality));
    write_ppm(cli::out_path(o.out, m + "_masked.ppm"), t.masked);
    write_ppm(cli::out_path(o.out, m + "_pred.ppm"), t.prediction);
    write_ppm(cli::out_path(o.out, m + "_truth.ppm"), t.truth);
    write_ppm(cli::out_path(o.out, m + "_triptych.ppm"), t.combined());
  }
  cli::write_run_metadata(o.out, "reconstruct",
                          {{"checkpoint", o.checkpoint}, {"sample", o.sample}, {"alpha", o.mask.empty() ? o.alpha : "from-mask"},
                           {"seed", std::to_string(o.seed)}, {"mask", o.mask}},
                          loaded.checkpoint.config_text);
  out << "visible";
  for (std::size_t k = 0; k < plan.modalities.size(); ++k) out << ' ' << modality_name(plan.modalities[k]) << '=' << plan.counts[k];
  out << '\n';
  if (!rec.semseg_composite.empty()) {
    out << "semseg_edge_agreement=" << std::fixed << std::setprecision(4) << rec.semseg_edges.score() << " ("
        << rec.semseg_edges.matched << "/" << rec.semseg_edges.edges << " edge pixels in masked patches)\n";
  }
  out << "wrote " << rec.panels.size() << " triptychs to " << o.out << '\n';
  return kExitOk;
}

inline int cmd_check(const std::string& suite, std::size_t grad_entries, std::ostream& out) {
  GradSuiteOptions g;
  g.model_entries_per_leaf = grad_entries;
  const auto start = std::chrono::steady_clock::now();
  const auto checks = run_check_suite(suite, g);
  std::size_t failed = 0;
  for (const auto& c : checks) {
    out << c.to_line() << '\n';
    failed += !c.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << (failed ? "FAILED " : "OK ") << checks.size() - failed << "/" << checks.size() << " checks passed in "
      << std::fixed << std::setprecision(1) << secs << " s\n";
  return failed ? kExitCheckFailed : kExitOk;
}

/// Single-modal export: the checkpoint's config text is prefixed with a
/// "single_modal=<modality>" line.
inline int cmd_export_vit(const std::string& checkpoint, const std::string& modality, const std::string& out_file,
                          std::ostream& out) {
  const Modality m = parse_modality(modality);
  auto loaded = cli::load_model(checkpoint);
  if (!loaded.config.model.has_input(m)) {
    throw ConfigError("checkpoint has no '" + modality + "' input to export");
  }
  const auto vit = export_single_modal_vit(loaded.model.params(), m);
  Checkpoint ck;
  ck.config_text = std::string(kSingleModalTag) + std::string(modality_name(m)) + "\n" + loaded.checkpoint.config_text;
  ck.step = loaded.checkpoint.step;
  ck.seed = loaded.checkpoint.seed;
  store_params(ck, vit);
  const auto parent = std::filesystem::path(out_file).parent_path();
  if (!parent.empty()) cli::ensure_dir(parent.string());
  save_checkpoint(out_file, ck);
  out << "exported " << vit.size() << " tensors (" << modality_name(m) << ") to " << out_file << '\n';
  return kExitOk;
}

struct ExportedVit {
  Modality modality = Modality::rgb;
  RunConfig config;
  ParamMap<float> params;
};

inline ExportedVit load_exported_vit(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const std::string& text = ck.config_text;
  if (text.rfind(kSingleModalTag, 0) != 0) throw FormatError(path + ": not a single-modal export");
  const auto nl = text.find('\n');
  ExportedVit out;
  out.modality = parse_modality(text.substr(std::string(kSingleModalTag).size(), nl - std::string(kSingleModalTag).size()));
  out.config = parse_run_config(text.substr(nl + 1), path + " (embedded config)");
  out.params = restore_params<float>(ck);
  return out;
}

/// Parses and runs one command line; diagnostics go to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal masked autoencoder pre-training at desk scale", "multimae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic coupled-modality dataset");
  gen_cmd->add_option("--out", gen.out, "Dataset directory")->required();
  gen_cmd->add_option("--num", gen.num, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--resolution", gen.resolution, "Side length in pixels (multiple of 16)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--shapes", gen.shapes, "Shapes per scene")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "Semantic classes including background")->capture_default_str();
  gen_cmd->add_option("--invalid-fraction", gen.invalid_fraction, "Fraction of invalid depth pixels")->capture_default_str();

  PretrainOptions pre;
  std::size_t stop = 0;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pre-train on a dataset and write checkpoints and a loss log");
  pre_cmd->add_option("--config", pre.config_path, "Config file");
  pre_cmd->add_option("--preset", pre.preset, "desk, vitb-paper or vitb-paper-400");
  pre_cmd->add_option("--set", pre.overrides, "Override section.key=value (repeatable)");
  pre_cmd->add_option("--data", pre.data, "Dataset directory");
  pre_cmd->add_option("--out", pre.out, "Output directory");
  pre_cmd->add_option("--resume", pre.resume, "Checkpoint to continue from");
  auto* stop_opt = pre_cmd->add_option("--stop-step", stop, "Stop (and checkpoint) once this many steps are done");
  pre_cmd->add_option("--log-every", pre.log_every, "Print every n-th loss line")->capture_default_str();
  pre_cmd->add_flag("--dry-run", pre.dry_run, "Validate, print the schedule and resolved config, and exit");

  ReconstructOptions rec;
  std::size_t num_visible = 0;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Render masked input / prediction / ground truth triptychs");
  rec_cmd->add_option("--checkpoint", rec.checkpoint, "Pre-training checkpoint")->required();
  rec_cmd->add_option("--sample", rec.sample, "Sample as <dataset dir>/<id>")->required();
  rec_cmd->add_option("--alpha", rec.alpha, "Dirichlet concentration or 'equal'")->capture_default_str();
  rec_cmd->add_option("--seed", rec.seed, "Mask seed")->capture_default_str();
  auto* nv_opt = rec_cmd->add_option("--num-visible", num_visible, "Visible tokens (default: train.num_visible)");
  rec_cmd->add_option("--mask", rec.mask, "Mask plan file (as written to mask.txt); overrides --alpha/--seed");
  rec_cmd->add_option("--out", rec.out, "Output directory")->required();

  std::string suite = "all";
  std::size_t grad_entries = 8;
  auto* check_cmd = app.add_subcommand("check", "Run invariant suites");
  check_cmd->add_option("--suite", suite, "grads, mask, losses, export or all")->capture_default_str();
  check_cmd->add_option("--grad-entries", grad_entries, "Entries per parameter in the full-model gradient check")
      ->capture_default_str();

  std::string exp_ckpt, exp_mod, exp_out;
  auto* exp_cmd = app.add_subcommand("export-vit", "Export the encoder with one input projection");
  exp_cmd->add_option("--checkpoint", exp_ckpt, "Pre-training checkpoint")->required();
  exp_cmd->add_option("--modality", exp_mod, "rgb, depth or semseg")->required();
  exp_cmd->add_option("--out", exp_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*pre_cmd) {
      if (*stop_opt) pre.stop_step = stop;
      return cmd_pretrain(pre, out);
    }
    if (*rec_cmd) {
      if (*nv_opt) rec.num_visible = num_visible;
      return cmd_reconstruct(rec, out);
    }
    if (*check_cmd) return cmd_check(suite, grad_entries, out);
    if (*exp_cmd) return cmd_export_vit(exp_ckpt, exp_mod, exp_out, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace multimae

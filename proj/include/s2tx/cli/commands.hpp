#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "s2tx/config.hpp"
#include "s2tx/profile/profiler.hpp"
#include "s2tx/train/experiments.hpp"

namespace s2tx::cli {

namespace fs = std::filesystem;

/// Parsed command line, independent of the argument parser.
struct Invocation {
  std::string config_file;
  KeyValues flags;
  std::string checkpoint;   // evaluate / robust / train --resume
  std::vector<Index> horizons;
  std::vector<double> ratios;
  std::vector<Index> lengths;
  std::vector<std::string> kinds;
  std::vector<std::string> regimes;
  Index repetitions = 5;
  std::string output_file;  // synth
};

inline ExperimentConfig resolve(const Invocation& inv) {
  const KeyValues file = inv.config_file.empty() ? KeyValues{} : read_config_file(inv.config_file);
  return resolve_config(file, inv.flags);
}

inline std::string run_id(const std::string& cmd, const ExperimentConfig& c) {
  return cmd + "-" + canonical_dataset(fs::path(c.dataset).stem().string()) + "-H" + std::to_string(c.horizon) + "-" +
         c.variant + "-s" + std::to_string(c.seed);
}

/// Creates the run directory and freezes the resolved config inside it.
inline fs::path prepare_run_dir(const std::string& id, const ExperimentConfig& c) {
  const fs::path dir = fs::path(c.output_dir) / id;
  fs::create_directories(dir);
  std::ofstream(dir / "config.resolved") << c.to_text();
  return dir;
}

inline void append_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::app);
  write_json_line(out, j);
}

inline void print_metrics(std::ostream& out, const std::string& label, const MetricReport& m) {
  out << std::left << std::setw(8) << label << " mse " << std::fixed << std::setprecision(4) << m.mse << "  mae "
      << m.mae << "  windows " << m.windows << "  (" << std::setprecision(1) << m.seconds << " s)\n";
  out.unsetf(std::ios::floatfield);
}

inline int cmd_train(const Invocation& inv, std::ostream& out) {
  const auto c = resolve(inv);
  const auto data = load_dataset(c);
  const std::string id = run_id("train", c);
  const auto dir = prepare_run_dir(id, c);
  std::optional<Checkpoint> resume;
  if (!inv.checkpoint.empty()) resume = load_checkpoint(inv.checkpoint);
  ExperimentHooks hooks;
  hooks.resume = resume ? &*resume : nullptr;
  hooks.on_epoch_end = [&](const EpochRecord& e, const Trainer<Model>& t) {
    save_checkpoint(dir / "last.ckpt", t.checkpoint());
    append_json(dir / "history.jsonl", {{"run_id", id},
                                        {"epoch", e.epoch},
                                        {"train_loss", e.train_loss},
                                        {"val_mse", e.val_mse},
                                        {"val_mae", e.val_mae},
                                        {"improved", e.improved},
                                        {"wall_clock", e.seconds}});
    out << "epoch " << e.epoch + 1 << "  train " << e.train_loss << "  val mse " << e.val_mse
        << (e.improved ? "  *" : "") << "  (" << e.seconds << " s)\n";
  };
  auto r = run_experiment(c, data, hooks);
  save_checkpoint(dir / "model.ckpt", model_checkpoint(*r.model, c));
  auto val = metric_record(id, c, r.val, "val");
  auto test = metric_record(id, c, r.test, "test");
  test["train_seconds"] = r.train_seconds;
  test["epochs"] = r.state.epoch;
  append_json(dir / "metrics.jsonl", val);
  append_json(dir / "metrics.jsonl", test);
  print_metrics(out, "val", r.val);
  print_metrics(out, "test", r.test);
  out << "run directory: " << dir.string() << "\n";
  return 0;
}

/// The checkpoint's config with command-line flags layered on top. Flags
/// may point at other data but not reshape the model.
inline ExperimentConfig checkpoint_config(const ExperimentConfig& stored, const Model& model, const KeyValues& flags) {
  KeyValues kv = parse_config_text(stored.to_text());
  for (const auto& [k, v] : flags) kv[k] = v;
  const auto c = resolve_config({}, kv);
  for (const char* key : {"horizon", "lookback", "local_window", "global_patch_len", "global_stride", "local_patch_len",
                          "local_stride", "patch_anchor", "d_model", "state_dim", "expand", "conv_kernel",
                          "global_layers", "local_layers", "heads", "ffn_width", "instance_norm", "variant"})
    if (config_field(key).get(c) != config_field(key).get(stored))
      throw ConfigError(std::string("--") + key + " conflicts with the checkpoint");
  (void)model;
  return c;
}

inline int cmd_evaluate(const Invocation& inv, std::ostream& out) {
  if (inv.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
  auto [stored, model] = model_from_checkpoint(load_checkpoint(inv.checkpoint));
  const auto c = checkpoint_config(stored, *model, inv.flags);
  const auto data = load_dataset(c);
  const std::string id = run_id("evaluate", c);
  const auto dir = prepare_run_dir(id, c);
  const auto rep = evaluate(predictor_of(*model), data.windows(Split::test, c.window_spec(), c.eval_stride));
  append_json(dir / "metrics.jsonl", metric_record(id, c, rep));
  print_metrics(out, "test", rep);
  return 0;
}

inline std::vector<Index> horizons_or_default(const Invocation& inv) {
  return inv.horizons.empty() ? std::vector<Index>{96, 192, 336, 720} : inv.horizons;
}

inline int cmd_ablate(const Invocation& inv, std::ostream& out) {
  const auto c = resolve(inv);
  const auto data = load_dataset(c);
  const auto horizons = horizons_or_default(inv);
  const std::string id = run_id("ablate", c);
  const auto dir = prepare_run_dir(id, c);
  auto table = run_ablation(c, data, horizons, [&](Variant v, Index h, const ExperimentResult& r) {
    ExperimentConfig rc = c;
    rc.variant = to_string(v);
    rc.horizon = h;
    append_json(dir / "metrics.jsonl", metric_record(id, rc, r.test));
    out << to_string(v) << " H=" << h << " mse " << r.test.mse << "\n";
  });
  std::ofstream csv(dir / "ablation.csv");
  csv << "variant";
  for (Index h : horizons) csv << ",mse_" << h;
  csv << ",mean_mse,mean_mae\n";
  out << "\n" << std::left << std::setw(22) << "variant";
  for (Index h : horizons) out << std::setw(10) << ("H" + std::to_string(h));
  out << std::setw(10) << "mean" << "\n";
  for (const auto& row : table.rows) {
    csv << to_string(row.variant);
    out << std::setw(22) << to_string(row.variant) << std::fixed << std::setprecision(4);
    for (double m : row.mse) {
      csv << ',' << m;
      out << std::setw(10) << m;
    }
    csv << ',' << row.mean_mse << ',' << row.mean_mae << '\n';
    out << std::setw(10) << row.mean_mse << "\n";
    out.unsetf(std::ios::floatfield);
    append_json(dir / "ablation.jsonl",
                {{"run_id", id}, {"variant", to_string(row.variant)}, {"horizons", horizons}, {"mse", row.mse},
                 {"mae", row.mae}, {"mean_mse", row.mean_mse}, {"mean_mae", row.mean_mae}});
  }
  return 0;
}

inline void write_robustness(std::ostream& out, std::ostream& csv, const std::vector<RobustnessRow>& rows) {
  csv << "ratio,mse,mae,degradation_pct\n";
  out << std::left << std::setw(8) << "missing" << std::setw(22) << "mse" << "mae\n";
  for (const auto& r : rows) {
    csv << r.ratio << ',' << r.mse << ',' << r.mae << ',' << r.degradation_pct << '\n';
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(3) << r.mse << " (" << std::showpos << std::setprecision(1)
         << r.degradation_pct << "%)";
    out << std::setw(8) << (std::to_string(static_cast<int>(std::lround(r.ratio * 100))) + "%") << std::setw(22)
        << cell.str() << std::fixed << std::setprecision(3) << r.mae << "\n";
    out.unsetf(std::ios::floatfield);
  }
}

inline int cmd_robust(const Invocation& inv, std::ostream& out) {
  const auto base = resolve(inv);
  const auto ratios = inv.ratios.empty() ? default_miss_ratios() : inv.ratios;
  const std::string id = run_id("robust", base);
  const auto dir = prepare_run_dir(id, base);
  std::vector<std::vector<RobustnessRow>> tables;
  std::vector<std::pair<ExperimentConfig, std::unique_ptr<Model>>> models;
  if (!inv.checkpoint.empty()) {
    auto [stored, model] = model_from_checkpoint(load_checkpoint(inv.checkpoint));
    const auto c = checkpoint_config(stored, *model, inv.flags);
    models.emplace_back(c, std::move(model));
  } else {
    const auto data = load_dataset(base);
    for (Index h : horizons_or_default(inv)) {
      ExperimentConfig c = base;
      c.horizon = h;
      auto r = run_experiment(c, data);
      out << "trained H=" << h << " clean test mse " << r.test.mse << "\n";
      models.emplace_back(c, std::move(r.model));
    }
  }
  for (auto& [c, model] : models) {
    const auto data = load_dataset(c);
    const auto test = data.windows(Split::test, c.window_spec(), c.eval_stride);
    auto rows = run_robustness(predictor_of(*model), test, ratios, c.burst_len, c.seed);
    for (const auto& r : rows)
      append_json(dir / "robustness.jsonl", {{"run_id", id},
                                             {"horizon", c.horizon},
                                             {"ratio", r.ratio},
                                             {"mse", r.mse},
                                             {"mae", r.mae},
                                             {"degradation_pct", r.degradation_pct}});
    tables.push_back(std::move(rows));
  }
  const auto avg = average_robustness(tables);
  std::ofstream csv(dir / "robustness.csv");
  write_robustness(out, csv, avg);
  return 0;
}

inline int cmd_profile(const Invocation& inv, std::ostream& out) {
  const auto c = resolve(inv);
  ProfileOptions o;
  o.base = c.model_spec();
  o.horizon = c.horizon;
  // random inputs shaped like the configured dataset
  const auto known = known_dataset(fs::path(c.dataset).stem().string());
  o.variates = known ? known->variates : c.synth_variates;
  o.baseline = {o.variates, c.lookback, c.horizon, c.d_model, c.global_layers, c.heads, c.ffn_width,
                o.base.mamba};
  o.repetitions = inv.repetitions;
  o.seed = c.seed;
  std::vector<ProfileKind> kinds;
  for (const auto& k : inv.kinds) kinds.push_back(parse_profile_kind(k));
  if (kinds.empty())
    kinds = {ProfileKind::s2tx, ProfileKind::s2tx_no_cross_attention, ProfileKind::vanilla_transformer,
             ProfileKind::plain_mamba};
  std::vector<Regime> regimes;
  for (const auto& r : inv.regimes) {
    if (r == "fixed_patch_number") regimes.push_back(Regime::fixed_patch_number);
    else if (r == "fixed_stride") regimes.push_back(Regime::fixed_stride);
    else throw ConfigError("unknown regime '" + r + "'");
  }
  if (regimes.empty()) regimes = {Regime::fixed_patch_number, Regime::fixed_stride};
  const auto lengths = inv.lengths.empty() ? default_profile_lengths() : inv.lengths;
  const std::string id = "profile-s" + std::to_string(c.seed);
  const auto dir = prepare_run_dir(id, c);
  std::vector<ScalingPoint> all;
  for (Regime r : regimes) {
    std::vector<ProfileKind> ks;
    for (auto k : kinds)
      if (r == Regime::fixed_patch_number || k == ProfileKind::s2tx || k == ProfileKind::s2tx_no_cross_attention)
        ks.push_back(k);
    for (auto& p : sweep(ks, lengths, r, o)) {
      append_json(dir / "profile.jsonl", to_json(p));
      all.push_back(p);
    }
  }
  std::ofstream csv(dir / "profile.csv");
  write_plot_csv(csv, all);
  write_table(out, all);
  return 0;
}

inline int cmd_synth(const Invocation& inv, std::ostream& out) {
  const auto c = resolve(inv);
  const auto frame = synth_global_local(c.synth_variates, c.synth_steps, c.seed, {c.synth_cross, c.synth_gain, c.synth_lead});
  fs::path path = inv.output_file;
  if (path.empty()) {
    fs::create_directories(c.output_dir);
    path = fs::path(c.output_dir) / "synth.csv";
  }
  save_csv(path, frame);
  std::ofstream meta(path.string() + ".meta");
  for (const auto& [k, v] : frame.metadata) meta << k << " = " << v << "\n";
  out << "wrote " << frame.steps() << " x " << frame.variates() << " to " << path.string() << "\n";
  return 0;
}

}  // namespace s2tx::cli

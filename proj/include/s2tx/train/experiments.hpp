#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "s2tx/config.hpp"
#include "s2tx/data/corruption.hpp"
#include "s2tx/data/synthetic.hpp"
#include "s2tx/data/windows.hpp"
#include "s2tx/train/trainer.hpp"

namespace s2tx {

inline constexpr const char* kDataDirEnv = "S2TX_DATA_DIR";

/// Where a named dataset is looked up: explicit path, data_dir key,
/// S2TX_DATA_DIR, then ./data.
inline std::filesystem::path dataset_path(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  if (c.dataset.find('/') != std::string::npos || fs::path(c.dataset).extension() == ".csv") return c.dataset;
  std::string dir = c.data_dir;
  if (dir.empty())
    if (const char* env = std::getenv(kDataDirEnv)) dir = env;
  if (dir.empty()) dir = "data";
  return fs::path(dir) / dataset_filename(c.dataset);
}

inline SeriesFrame load_frame(const ExperimentConfig& c) {
  if (canonical_dataset(c.dataset) == "synth")
    return synth_global_local(c.synth_variates, c.synth_steps, c.seed, {c.synth_cross, c.synth_gain, c.synth_lead});
  return load_csv(dataset_path(c));
}

inline PreparedData load_dataset(const ExperimentConfig& c) { return prepare(load_frame(c)); }

inline TrainOptions train_options(const ExperimentConfig& c) {
  TrainOptions o;
  o.lr = c.lr;
  o.batch_size = c.batch_size;
  o.epochs = c.epochs;
  o.patience = c.patience;
  o.seed = c.seed;
  o.max_train_windows = c.max_train_windows;
  o.config_text = c.to_text();
  return o;
}

using Model = S2TXModel<double>;

struct ExperimentResult {
  std::unique_ptr<Model> model;
  TrainState state;
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  MetricReport val;
  MetricReport test;
  double train_seconds = 0.0;
};

struct ExperimentHooks {
  std::function<void(const EpochRecord&, const Trainer<Model>&)> on_epoch_end;
  const Checkpoint* resume = nullptr;
};

/// Trains the configured model on the train split and evaluates the
/// restored best parameters on val and test.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const PreparedData& data,
                                       const ExperimentHooks& hooks = {}) {
  ExperimentResult r;
  r.model = std::make_unique<Model>(c.model_spec(), c.horizon, c.seed);
  const auto ws = c.window_spec();
  const auto train = data.windows(Split::train, ws, c.train_stride);
  const auto val = data.windows(Split::val, ws, c.eval_stride);
  const auto test = data.windows(Split::test, ws, c.eval_stride);
  auto opts = train_options(c);
  if (!c.output_dir.empty()) opts.divergence_checkpoint = std::filesystem::path(c.output_dir) / "diverged.ckpt";
  Trainer<Model> trainer(*r.model, opts);
  if (hooks.resume) trainer.restore(*hooks.resume);
  trainer.on_epoch_end = hooks.on_epoch_end;
  const auto t0 = std::chrono::steady_clock::now();
  r.state = trainer.fit(train, val);
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.history = trainer.history();
  r.step_losses = trainer.step_losses();
  r.val = evaluate(predictor_of(*r.model), val);
  r.test = evaluate(predictor_of(*r.model), test);
  return r;
}

inline Checkpoint model_checkpoint(Model& m, const ExperimentConfig& c) {
  Checkpoint ck;
  ck.config_text = c.to_text();
  ck.put_group("param/", state_dict(m));
  return ck;
}

/// Rebuilds a model from a checkpoint's embedded config and parameters.
inline std::pair<ExperimentConfig, std::unique_ptr<Model>> model_from_checkpoint(const Checkpoint& ck) {
  ExperimentConfig c = resolve_config(parse_config_text(ck.config_text, "checkpoint config"), {});
  auto m = std::make_unique<Model>(c.model_spec(), c.horizon, c.seed);
  load_state_dict(*m, ck.group("param/"));
  return {c, std::move(m)};
}

struct AblationRow {
  Variant variant;
  std::vector<double> mse;  // one per horizon
  std::vector<double> mae;
  double mean_mse = 0.0;
  double mean_mae = 0.0;
};

struct AblationTable {
  std::vector<Index> horizons;
  std::vector<AblationRow> rows;

  const AblationRow& row(Variant v) const {
    for (const auto& r : rows)
      if (r.variant == v) return r;
    throw ConfigError(std::string("no ablation row for ") + to_string(v));
  }
};

inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_cross_variate, Variant::no_cross_attention,
                                          Variant::neither};

/// Trains every variant at every horizon with the same seed; test metrics
/// are averaged over horizons.
inline AblationTable run_ablation(const ExperimentConfig& base, const PreparedData& data,
                                  const std::vector<Index>& horizons,
                                  const std::function<void(Variant, Index, const ExperimentResult&)>& on_run = {}) {
  AblationTable t;
  t.horizons = horizons;
  for (Variant v : kAllVariants) {
    AblationRow row{v, {}, {}, 0.0, 0.0};
    for (Index h : horizons) {
      ExperimentConfig c = base;
      c.variant = to_string(v);
      c.horizon = h;
      c.validate();
      const auto r = run_experiment(c, data);
      row.mse.push_back(r.test.mse);
      row.mae.push_back(r.test.mae);
      if (on_run) on_run(v, h, r);
    }
    for (std::size_t i = 0; i < horizons.size(); ++i) {
      row.mean_mse += row.mse[i] / static_cast<double>(horizons.size());
      row.mean_mae += row.mae[i] / static_cast<double>(horizons.size());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline const std::vector<double>& default_miss_ratios() {
  static const std::vector<double> r{0.0, 0.04, 0.08, 0.16, 0.24, 0.32, 0.40};
  return r;
}

struct RobustnessRow {
  double ratio = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  double degradation_pct = 0.0;  // 100 * (mse - clean) / clean; positive is worse
};

/// Test-split windows whose inputs come from a corrupted copy of the test
/// segment. Targets stay clean.
inline WindowSet corrupted_windows(const WindowSet& clean, double ratio, Index burst, std::uint64_t seed) {
  const Index b = clean.segment_begin(), e = clean.segment_end();
  auto series = std::make_shared<Matrix<double>>(clean.series());
  const Matrix<double> segment = series->middleCols(b, e - b);
  series->middleCols(b, e - b) = corrupt_missing(segment, ratio, burst, seed);
  return clean.with_inputs(std::move(series));
}

inline std::vector<RobustnessRow> run_robustness(const Predictor& predict, const WindowSet& test,
                                                 const std::vector<double>& ratios, Index burst,
                                                 std::uint64_t seed) {
  std::vector<RobustnessRow> rows;
  const double clean = evaluate(predict, test).mse;
  for (double r : ratios) {
    const auto rep = r == 0.0 ? evaluate(predict, test) : evaluate(predict, corrupted_windows(test, r, burst, seed));
    rows.push_back({r, rep.mse, rep.mae, 100.0 * (rep.mse - clean) / clean});
  }
  return rows;
}

/// Averages per-horizon robustness tables row by row.
inline std::vector<RobustnessRow> average_robustness(const std::vector<std::vector<RobustnessRow>>& tables) {
  std::vector<RobustnessRow> out = tables.at(0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mse = 0, mae = 0, clean = 0;
    for (const auto& t : tables) {
      mse += t[i].mse;
      mae += t[i].mae;
      clean += t[0].mse;
    }
    const double n = static_cast<double>(tables.size());
    out[i].mse = mse / n;
    out[i].mae = mae / n;
    out[i].degradation_pct = 100.0 * (mse - clean) / clean;
  }
  return out;
}

/// Degradation never drops by more than `tolerance_pct` between adjacent ratios.
inline bool weakly_increasing(const std::vector<RobustnessRow>& rows, double tolerance_pct = 1.0) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].degradation_pct < rows[i - 1].degradation_pct - tolerance_pct) return false;
  return true;
}

inline nlohmann::json metric_record(const std::string& run_id, const ExperimentConfig& c, const MetricReport& m,
                                    const std::string& split = "test") {
  return {{"run_id", run_id}, {"dataset", c.dataset}, {"horizon", c.horizon}, {"variant", c.variant},
          {"split", split},   {"mse", m.mse},         {"mae", m.mae},         {"windows", m.windows},
          {"wall_clock", m.seconds}};
}

inline void write_json_line(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n'; }

}  // namespace s2tx

#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "s2tx/train/checkpoint.hpp"
#include "s2tx/train/metrics.hpp"
#include "s2tx/train/optimizer.hpp"

namespace s2tx {

struct TrainOptions {
  double lr = 1e-4;
  Index batch_size = 32;
  Index epochs = 30;
  Index patience = 5;
  std::uint64_t seed = 2024;
  Index max_train_windows = 0;  // 0: use every window
  std::string config_text;      // stored in checkpoints
  std::filesystem::path divergence_checkpoint;  // written if the loss goes non-finite
};

struct TrainState {
  Index epoch = 0;  // completed epochs
  double best_val = std::numeric_limits<double>::infinity();
  Index bad_epochs = 0;
  std::uint64_t seed = 0;
  bool stopped = false;
};

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
  bool improved = false;
};

struct TrainingDiverged : NumericError {
  using NumericError::NumericError;
};

/// Mean over the batch of ||forecast - target||_F^2 / (D * H), with
/// gradients accumulated into the model.
template <class Model>
double batch_loss_and_grad(Model& model, const ForecastBatch& batch) {
  const Index b = batch.size();
  double loss = 0.0;
  for (Index k = 0; k < b; ++k) {
    typename Model::Cache cache;
    const Matrix<double> window = batch.inputs.slice(k);
    const Matrix<double> target = batch.targets.slice(k);
    const Matrix<double> err = model.forward(window, &cache).values - target;
    const double cells = static_cast<double>(err.size());
    loss += err.squaredNorm() / cells;
    model.backward(cache, (2.0 / (cells * static_cast<double>(b))) * err);
  }
  return loss / static_cast<double>(b);
}

/// Minibatch training with early stopping on validation MSE. The shuffle
/// order of each epoch depends only on (seed, epoch), so a run resumed from
/// an epoch checkpoint follows the uninterrupted trajectory.
template <class Model>
class Trainer {
 public:
  Trainer(Model& model, TrainOptions opts) : model_(model), opts_(std::move(opts)) {
    adam_.lr = opts_.lr;
    state_.seed = opts_.seed;
    best_ = state_dict(model_);
  }

  const TrainState& state() const { return state_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const std::vector<double>& step_losses() const { return step_losses_; }
  const Adam& optimizer() const { return adam_; }

  std::function<void(const EpochRecord&, const Trainer&)> on_epoch_end;

  std::vector<Index> epoch_order(const WindowSet& train, Index epoch) const {
    std::vector<Index> idx;
    const Index n = train.count();
    const Index use = opts_.max_train_windows > 0 ? std::min(opts_.max_train_windows, n) : n;
    for (Index i = 0; i < use; ++i) idx.push_back(use == n ? i : i * n / use);
    Rng rng(opts_.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  }

  /// One pass over the (shuffled) training windows; returns mean loss.
  double run_epoch(const WindowSet& train) {
    const auto order = epoch_order(train, state_.epoch);
    double total = 0.0;
    Index seen = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(opts_.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(opts_.batch_size));
      const std::span<const Index> ids(order.data() + s, e - s);
      zero_grads(model_);
      double loss;
      try {
        loss = batch_loss_and_grad(model_, train.batch(ids));
      } catch (const NumericError& err) {
        diverge(err.what());
      }
      if (!std::isfinite(loss) || !grads_finite()) diverge("non-finite loss or gradient");
      adam_.apply(model_);
      step_losses_.push_back(loss);
      total += loss * static_cast<double>(ids.size());
      seen += static_cast<Index>(ids.size());
    }
    return seen > 0 ? total / static_cast<double>(seen) : 0.0;
  }

  /// Trains until the epoch budget or patience runs out, then restores the
  /// best validation parameters.
  const TrainState& fit(const WindowSet& train, const WindowSet& val) {
    while (!state_.stopped && state_.epoch < opts_.epochs) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = state_.epoch;
      rec.train_loss = run_epoch(train);
      const auto v = evaluate(predictor_of(model_), val);
      rec.val_mse = v.mse;
      rec.val_mae = v.mae;
      if (v.mse < state_.best_val) {
        state_.best_val = v.mse;
        state_.bad_epochs = 0;
        best_ = state_dict(model_);
        rec.improved = true;
      } else if (++state_.bad_epochs >= opts_.patience) {
        state_.stopped = true;
      }
      ++state_.epoch;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      history_.push_back(rec);
      if (on_epoch_end) on_epoch_end(rec, *this);
    }
    load_state_dict(model_, best_);
    return state_;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config_text = opts_.config_text;
    c.put_group("param/", state_dict(model_));
    c.put_group("best/", best_);
    c.put_group("adam/m/", adam_.m);
    c.put_group("adam/v/", adam_.v);
    c.scalars["adam/step"] = adam_.step;
    c.scalars["state/epoch"] = static_cast<std::uint64_t>(state_.epoch);
    c.set_double("state/best_val", state_.best_val);
    c.scalars["state/bad_epochs"] = static_cast<std::uint64_t>(state_.bad_epochs);
    c.scalars["state/seed"] = state_.seed;
    c.scalars["state/stopped"] = state_.stopped ? 1 : 0;
    return c;
  }

  void restore(const Checkpoint& c) {
    load_state_dict(model_, c.group("param/"));
    auto best = c.group("best/");
    best_ = best.empty() ? state_dict(model_) : std::move(best);
    adam_.m = c.group("adam/m/");
    adam_.v = c.group("adam/v/");
    adam_.step = c.scalars.count("adam/step") ? c.scalar("adam/step") : 0;
    if (c.scalars.count("state/epoch")) {
      state_.epoch = static_cast<Index>(c.scalar("state/epoch"));
      state_.best_val = c.get_double("state/best_val");
      state_.bad_epochs = static_cast<Index>(c.scalar("state/bad_epochs"));
      state_.seed = c.scalar("state/seed");
      state_.stopped = c.scalar("state/stopped") != 0;
    }
  }

 private:
  bool grads_finite() {
    bool ok = true;
    model_.visit("", ParamVisitor<double>([&](const std::string&, Param<double>& p) { ok = ok && p.grad.allFinite(); }));
    return ok;
  }

  [[noreturn]] void diverge(const std::string& why) {
    if (!opts_.divergence_checkpoint.empty()) save_checkpoint(opts_.divergence_checkpoint, checkpoint());
    throw TrainingDiverged("training (" + why + ")", static_cast<Index>(step_losses_.size()));
  }

  Model& model_;
  TrainOptions opts_;
  Adam adam_;
  TrainState state_;
  std::map<std::string, Matrix<double>> best_;
  std::vector<EpochRecord> history_;
  std::vector<double> step_losses_;
};

}  // namespace s2tx

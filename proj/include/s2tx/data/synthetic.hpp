#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "s2tx/data/frame.hpp"
#include "s2tx/core/params.hpp"

namespace s2tx {

struct SynthCoupling {
  double cross_variate = -0.9;  // variate 2k+1 = cross_variate * variate 2k + noise
  double regime_gain = 1.0;     // scales regime level, regime-driven cycle and noise growth
  Index lead = 0;               // odd variates copy their neighbour from `lead` steps earlier
};

struct SynthShape {
  double regime_period = 720.0;
  double cycle_period = 24.0;
  double regime_level = 1.0;
  double noise = 0.3;
  double pair_noise = 0.5;  // relative to noise
};

/// Base variates follow
///   x_t = g * (level * r_t + (1 + r_t) * sin(2 pi t / cycle + phase)) + noise * (1 + g * (1 + r_t)) * e_t
/// with r_t = sin(2 pi t / regime_period) shared by all variates. Odd variates
/// copy their even neighbour scaled by cross_variate, plus noise of scale
/// pair_noise * noise. With lead > 0 the copy is of x_{t - lead}, so the
/// neighbour's past announces the odd variate's future.
/// With both strengths zero every variate is white noise.
inline SeriesFrame synth_global_local(Index variates, Index steps, std::uint64_t seed, SynthCoupling c = {},
                                      SynthShape shape = {}) {
  if (variates <= 0 || steps <= 0 || c.lead < 0) throw ConfigError("synthetic series needs positive variates and steps");
  SeriesFrame f;
  f.name = "synth";
  f.values.resize(steps, variates);
  f.timestamps.resize(static_cast<std::size_t>(steps));
  const std::int64_t origin = *parse_timestamp("2016-07-01 00:00:00");
  for (Index t = 0; t < steps; ++t) f.timestamps[static_cast<std::size_t>(t)] = origin + 3600 * t;
  for (Index j = 0; j < variates; ++j) f.names.push_back("v" + std::to_string(j));

  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phase(static_cast<std::size_t>(variates));
  for (auto& p : phase) p = uniform(rng);
  const double g = c.regime_gain;
  for (Index t = 0; t < steps; ++t) {
    const double tt = static_cast<double>(t);
    const double r = std::sin(2.0 * std::numbers::pi * tt / shape.regime_period);
    for (Index j = 0; j < variates; ++j) {
      const double e = normal(rng);
      if (j % 2 == 1) {
        const Index src = std::max<Index>(0, t - c.lead);
        f.values(t, j) = c.cross_variate * f.values(src, j - 1) + shape.pair_noise * shape.noise * e;
        continue;
      }
      const double cycle = std::sin(2.0 * std::numbers::pi * tt / shape.cycle_period + phase[static_cast<std::size_t>(j)]);
      f.values(t, j) = g * (shape.regime_level * r + (1.0 + r) * cycle) + shape.noise * (1.0 + g * (1.0 + r)) * e;
    }
  }
  auto put = [&](const std::string& k, double v) { f.metadata[k] = std::to_string(v); };
  f.metadata["seed"] = std::to_string(seed);
  f.metadata["variates"] = std::to_string(variates);
  f.metadata["steps"] = std::to_string(steps);
  put("cross_variate", c.cross_variate);
  put("regime_gain", c.regime_gain);
  f.metadata["lead"] = std::to_string(c.lead);
  put("regime_period", shape.regime_period);
  put("cycle_period", shape.cycle_period);
  put("regime_level", shape.regime_level);
  put("noise", shape.noise);
  put("pair_noise", shape.pair_noise);
  return f;
}

/// Regime signal used by synth_global_local, for tests and plots.
inline double synth_regime(Index t, const SynthShape& shape = {}) {
  return std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / shape.regime_period);
}

}  // namespace s2tx

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2tx/model/baselines.hpp"
#include "s2tx/model/s2tx_model.hpp"
#include "s2tx/profile/alloc_probe.hpp"

namespace s2tx {

enum class Regime { fixed_patch_number, fixed_stride };

inline const char* to_string(Regime r) {
  return r == Regime::fixed_patch_number ? "fixed_patch_number" : "fixed_stride";
}

/// s2tx_no_cross_attention stands in for the concatenation-fusion baseline.
enum class ProfileKind { s2tx, s2tx_no_cross_attention, vanilla_transformer, plain_mamba };

inline const char* to_string(ProfileKind k) {
  switch (k) {
    case ProfileKind::s2tx: return "s2tx";
    case ProfileKind::s2tx_no_cross_attention: return "s2tx_no_cross_attention";
    case ProfileKind::vanilla_transformer: return "vanilla_transformer";
    case ProfileKind::plain_mamba: return "plain_mamba";
  }
  return "?";
}

inline ProfileKind parse_profile_kind(const std::string& s) {
  for (auto k : {ProfileKind::s2tx, ProfileKind::s2tx_no_cross_attention, ProfileKind::vanilla_transformer,
                 ProfileKind::plain_mamba})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown profile kind '" + s + "'");
}

struct ScalingPoint {
  ProfileKind kind;
  Index lookback = 0;
  Regime regime = Regime::fixed_patch_number;
  double forward_ms = 0.0;  // median over repetitions
  std::int64_t peak_mem_bytes = 0;
  std::string memory_method;  // "heap_peak" or "rss_delta"
  Index repetitions = 0;
  bool censored = false;
  std::string note;
};

struct ProfileOptions {
  Index variates = 7;
  Index horizon = 96;
  Index repetitions = 5;
  Index warmup = 1;
  std::uint64_t seed = 7;
  ModelSpec base;  // geometry at the reference look-back
  BaselineSpec baseline;
};

inline const std::vector<Index>& default_profile_lengths() {
  static const std::vector<Index> l{336, 672, 1344, 2688};
  return l;
}

/// Geometry for look-back L. The local window stays at its base length;
/// under fixed_patch_number the global patch length and stride scale with L
/// so the global patch count is unchanged.
inline ModelSpec profile_spec(const ModelSpec& base, Index lookback, Regime regime) {
  ModelSpec s = base;
  const Index l0 = base.geometry.window.lookback;
  s.geometry.window.lookback = lookback;
  if (regime == Regime::fixed_patch_number) {
    s.geometry.global.patch_len = base.geometry.global.patch_len * lookback / l0;
    s.geometry.global.stride = base.geometry.global.stride * lookback / l0;
  }
  return s;
}

template <class F>
double median_ms(F&& f, Index reps, Index warmup) {
  for (Index i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  for (Index i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  return n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
}

/// Peak transient memory of one call: heap peak when the allocation probe
/// is linked in, otherwise the growth of peak resident set size.
template <class F>
std::pair<std::int64_t, std::string> measure_peak(F&& f) {
  if (alloc_probe::available()) {
    const auto base = alloc_probe::begin_window();
    f();
    return {alloc_probe::peak_since(base), "heap_peak"};
  }
  const bool reset = alloc_probe::reset_rss_peak();
  const auto before = alloc_probe::proc_status_kb(reset ? "VmRSS" : "VmHWM");
  f();
  const auto after = alloc_probe::proc_status_kb("VmHWM");
  return {std::max<std::int64_t>(0, after - before) * 1024, "rss_delta"};
}

inline ScalingPoint profile_point(ProfileKind kind, Index lookback, Regime regime, const ProfileOptions& o) {
  ScalingPoint p{kind, lookback, regime, 0.0, 0, "", o.repetitions, false, ""};
  try {
    Rng rng(o.seed);
    Matrix<double> window(o.variates, lookback);
    std::normal_distribution<double> dist;
    for (Index i = 0; i < window.size(); ++i) window.data()[i] = dist(rng);

    std::function<void()> run;
    std::unique_ptr<S2TXModel<double>> s2tx;
    std::unique_ptr<BaselineModel<double>> baseline;
    if (kind == ProfileKind::s2tx || kind == ProfileKind::s2tx_no_cross_attention) {
      ModelSpec spec = profile_spec(o.base, lookback, regime);
      spec.variant = kind == ProfileKind::s2tx ? Variant::full : Variant::no_cross_attention;
      s2tx = std::make_unique<S2TXModel<double>>(spec, o.horizon, o.seed);
      run = [&] { s2tx->forward(window); };
    } else {
      BaselineSpec bs = o.baseline;
      bs.variates = o.variates;
      bs.lookback = lookback;
      bs.horizon = o.horizon;
      baseline = std::make_unique<BaselineModel<double>>(
          kind == ProfileKind::vanilla_transformer ? BaselineKind::vanilla_transformer : BaselineKind::plain_mamba, bs,
          o.seed);
      run = [&] { baseline->forward(window); };
    }
    p.forward_ms = median_ms(run, o.repetitions, o.warmup);
    std::tie(p.peak_mem_bytes, p.memory_method) = measure_peak(run);
  } catch (const std::bad_alloc&) {
    p.censored = true;
    p.note = "out of memory";
  } catch (const InvalidSpecError& e) {
    p.censored = true;
    p.note = e.what();
  }
  return p;
}

inline std::vector<ScalingPoint> sweep(const std::vector<ProfileKind>& kinds, const std::vector<Index>& lengths,
                                       Regime regime, const ProfileOptions& o) {
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1]) throw ConfigError("profile lengths must be strictly increasing");
  for (Index l : lengths)
    if (l < o.base.geometry.global.patch_len) throw ConfigError("profile length shorter than the global patch");
  std::vector<ScalingPoint> out;
  for (auto k : kinds)
    for (Index l : lengths) out.push_back(profile_point(k, l, regime, o));
  return out;
}

inline const ScalingPoint* find_point(const std::vector<ScalingPoint>& pts, ProfileKind k, Index l, Regime r) {
  for (const auto& p : pts)
    if (p.kind == k && p.lookback == l && p.regime == r) return &p;
  return nullptr;
}

inline nlohmann::json to_json(const ScalingPoint& p) {
  return {{"kind", to_string(p.kind)},   {"lookback", p.lookback},        {"regime", to_string(p.regime)},
          {"forward_ms", p.forward_ms},  {"peak_mem_bytes", p.peak_mem_bytes}, {"memory_method", p.memory_method},
          {"repetitions", p.repetitions}, {"censored", p.censored},       {"note", p.note}};
}

inline void write_plot_csv(std::ostream& out, const std::vector<ScalingPoint>& pts) {
  out << "L,kind,regime,ms,bytes\n";
  for (const auto& p : pts) {
    out << p.lookback << ',' << to_string(p.kind) << ',' << to_string(p.regime) << ',';
    if (p.censored)
      out << ",\n";
    else
      out << p.forward_ms << ',' << p.peak_mem_bytes << '\n';
  }
}

inline void write_table(std::ostream& out, const std::vector<ScalingPoint>& pts) {
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %-20s %6s %12s %14s %s\n", "kind", "regime", "L", "forward_ms", "peak_bytes",
                "memory");
  out << line;
  for (const auto& p : pts) {
    if (p.censored)
      std::snprintf(line, sizeof line, "%-26s %-20s %6ld %12s %14s %s\n", to_string(p.kind), to_string(p.regime),
                    static_cast<long>(p.lookback), "censored", "-", p.note.c_str());
    else
      std::snprintf(line, sizeof line, "%-26s %-20s %6ld %12.3f %14lld %s\n", to_string(p.kind), to_string(p.regime),
                    static_cast<long>(p.lookback), p.forward_ms, static_cast<long long>(p.peak_mem_bytes),
                    p.memory_method.c_str());
    out << line;
  }
}

}  // namespace s2tx

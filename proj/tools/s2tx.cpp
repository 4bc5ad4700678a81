#include <CLI11.hpp>

#include <iostream>
#include <list>

#include "s2tx/cli/commands.hpp"

S2TX_INSTALL_ALLOC_PROBE

namespace {

using s2tx::cli::Invocation;

struct Flag {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

// One --key flag per config field.
void add_config_flags(CLI::App* sub, Invocation& inv, std::list<Flag>& flags) {
  sub->add_option("--config", inv.config_file, "key = value config file")->check(CLI::ExistingFile);
  for (const auto& [key, field] : s2tx::config_fields()) {
    auto& f = flags.emplace_back(Flag{key, "", nullptr});
    const std::string name = key == "output_dir" ? "--output_dir,--out" : "--" + key;
    f.opt = sub->add_option(name, f.value, "default " + field.get(s2tx::ExperimentConfig{}));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2tx: global-local state-space forecaster"};
  app.require_subcommand(1);
  Invocation inv;
  std::list<Flag> flags;

  auto* train = app.add_subcommand("train", "train one model and report val/test metrics");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved model on the test split");
  auto* ablate = app.add_subcommand("ablate", "train all four variants across horizons");
  auto* robust = app.add_subcommand("robust", "test-time missing-data robustness sweep");
  auto* profile = app.add_subcommand("profile", "forward time and peak memory against look-back");
  auto* synth = app.add_subcommand("synth", "write the synthetic fixture to CSV");
  for (auto* sub : {train, evaluate, ablate, robust, profile, synth}) add_config_flags(sub, inv, flags);

  train->add_option("--resume", inv.checkpoint, "resume from a last.ckpt")->check(CLI::ExistingFile);
  evaluate->add_option("--checkpoint", inv.checkpoint, "model.ckpt to evaluate")->required()->check(CLI::ExistingFile);
  robust->add_option("--checkpoint", inv.checkpoint, "evaluate this model instead of training")
      ->check(CLI::ExistingFile);
  for (auto* sub : {ablate, robust})
    sub->add_option("--horizons", inv.horizons, "horizons (default 96 192 336 720)")->delimiter(',');
  robust->add_option("--ratios", inv.ratios, "missing ratios in [0, 1)")->delimiter(',');
  profile->add_option("--lengths", inv.lengths, "look-back lengths")->delimiter(',');
  profile->add_option("--kinds", inv.kinds, "s2tx, s2tx_no_cross_attention, vanilla_transformer, plain_mamba")
      ->delimiter(',');
  profile->add_option("--regime", inv.regimes, "fixed_patch_number, fixed_stride")->delimiter(',');
  profile->add_option("--reps", inv.repetitions, "timed repetitions per point")->check(CLI::PositiveNumber);
  synth->add_option("-o,--output", inv.output_file, "CSV path (default <out>/synth.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& f : flags)
      if (f.opt->count()) inv.flags[f.key] = f.value;
    auto& out = std::cout;
    if (*train) return s2tx::cli::cmd_train(inv, out);
    if (*evaluate) return s2tx::cli::cmd_evaluate(inv, out);
    if (*ablate) return s2tx::cli::cmd_ablate(inv, out);
    if (*robust) return s2tx::cli::cmd_robust(inv, out);
    if (*profile) return s2tx::cli::cmd_profile(inv, out);
    if (*synth) return s2tx::cli::cmd_synth(inv, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

// regad: experiment driver.
//
//   regad run --config spec.json [--seeds 0,1,2] [--ratios 0.1,0.5] ...
//   regad sweep-hyper --config spec.json [--alphas ...] [--nt ...]
//   regad gen --out DIR [--n 1000] [--ratio 0.05] ...
//
// Flags override values from the config file. Relative output dirs are
// placed under $REGAD_OUTPUT_ROOT when it is set.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "regad/harness.hpp"

namespace {

using regad::harness::ExperimentSpec;

struct Overrides {
  std::string config;
  std::string output;
  std::string dataset;
  std::vector<std::uint64_t> seeds;
  std::vector<double> ratios;
  std::vector<int> budgets;
  std::vector<std::string> variants;
  std::vector<double> alphas;
  std::vector<int> nts;
  std::optional<int> workers;
  std::optional<int> epochs;
  bool dump = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "experiment spec (JSON)");
  cmd->add_option("-o,--output", o.output, "output directory");
  cmd->add_option("--dataset", o.dataset, "dataset directory instead of the synthetic generator");
  cmd->add_option("--seeds", o.seeds, "run seeds")->delimiter(',');
  cmd->add_option("--ratios", o.ratios, "noise ratios")->delimiter(',');
  cmd->add_option("--budgets", o.budgets, "labeled-anomaly budgets")->delimiter(',');
  cmd->add_option("-j,--workers", o.workers, "parallel runs");
  cmd->add_option("--epochs", o.epochs, "loop epochs");
  cmd->add_flag("--dump-spec", o.dump, "print the resolved spec and exit");
}

ExperimentSpec resolve(const Overrides& o) {
  ExperimentSpec s = o.config.empty() ? ExperimentSpec{} : regad::harness::load_spec(o.config);
  if (!o.output.empty()) s.output_dir = o.output;
  if (!o.dataset.empty()) s.dataset_path = o.dataset;
  if (!o.seeds.empty()) s.seeds = o.seeds;
  if (!o.ratios.empty()) s.noise_ratios = o.ratios;
  if (!o.budgets.empty()) s.budgets = o.budgets;
  if (!o.variants.empty()) s.variants = o.variants;
  if (!o.alphas.empty()) s.alpha_grid = o.alphas;
  if (!o.nts.empty()) s.nt_grid = o.nts;
  if (o.workers) s.workers = *o.workers;
  if (o.epochs) s.loop.epochs = *o.epochs;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy-label graph anomaly detection with RL edge pruning"};
  app.require_subcommand(1);

  Overrides run_opts;
  CLI::App* run = app.add_subcommand("run", "run every (ratio, budget, seed, variant) cell");
  add_common(run, run_opts);
  run->add_option("--variants", run_opts.variants, "regad, no_rectify, no_prune, no_bandit or '+' combinations")
      ->delimiter(',');

  Overrides sweep_opts;
  CLI::App* sweep = app.add_subcommand("sweep-hyper", "sensitivity sweep over alpha and n_t");
  add_common(sweep, sweep_opts);
  sweep->add_option("--alphas", sweep_opts.alphas, "confident-set rates")->delimiter(',');
  sweep->add_option("--nt", sweep_opts.nts, "per-step edge caps")->delimiter(',');

  regad::io::SyntheticConfig gen_cfg;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen", "write a synthetic dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_cfg.n, "nodes");
  gen->add_option("--dim", gen_cfg.feature_dim, "feature dimension");
  gen->add_option("--ratio", gen_cfg.anomaly_ratio, "anomaly ratio, 0 < r < 0.5");
  gen->add_option("--communities", gen_cfg.communities);
  gen->add_option("--intra", gen_cfg.intra_prob, "intra-community edge probability");
  gen->add_option("--inter", gen_cfg.inter_prob, "inter-community edge probability");
  gen->add_option("--shift", gen_cfg.attribute_shift, "anomaly attribute shift (units of σ)");
  gen->add_option("--shifted-dims", gen_cfg.shifted_dims);
  gen->add_option("--rewire", gen_cfg.rewire_fraction, "share of anomaly edges rewired");
  gen->add_option("--seed", gen_cfg.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return regad::harness::kSpecInvalid;
  }

  try {
    if (*gen) {
      return regad::harness::cmd_gen(gen_cfg, regad::harness::resolve_output(gen_out), std::cout);
    }
    const bool is_run = static_cast<bool>(*run);
    const Overrides& o = is_run ? run_opts : sweep_opts;
    const ExperimentSpec spec = resolve(o);
    if (o.dump) {
      std::cout << regad::harness::emit_spec(spec);
      return regad::harness::kOk;
    }
    return is_run ? regad::harness::cmd_run(spec, std::cerr) : regad::harness::cmd_sweep_hyper(spec, std::cerr);
  } catch (const regad::harness::SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return regad::harness::kSpecInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return regad::harness::kRunFailure;
  }
}

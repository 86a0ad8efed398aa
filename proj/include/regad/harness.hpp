#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "regad/data_io.hpp"
#include "regad/loop.hpp"

namespace regad::harness {

/// Invalid experiment spec or CLI usage; maps to exit code 2.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum ExitCode : int { kOk = 0, kRunFailure = 1, kSpecInvalid = 2 };

struct ExperimentSpec {
  std::string dataset_path;  // empty: generate from `synthetic`, reseeded per run seed
  io::SyntheticConfig synthetic;
  std::vector<double> noise_ratios{0.5};
  std::vector<int> budgets{30};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> variants{"regad", "no_rectify", "no_prune", "no_bandit", "no_rectify+no_prune"};
  int normal_multiplier = 10;
  loop::LoopConfig loop;
  std::vector<double> alpha_grid{0.001, 0.003, 0.005, 0.007, 0.009};
  std::vector<int> nt_grid{10, 13, 17, 20, 23};
  std::string output_dir = "regad-out";
  int workers = 1;
};

/// Throws SpecError.
void validate(const ExperimentSpec& spec);

/// JSON text. Every field is emitted, so parse(emit(s)) == s.
std::string emit_spec(const ExperimentSpec& spec);
/// Missing keys keep their defaults; unknown keys and bad values throw SpecError.
ExperimentSpec parse_spec(std::string_view text);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// "regad" or '+'-joined switch names, e.g. "no_rectify+no_prune".
loop::Ablation parse_variant(const std::string& name);

/// Relative output dirs are placed under $REGAD_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& dir);

struct CellKey {
  std::string dataset;
  double ratio = 0.0;
  int budget = 0;
  std::uint64_t seed = 0;
  std::string variant;
};

struct MetricRow {
  CellKey key;
  double auc = 0.0;
  double aupr = 0.0;
  double wallclock = 0.0;
};

struct CellOutcome {
  MetricRow row;
  std::vector<loop::EpisodeRow> episodes;
  std::vector<loop::EpochRow> epochs;
};

/// One (ratio, budget, seed, variant) run, including dataset construction and
/// noise injection. Bit-reproducible apart from the wallclock field.
CellOutcome run_cell(const ExperimentSpec& spec, const io::DatasetBundle& data, double ratio, int budget,
                     std::uint64_t seed, const std::string& variant);

/// The dataset a given run seed sees.
io::DatasetBundle dataset_for(const ExperimentSpec& spec, std::uint64_t seed);

std::string metrics_csv_header();
std::string format_row(const MetricRow& row);

/// Writes metrics.csv, edges_per_episode.csv, summary.json and spec.json
/// under the resolved output dir. Failed cells go to failures.json.
int cmd_run(const ExperimentSpec& spec, std::ostream& log);

/// Varies α over alpha_grid and n_t over nt_grid for the "regad" variant.
/// Writes sweep.csv (one row per point and seed) and sweep_summary.csv.
int cmd_sweep_hyper(const ExperimentSpec& spec, std::ostream& log);

/// Generates a synthetic dataset into `out` and prints its manifest.
int cmd_gen(const io::SyntheticConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace regad::harness

#include "regad/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace regad::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365;

json synthetic_json(const io::SyntheticConfig& c) {
  return {{"n", c.n},
          {"feature_dim", c.feature_dim},
          {"anomaly_ratio", c.anomaly_ratio},
          {"communities", c.communities},
          {"intra_prob", c.intra_prob},
          {"inter_prob", c.inter_prob},
          {"attribute_shift", c.attribute_shift},
          {"shifted_dims", c.shifted_dims},
          {"rewire_fraction", c.rewire_fraction},
          {"center_scale", c.center_scale},
          {"seed", c.seed}};
}

json loop_json(const loop::LoopConfig& c) {
  const auto& d = c.detector;
  const auto& p = c.pruner;
  return {{"epochs", c.epochs},
          {"confident_rate", c.confident_rate},
          {"seed", c.seed},
          {"bandit",
           {{"arms", c.bandit.arms},
            {"epsilon", c.bandit.epsilon},
            {"iterations", c.bandit.iterations},
            {"maximize", c.bandit.maximize}}},
          {"detector",
           {{"hidden", d.hidden},
            {"score_hidden", d.score_hidden},
            {"learning_rate", d.learning_rate},
            {"weight_decay", d.weight_decay},
            {"batch_size", d.batch_size},
            {"margin", d.margin},
            {"prior_samples", d.prior_samples},
            {"pretrain_epochs", d.pretrain_epochs},
            {"finetune_epochs", d.finetune_epochs}}},
          {"pruner",
           {{"top_k", p.top_k},
            {"max_edges_per_step", p.max_edges_per_step},
            {"budget_rate", p.budget_rate},
            {"discount", p.discount},
            {"learning_rate", p.learning_rate},
            {"weight_decay", p.weight_decay},
            {"episodes", p.episodes},
            {"step_cap", p.step_cap},
            {"policy_hidden", p.policy_hidden},
            {"policy_out", p.policy_out}}}};
}

json spec_json(const ExperimentSpec& s) {
  return {{"dataset_path", s.dataset_path},
          {"synthetic", synthetic_json(s.synthetic)},
          {"noise_ratios", s.noise_ratios},
          {"budgets", s.budgets},
          {"seeds", s.seeds},
          {"variants", s.variants},
          {"normal_multiplier", s.normal_multiplier},
          {"loop", loop_json(s.loop)},
          {"alpha_grid", s.alpha_grid},
          {"nt_grid", s.nt_grid},
          {"output_dir", s.output_dir},
          {"workers", s.workers}};
}

/// Copies `obj[key]` into `out` when present; rejects keys not in `known`.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw SpecError(where_ + ": expected an object");
  }

  template <class T>
  Reader& get(const char* key, T& out) {
    seen_.emplace_back(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw SpecError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const json* child(const char* key) {
    seen_.emplace_back(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw SpecError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string> seen_;
};

void read_synthetic(const json& j, io::SyntheticConfig& c) {
  Reader r(j, "synthetic");
  r.get("n", c.n).get("feature_dim", c.feature_dim).get("anomaly_ratio", c.anomaly_ratio);
  r.get("communities", c.communities).get("intra_prob", c.intra_prob).get("inter_prob", c.inter_prob);
  r.get("attribute_shift", c.attribute_shift).get("shifted_dims", c.shifted_dims);
  r.get("rewire_fraction", c.rewire_fraction).get("center_scale", c.center_scale).get("seed", c.seed);
  r.finish();
}

void read_loop(const json& j, loop::LoopConfig& c) {
  Reader r(j, "loop");
  r.get("epochs", c.epochs).get("confident_rate", c.confident_rate).get("seed", c.seed);
  if (const json* b = r.child("bandit")) {
    Reader rb(*b, "loop.bandit");
    rb.get("arms", c.bandit.arms).get("epsilon", c.bandit.epsilon).get("iterations", c.bandit.iterations);
    rb.get("maximize", c.bandit.maximize);
    rb.finish();
  }
  if (const json* d = r.child("detector")) {
    auto& x = c.detector;
    Reader rd(*d, "loop.detector");
    rd.get("hidden", x.hidden).get("score_hidden", x.score_hidden).get("learning_rate", x.learning_rate);
    rd.get("weight_decay", x.weight_decay).get("batch_size", x.batch_size).get("margin", x.margin);
    rd.get("prior_samples", x.prior_samples).get("pretrain_epochs", x.pretrain_epochs);
    rd.get("finetune_epochs", x.finetune_epochs);
    rd.finish();
  }
  if (const json* p = r.child("pruner")) {
    auto& x = c.pruner;
    Reader rp(*p, "loop.pruner");
    rp.get("top_k", x.top_k).get("max_edges_per_step", x.max_edges_per_step).get("budget_rate", x.budget_rate);
    rp.get("discount", x.discount).get("learning_rate", x.learning_rate).get("weight_decay", x.weight_decay);
    rp.get("episodes", x.episodes).get("step_cap", x.step_cap).get("policy_hidden", x.policy_hidden);
    rp.get("policy_out", x.policy_out);
    rp.finish();
  }
  r.finish();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string seed_text(std::uint64_t s) { return std::to_string(s); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct Job {
  double ratio;
  int budget;
  std::size_t seed_index;
  std::string variant;
  loop::LoopConfig loop;
  std::string axis;  // sweep axis, empty for cmd_run
  double point = 0.0;
};

struct JobResult {
  std::optional<CellOutcome> outcome;
  std::string error;
};

/// Runs jobs on `workers` threads. Results land in job order so the output
/// does not depend on scheduling; the log is written through one lock.
std::vector<JobResult> run_pool(const ExperimentSpec& spec, const std::vector<io::DatasetBundle>& datasets,
                                const std::vector<Job>& jobs, std::ostream& log) {
  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex sink;
  const auto worker = [&] {
    for (std::size_t idx = next++; idx < jobs.size(); idx = next++) {
      const Job& job = jobs[idx];
      ExperimentSpec local = spec;
      local.loop = job.loop;
      JobResult res;
      try {
        res.outcome = run_cell(local, datasets[job.seed_index], job.ratio, job.budget, spec.seeds[job.seed_index],
                               job.variant);
      } catch (const std::exception& e) {
        res.error = e.what();
      }
      std::lock_guard lock(sink);
      log << "[" << idx + 1 << "/" << jobs.size() << "] ratio=" << job.ratio << " budget=" << job.budget
          << " seed=" << spec.seeds[job.seed_index] << " " << job.variant;
      if (!job.axis.empty()) log << " " << job.axis << "=" << job.point;
      if (res.outcome) {
        log << " auc=" << res.outcome->row.auc << "\n";
      } else {
        log << " FAILED: " << res.error << "\n";
      }
      results[idx] = std::move(res);
    }
  };
  const int n = std::max(1, std::min<int>(spec.workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<io::DatasetBundle> prepare_datasets(const ExperimentSpec& spec) {
  std::vector<io::DatasetBundle> out;
  if (!spec.dataset_path.empty()) {
    const io::DatasetBundle shared = io::load_dataset(spec.dataset_path);
    out.assign(spec.seeds.size(), shared);
    return out;
  }
  for (std::uint64_t s : spec.seeds) out.push_back(dataset_for(spec, s));
  return out;
}

std::string failures_json(const std::vector<Job>& jobs, const std::vector<JobResult>& results,
                          const ExperimentSpec& spec) {
  json arr = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (results[i].outcome) continue;
    json f = {{"ratio", jobs[i].ratio},
              {"budget", jobs[i].budget},
              {"seed", spec.seeds[jobs[i].seed_index]},
              {"variant", jobs[i].variant},
              {"error", results[i].error}};
    if (!jobs[i].axis.empty()) {
      f["axis"] = jobs[i].axis;
      f["value"] = jobs[i].point;
    }
    arr.push_back(std::move(f));
  }
  return arr.dump(2) + "\n";
}

}  // namespace

void validate(const ExperimentSpec& spec) {
  if (spec.seeds.empty()) throw SpecError("spec: seed list is empty");
  if (spec.noise_ratios.empty()) throw SpecError("spec: noise ratio list is empty");
  if (spec.budgets.empty()) throw SpecError("spec: budget list is empty");
  if (spec.variants.empty()) throw SpecError("spec: variant list is empty");
  for (double r : spec.noise_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw SpecError("spec: noise ratios must lie in [0, 1]");
  }
  for (int b : spec.budgets) {
    if (b < 1) throw SpecError("spec: budgets must be positive");
  }
  for (const auto& v : spec.variants) parse_variant(v);
  if (spec.normal_multiplier < 1) throw SpecError("spec: normal_multiplier must be positive");
  if (spec.workers < 1) throw SpecError("spec: workers must be positive");
  if (spec.output_dir.empty()) throw SpecError("spec: output_dir is empty");
  for (double a : spec.alpha_grid) {
    if (!(a > 0.0 && a <= 0.5)) throw SpecError("spec: alpha grid values must lie in (0, 0.5]");
  }
  for (int nt : spec.nt_grid) {
    if (nt < 1) throw SpecError("spec: n_t grid values must be positive");
  }
  try {
    if (spec.dataset_path.empty()) io::validate(spec.synthetic);
    loop::validate(spec.loop);
  } catch (const std::invalid_argument& e) {
    throw SpecError(e.what());
  }
}

std::string emit_spec(const ExperimentSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

ExperimentSpec parse_spec(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("spec: ") + e.what());
  }
  ExperimentSpec s;
  Reader r(j, "spec");
  r.get("dataset_path", s.dataset_path);
  if (const json* c = r.child("synthetic")) read_synthetic(*c, s.synthetic);
  r.get("noise_ratios", s.noise_ratios).get("budgets", s.budgets).get("seeds", s.seeds);
  r.get("variants", s.variants).get("normal_multiplier", s.normal_multiplier);
  if (const json* c = r.child("loop")) read_loop(*c, s.loop);
  r.get("alpha_grid", s.alpha_grid).get("nt_grid", s.nt_grid).get("output_dir", s.output_dir);
  r.get("workers", s.workers);
  r.finish();
  validate(s);
  return s;
}

ExperimentSpec load_spec(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot read spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str());
}

loop::Ablation parse_variant(const std::string& name) {
  loop::Ablation a;
  if (name == "regad") return a;
  std::stringstream in(name);
  std::string part;
  bool any = false;
  while (std::getline(in, part, '+')) {
    if (part == "no_rectify") a.no_rectify = true;
    else if (part == "no_prune") a.no_prune = true;
    else if (part == "no_bandit") a.no_bandit = true;
    else throw SpecError("unknown variant '" + name + "'");
    any = true;
  }
  if (!any) throw SpecError("empty variant name");
  return a;
}

fs::path resolve_output(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("REGAD_OUTPUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / p;
  }
  return p;
}

io::DatasetBundle dataset_for(const ExperimentSpec& spec, std::uint64_t seed) {
  if (!spec.dataset_path.empty()) return io::load_dataset(spec.dataset_path);
  io::SyntheticConfig cfg = spec.synthetic;
  cfg.seed = spec.synthetic.seed + seed;
  io::DatasetBundle b = io::generate_synthetic(cfg);
  b.name = "synthetic";
  return b;
}

CellOutcome run_cell(const ExperimentSpec& spec, const io::DatasetBundle& data, double ratio, int budget,
                     std::uint64_t seed, const std::string& variant) {
  const loop::Ablation switches = parse_variant(variant);
  NodeSet pool = data.nodes_in(io::Split::Train);
  const NodeSet val = data.nodes_in(io::Split::Validation);
  pool.insert(pool.end(), val.begin(), val.end());
  std::sort(pool.begin(), pool.end());

  metrics::NoiseConfig nc;
  nc.anomaly_budget = budget;
  nc.noise_ratio = ratio;
  nc.normal_multiplier = spec.normal_multiplier;
  Rng noise_rng = derive_rng(seed, kNoiseStream);
  const metrics::NoisyLabels noisy = metrics::inject_label_noise(data.labels, pool, nc, noise_rng);

  loop::CleanLabelVault vault(data.labels);
  loop::MetricReporter reporter(vault, data.nodes_in(io::Split::Test));
  loop::LoopConfig cfg = spec.loop;
  cfg.seed = spec.loop.seed + seed;
  loop::RunResult res = loop::ablate(data.graph, noisy.observed, reporter, cfg, switches);

  CellOutcome out;
  out.row.key = {data.name, ratio, budget, seed, variant};
  out.row.auc = res.final_metrics.auc;
  out.row.aupr = res.final_metrics.aupr;
  out.row.wallclock = res.wallclock_seconds;
  out.episodes = std::move(res.episodes);
  out.epochs = std::move(res.epochs);
  return out;
}

std::string metrics_csv_header() { return "dataset,ratio,budget,seed,variant,auc,aupr,wallclock"; }

std::string format_row(const MetricRow& row) {
  const CellKey& k = row.key;
  return k.dataset + "," + fmt(k.ratio) + "," + std::to_string(k.budget) + "," + seed_text(k.seed) + "," +
         k.variant + "," + fmt(row.auc) + "," + fmt(row.aupr) + "," + fmt(row.wallclock);
}

int cmd_run(const ExperimentSpec& spec, std::ostream& log) {
  try {
    validate(spec);
  } catch (const SpecError& e) {
    log << "error: " << e.what() << "\n";
    return kSpecInvalid;
  }
  const fs::path out = resolve_output(spec.output_dir);
  std::vector<io::DatasetBundle> datasets;
  try {
    fs::create_directories(out);
    datasets = prepare_datasets(spec);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRunFailure;
  }

  std::vector<Job> jobs;
  for (double ratio : spec.noise_ratios)
    for (int budget : spec.budgets)
      for (std::size_t s = 0; s < spec.seeds.size(); ++s)
        for (const auto& v : spec.variants) jobs.push_back({ratio, budget, s, v, spec.loop, "", 0.0});
  const std::vector<JobResult> results = run_pool(spec, datasets, jobs, log);

  std::string metrics = metrics_csv_header() + "\n";
  std::string edges = "dataset,ratio,budget,seed,variant,epoch,episode,step,edges_cut,reward\n";
  std::map<std::tuple<double, int, std::string>, std::vector<const MetricRow*>> cells;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i].outcome) {
      ++failures;
      continue;
    }
    const CellOutcome& c = *results[i].outcome;
    metrics += format_row(c.row) + "\n";
    const CellKey& k = c.row.key;
    const std::string prefix =
        k.dataset + "," + fmt(k.ratio) + "," + std::to_string(k.budget) + "," + seed_text(k.seed) + "," + k.variant;
    for (const auto& e : c.episodes) {
      edges += prefix + "," + std::to_string(e.epoch) + "," + std::to_string(e.episode) + "," +
               std::to_string(e.step) + "," + std::to_string(e.edges_cut) + "," + fmt(e.reward) + "\n";
    }
    cells[{k.ratio, k.budget, k.variant}].push_back(&c.row);
  }

  json summary = json::array();
  for (double ratio : spec.noise_ratios) {
    for (int budget : spec.budgets) {
      for (const auto& v : spec.variants) {
        auto it = cells.find({ratio, budget, v});
        if (it == cells.end()) continue;
        std::vector<double> auc, aupr, wall;
        for (const MetricRow* r : it->second) {
          auc.push_back(r->auc);
          aupr.push_back(r->aupr);
          wall.push_back(r->wallclock);
        }
        summary.push_back({{"dataset", it->second.front()->key.dataset},
                           {"ratio", ratio},
                           {"budget", budget},
                           {"variant", v},
                           {"runs", auc.size()},
                           {"auc", {{"mean", mean_of(auc)}, {"std", sample_std(auc)}}},
                           {"aupr", {{"mean", mean_of(aupr)}, {"std", sample_std(aupr)}}},
                           {"wallclock", {{"mean", mean_of(wall)}}}});
      }
    }
  }

  try {
    write_text(out / "metrics.csv", metrics);
    write_text(out / "edges_per_episode.csv", edges);
    write_text(out / "summary.json", json{{"cells", summary}}.dump(2) + "\n");
    write_text(out / "spec.json", emit_spec(spec));
    if (failures > 0) write_text(out / "failures.json", failures_json(jobs, results, spec));
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRunFailure;
  }
  log << "wrote " << (jobs.size() - failures) << " rows to " << (out / "metrics.csv").string();
  if (failures > 0) log << " (" << failures << " failed, see failures.json)";
  log << "\n";
  return failures > 0 ? kRunFailure : kOk;
}

int cmd_sweep_hyper(const ExperimentSpec& spec, std::ostream& log) {
  try {
    validate(spec);
    if (spec.alpha_grid.empty()) throw SpecError("sweep-hyper: alpha grid is empty");
    if (spec.nt_grid.empty()) throw SpecError("sweep-hyper: n_t grid is empty");
  } catch (const SpecError& e) {
    log << "error: " << e.what() << "\n";
    return kSpecInvalid;
  }
  const fs::path out = resolve_output(spec.output_dir);
  std::vector<io::DatasetBundle> datasets;
  try {
    fs::create_directories(out);
    datasets = prepare_datasets(spec);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRunFailure;
  }

  std::vector<Job> jobs;
  const auto add_point = [&](const std::string& axis, double value, const loop::LoopConfig& cfg) {
    for (double ratio : spec.noise_ratios)
      for (int budget : spec.budgets)
        for (std::size_t s = 0; s < spec.seeds.size(); ++s) jobs.push_back({ratio, budget, s, "regad", cfg, axis, value});
  };
  for (double a : spec.alpha_grid) {
    loop::LoopConfig cfg = spec.loop;
    cfg.confident_rate = a;
    add_point("alpha", a, cfg);
  }
  for (int nt : spec.nt_grid) {
    loop::LoopConfig cfg = spec.loop;
    cfg.pruner.max_edges_per_step = nt;
    add_point("n_t", nt, cfg);
  }
  const std::vector<JobResult> results = run_pool(spec, datasets, jobs, log);

  std::string rows = "axis,value," + metrics_csv_header() + "\n";
  std::string summary = "axis,value,ratio,budget,runs,mean_auc,mean_aupr\n";
  std::map<std::tuple<std::string, double, double, int>, std::vector<const MetricRow*>> points;
  std::vector<std::tuple<std::string, double, double, int>> order;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto key = std::make_tuple(jobs[i].axis, jobs[i].point, jobs[i].ratio, jobs[i].budget);
    if (points.find(key) == points.end()) {
      points[key];
      order.push_back(key);
    }
    if (!results[i].outcome) {
      ++failures;
      continue;
    }
    rows += jobs[i].axis + "," + fmt(jobs[i].point) + "," + format_row(results[i].outcome->row) + "\n";
    points[key].push_back(&results[i].outcome->row);
  }
  for (const auto& key : order) {
    const auto& rs = points[key];
    if (rs.empty()) continue;
    std::vector<double> auc, aupr;
    for (const MetricRow* r : rs) {
      auc.push_back(r->auc);
      aupr.push_back(r->aupr);
    }
    summary += std::get<0>(key) + "," + fmt(std::get<1>(key)) + "," + fmt(std::get<2>(key)) + "," +
               std::to_string(std::get<3>(key)) + "," + std::to_string(rs.size()) + "," + fmt(mean_of(auc)) + "," +
               fmt(mean_of(aupr)) + "\n";
  }
  try {
    write_text(out / "sweep.csv", rows);
    write_text(out / "sweep_summary.csv", summary);
    write_text(out / "spec.json", emit_spec(spec));
    if (failures > 0) write_text(out / "failures.json", failures_json(jobs, results, spec));
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRunFailure;
  }
  log << "wrote " << (jobs.size() - failures) << " sweep rows to " << (out / "sweep.csv").string() << "\n";
  return failures > 0 ? kRunFailure : kOk;
}

int cmd_gen(const io::SyntheticConfig& cfg, const fs::path& out, std::ostream& log) {
  try {
    io::validate(cfg);
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kSpecInvalid;
  }
  try {
    const io::DatasetBundle b = io::generate_synthetic(cfg);
    io::save_dataset(b, out);
    log << io::manifest_text(b);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRunFailure;
  }
  return kOk;
}

}  // namespace regad::harness

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "regad/data_io.hpp"
#include "regad/detector.hpp"
#include "regad/metrics.hpp"

using namespace regad;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("regad-test-data-io-" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string error_of(const fs::path& dir) {
  try {
    io::load_dataset(dir);
  } catch (const io::FormatError& e) {
    return e.what();
  }
  return "";
}

/// Bundle with the given counts: circulant edges (i, i+k) and the first
/// `anomalies` nodes anomalous.
io::DatasetBundle counted_bundle(const std::string& name, int n, std::size_t m, int anomalies) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (int k = 1; edges.size() < m; ++k)
    for (int i = 0; i < n && edges.size() < m; ++i) edges.emplace_back(i, (i + k) % n);
  Matrix x(n, 2);
  for (int i = 0; i < n; ++i) x.row(i) << i % 7, 0.5 * (i % 3);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < anomalies; ++i) labels[static_cast<std::size_t>(i)] = 1;
  return io::make_bundle(name, graph::build_graph(edges, x), labels, 0);
}

LabelVector clean_train_labels(const io::DatasetBundle& b) {
  LabelVector out(b.labels.size(), Label::Unlabeled);
  for (NodeId v : b.nodes_in(io::Split::Train))
    out[static_cast<std::size_t>(v)] = b.labels[static_cast<std::size_t>(v)] ? Label::Anomaly : Label::Normal;
  return out;
}

double pretrained_test_auc(const io::DatasetBundle& b, std::uint64_t seed) {
  Rng rng = derive_rng(seed, 50);
  const auto res = detector::pretrain_detector(b.graph, clean_train_labels(b), detector::DetectorConfig{}, rng);
  const auto s = detector::score_graph(graph::normalize_adjacency(b.graph), b.graph.features(), res.params);
  return metrics::evaluate(s.values, b.labels, b.nodes_in(io::Split::Test), "test").auc;
}

}  // namespace

TEST_CASE("stratified splits") {
  std::vector<int> labels(1000, 0);
  for (int v = 0; v < 50; ++v) labels[static_cast<std::size_t>(v * 20)] = 1;
  const auto s = io::assign_splits(labels, 3);
  int counts[2][3] = {};
  for (std::size_t v = 0; v < labels.size(); ++v) counts[labels[v]][static_cast<int>(s[v])]++;
  CHECK(counts[1][0] == 20);
  CHECK(counts[1][1] == 10);
  CHECK(counts[1][2] == 20);
  CHECK(counts[0][0] == 380);
  CHECK(counts[0][1] == 190);
  CHECK(counts[0][2] == 380);
  CHECK(io::assign_splits(labels, 3) == s);
  CHECK(io::assign_splits(labels, 4) != s);
}

TEST_CASE("synthetic generator") {
  io::SyntheticConfig cfg;
  cfg.seed = 5;
  const auto a = io::generate_synthetic(cfg);
  CHECK(a.graph.n() == 1000);
  CHECK(a.anomaly_count() == 50);
  CHECK(a.anomaly_ratio() == 0.05);
  const auto b = io::generate_synthetic(cfg);
  CHECK(a.graph.edges() == b.graph.edges());
  CHECK(a.graph.features() == b.graph.features());
  CHECK(a.labels == b.labels);
  cfg.seed = 6;
  CHECK(io::generate_synthetic(cfg).graph.edges() != a.graph.edges());

  io::SyntheticConfig bad;
  bad.anomaly_ratio = 0.6;
  CHECK_THROWS_AS(io::validate(bad), std::invalid_argument);
  bad.anomaly_ratio = 0.0;
  CHECK_THROWS_AS(io::validate(bad), std::invalid_argument);
  bad = {};
  bad.intra_prob = 1.5;
  CHECK_THROWS_AS(io::generate_synthetic(bad), std::invalid_argument);

  io::SyntheticConfig rewired;
  rewired.rewire_fraction = 0.0;
  rewired.seed = 5;
  const auto r = io::generate_synthetic(rewired);
  CHECK(r.anomaly_count() == 50);
  CHECK(r.labels == a.labels);
}

TEST_CASE("no shift and no rewiring leaves anomalies at chance") {
  double total = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    io::SyntheticConfig cfg;
    cfg.attribute_shift = 0.0;
    cfg.rewire_fraction = 0.0;
    cfg.seed = static_cast<std::uint64_t>(s);
    total += pretrained_test_auc(io::generate_synthetic(cfg), static_cast<std::uint64_t>(s));
  }
  CHECK(std::abs(total / seeds - 0.5) <= 0.05);
}

TEST_CASE("a five-sigma shift separates anomalies by feature norm") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    io::SyntheticConfig cfg;
    cfg.attribute_shift = 5.0;
    cfg.rewire_fraction = 0.0;
    cfg.seed = seed;
    const auto b = io::generate_synthetic(cfg);
    std::vector<double> norms;
    for (NodeId v = 0; v < b.graph.n(); ++v) norms.push_back(b.graph.features().row(v).norm());
    CHECK(oracle::brute_auc(norms, b.labels) > 0.95);
  }
}

TEST_CASE("dataset round trip") {
  io::SyntheticConfig cfg;
  cfg.n = 120;
  cfg.seed = 9;
  const auto b = io::generate_synthetic(cfg);
  const fs::path dir = scratch_dir("roundtrip");
  io::save_dataset(b, dir);
  const auto back = io::load_dataset(dir);
  CHECK(back.name == b.name);
  CHECK(back.graph.edges() == b.graph.edges());
  CHECK(back.graph.features() == b.graph.features());
  CHECK(back.labels == b.labels);
  CHECK(back.splits == b.splits);
  CHECK(io::manifest_text(back) == io::manifest_text(b));

  const fs::path again = scratch_dir("roundtrip-again");
  io::save_dataset(back, again);
  for (const char* f : {"manifest", "edges", "features", "labels"}) CHECK(slurp(dir / f) == slurp(again / f));
}

TEST_CASE("manifest ratios for real-dataset shapes") {
  struct Shape {
    const char* name;
    int n;
    std::size_t m;
    int anomalies;
    double ratio;
  };
  for (const Shape& s : {Shape{"clothing", 24919, 91680, 856, 0.0344}, Shape{"photo", 7487, 119043, 331, 0.0442}}) {
    const fs::path dir = scratch_dir(s.name);
    io::save_dataset(counted_bundle(s.name, s.n, s.m, s.anomalies), dir);
    const auto b = io::load_dataset(dir);
    CHECK(b.graph.n() == s.n);
    CHECK(b.graph.edge_count() == s.m);
    CHECK(b.anomaly_count() == static_cast<std::size_t>(s.anomalies));
    CHECK(b.anomaly_ratio() == doctest::Approx(s.ratio).epsilon(0.001));
    const std::string manifest = slurp(dir / "manifest");
    CHECK(manifest.find("nodes=" + std::to_string(s.n) + "\n") != std::string::npos);
    CHECK(manifest.find("anomalies=" + std::to_string(s.anomalies) + "\n") != std::string::npos);
  }
}

TEST_CASE("load errors name the file and line") {
  const auto b = counted_bundle("small", 10, 15, 2);
  const fs::path dir = scratch_dir("corrupt");

  io::save_dataset(b, dir);
  std::string features = slurp(dir / "features");
  features.resize(features.rfind('\n', features.size() - 2) + 1);  // drop the last row
  spit(dir / "features", features);
  const std::string truncated = error_of(dir);
  CHECK(truncated.find("features:11") != std::string::npos);
  CHECK(truncated.find("node 9") != std::string::npos);

  io::save_dataset(b, dir);
  std::string labels = slurp(dir / "labels");
  labels[2] = '7';
  spit(dir / "labels", labels);
  CHECK(error_of(dir).find("labels:2") != std::string::npos);

  io::save_dataset(b, dir);
  spit(dir / "edges", slurp(dir / "edges") + "3\t4\n");
  CHECK(error_of(dir).find("edges") != std::string::npos);

  io::save_dataset(b, dir);
  std::string feat = slurp(dir / "features");
  feat[feat.find('\n') + 1] = feat[feat.find('\n') + 1] == '1' ? '2' : '1';
  spit(dir / "features", feat);
  CHECK(error_of(dir).find("checksum") != std::string::npos);

  CHECK_THROWS_AS(io::load_dataset(scratch_dir("missing")), io::FormatError);
}

TEST_CASE("checkpoints") {
  Rng rng = derive_rng(1, 51);
  const nk::ParamStore p = detector::init_params(5, detector::DetectorConfig{}, rng);
  const fs::path dir = scratch_dir("ckpt");
  fs::create_directories(dir);
  CHECK(io::checkpoint_roundtrip(p, dir / "a.ckpt") == p);

  const nk::ParamStore empty;
  const nk::ParamStore back = io::checkpoint_roundtrip(empty, dir / "empty.ckpt");
  CHECK(back.empty());
  CHECK(slurp(dir / "empty.ckpt").rfind("regad-checkpoint 1\n", 0) == 0);

  std::string bytes = io::encode_checkpoint(p);
  const std::size_t payload = bytes.find("payload ");
  REQUIRE(payload != std::string::npos);
  std::string flipped = bytes;
  flipped[bytes.find('\n', payload) + 10] ^= 0x01;
  CHECK_THROWS_WITH_AS(io::decode_checkpoint(flipped), doctest::Contains("checksum"), io::FormatError);

  std::string version = bytes;
  version.replace(0, std::string("regad-checkpoint 1").size(), "regad-checkpoint 9");
  CHECK_THROWS_WITH_AS(io::decode_checkpoint(version), doctest::Contains("version"), io::FormatError);

  std::string shape = bytes;
  const std::size_t gcn0 = shape.find("gcn0 5 ");
  REQUIRE(gcn0 != std::string::npos);
  shape.replace(gcn0, 7, "gcn0 4 ");
  CHECK_THROWS_WITH_AS(io::decode_checkpoint(shape), doctest::Contains("inconsistent"), io::FormatError);
  CHECK_THROWS_AS(io::decode_checkpoint(bytes.substr(0, bytes.size() / 2)), io::FormatError);
}

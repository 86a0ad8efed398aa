#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "regad/graph.hpp"
#include "regad/numkernel.hpp"

namespace regad::io {

/// Malformed dataset or checkpoint content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { Train, Validation, Test };

const char* split_name(Split s);

/// Stratified 40/20/40 train/validation/test assignment. Each class is
/// shuffled with `seed` and cut at the 40% and 60% marks.
std::vector<Split> assign_splits(const std::vector<int>& labels, std::uint64_t seed);

struct DatasetBundle {
  std::string name;
  graph::AttributedGraph graph;
  std::vector<int> labels;  // clean 0/1 ground truth
  std::vector<Split> splits;
  std::uint64_t split_seed = 0;

  std::size_t anomaly_count() const;
  double anomaly_ratio() const;
  NodeSet nodes_in(Split s) const;
};

/// Bundle from in-memory parts; validates labels and derives the splits.
DatasetBundle make_bundle(std::string name, graph::AttributedGraph g, std::vector<int> labels, std::uint64_t split_seed);

struct SyntheticConfig {
  int n = 1000;
  int feature_dim = 32;
  double anomaly_ratio = 0.05;
  int communities = 10;
  double intra_prob = 0.08;
  double inter_prob = 0.002;
  double attribute_shift = 3.0;  // in units of the per-feature noise σ
  int shifted_dims = 8;
  double rewire_fraction = 0.3;  // share of each anomaly's edges moved to random other communities
  double center_scale = 1.0;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument unless 0 < r < 0.5 and probabilities lie in [0, 1].
void validate(const SyntheticConfig& cfg);

/// Community-structured graph with ⌊n·r⌉ planted anomalies. Anomalies get
/// features shifted by `attribute_shift` on `shifted_dims` dimensions and a
/// `rewire_fraction` of their edges rewired. Deterministic in `cfg.seed`.
DatasetBundle generate_synthetic(const SyntheticConfig& cfg);

/// FNV-1a 64-bit digest.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Directory layout: `manifest`, `edges`, `features`, `labels`.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
/// Throws FormatError naming the offending file and line on malformed input.
DatasetBundle load_dataset(const std::filesystem::path& dir);
/// The manifest text save_dataset writes.
std::string manifest_text(const DatasetBundle& bundle);

/// Versioned text shape table, little-endian float64 payload, checksum trailer.
std::string encode_checkpoint(const nk::ParamStore& params);
nk::ParamStore decode_checkpoint(std::string_view bytes);
void save_checkpoint(const nk::ParamStore& params, const std::filesystem::path& path);
nk::ParamStore load_checkpoint(const std::filesystem::path& path);
nk::ParamStore checkpoint_roundtrip(const nk::ParamStore& params, const std::filesystem::path& path);

}  // namespace regad::io

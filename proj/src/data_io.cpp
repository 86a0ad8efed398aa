#include "regad/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace regad::io {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kDatasetFormat = "regad-dataset-v1";
constexpr std::string_view kCheckpointMagic = "regad-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    if (end > pos) out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

[[noreturn]] void fail(const std::string& file, std::size_t line, const std::string& what) {
  throw FormatError(file + ":" + std::to_string(line) + ": " + what);
}

std::string format_double(double x) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf, static_cast<std::size_t>(len));
}

std::string edges_text(const graph::AttributedGraph& g) {
  std::string out;
  for (const graph::Edge& e : g.edges()) {
    out += std::to_string(e.i);
    out += '\t';
    out += std::to_string(e.j);
    out += '\n';
  }
  return out;
}

std::string features_text(const Matrix& x) {
  std::string out = std::to_string(x.rows()) + " " + std::to_string(x.cols()) + "\n";
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c > 0) out += ' ';
      out += format_double(x(r, c));
    }
    out += '\n';
  }
  return out;
}

std::string labels_text(const std::vector<int>& labels) {
  std::string out;
  out.reserve(labels.size() * 2);
  for (int y : labels) {
    out += static_cast<char>('0' + y);
    out += '\n';
  }
  return out;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<Split> assign_splits(const std::vector<int>& labels, std::uint64_t seed) {
  std::vector<Split> out(labels.size(), Split::Train);
  Rng rng = derive_rng(seed, 0x5b17);
  for (int cls : {0, 1}) {
    NodeSet members;
    for (std::size_t v = 0; v < labels.size(); ++v) {
      if (labels[v] == cls) members.push_back(static_cast<NodeId>(v));
    }
    shuffle(members, rng);
    const auto m = static_cast<double>(members.size());
    const auto train_end = static_cast<std::size_t>(std::lround(0.4 * m));
    const auto val_end = static_cast<std::size_t>(std::lround(0.6 * m));
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto v = static_cast<std::size_t>(members[k]);
      out[v] = k < train_end ? Split::Train : (k < val_end ? Split::Validation : Split::Test);
    }
  }
  return out;
}

std::size_t DatasetBundle::anomaly_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

double DatasetBundle::anomaly_ratio() const {
  return labels.empty() ? 0.0 : static_cast<double>(anomaly_count()) / static_cast<double>(labels.size());
}

NodeSet DatasetBundle::nodes_in(Split s) const {
  NodeSet out;
  for (std::size_t v = 0; v < splits.size(); ++v) {
    if (splits[v] == s) out.push_back(static_cast<NodeId>(v));
  }
  return out;
}

DatasetBundle make_bundle(std::string name, graph::AttributedGraph g, std::vector<int> labels, std::uint64_t split_seed) {
  if (static_cast<NodeId>(labels.size()) != g.n()) throw std::invalid_argument("make_bundle: label count differs from n");
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("make_bundle: labels must be 0 or 1");
  }
  DatasetBundle b;
  b.name = std::move(name);
  b.graph = std::move(g);
  b.splits = assign_splits(labels, split_seed);
  b.labels = std::move(labels);
  b.split_seed = split_seed;
  return b;
}

void validate(const SyntheticConfig& cfg) {
  if (cfg.n < 4) throw std::invalid_argument("synthetic: n must be at least 4");
  if (cfg.feature_dim < 1) throw std::invalid_argument("synthetic: feature_dim must be positive");
  if (!(cfg.anomaly_ratio > 0.0 && cfg.anomaly_ratio < 0.5)) {
    throw std::invalid_argument("synthetic: anomaly ratio must lie in (0, 0.5)");
  }
  for (double p : {cfg.intra_prob, cfg.inter_prob, cfg.rewire_fraction}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synthetic: probabilities must lie in [0, 1]");
  }
  if (cfg.communities < 1 || cfg.communities > cfg.n) throw std::invalid_argument("synthetic: bad community count");
  if (cfg.shifted_dims < 0 || cfg.shifted_dims > cfg.feature_dim) {
    throw std::invalid_argument("synthetic: shifted_dims must lie in [0, feature_dim]");
  }
}

DatasetBundle generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng = derive_rng(cfg.seed, 0x6e6e);
  const int n = cfg.n;
  const int d = cfg.feature_dim;
  const int c = cfg.communities;

  std::vector<int> community(static_cast<std::size_t>(n));
  for (int& k : community) k = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c)));
  std::vector<NodeSet> members(static_cast<std::size_t>(c));
  for (NodeId v = 0; v < n; ++v) members[static_cast<std::size_t>(community[static_cast<std::size_t>(v)])].push_back(v);

  Matrix centers(c, d);
  for (Eigen::Index k = 0; k < centers.size(); ++k) centers.data()[k] = cfg.center_scale * standard_normal(rng);

  NodeSet order(static_cast<std::size_t>(n));
  for (NodeId v = 0; v < n; ++v) order[static_cast<std::size_t>(v)] = v;
  shuffle(order, rng);
  const auto n_anom = static_cast<std::size_t>(std::lround(cfg.anomaly_ratio * n));
  NodeSet anomalies(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_anom));
  std::sort(anomalies.begin(), anomalies.end());
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (NodeId v : anomalies) labels[static_cast<std::size_t>(v)] = 1;

  std::vector<int> dims(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) dims[static_cast<std::size_t>(k)] = k;
  shuffle(dims, rng);
  dims.resize(static_cast<std::size_t>(cfg.shifted_dims));

  Matrix x(n, d);
  for (NodeId v = 0; v < n; ++v) {
    for (int k = 0; k < d; ++k) x(v, k) = centers(community[static_cast<std::size_t>(v)], k) + standard_normal(rng);
    if (labels[static_cast<std::size_t>(v)] == 1) {
      for (int k : dims) x(v, k) += cfg.attribute_shift;
    }
  }

  std::set<graph::Edge> edges;
  for (const NodeSet& group : members) {
    for (std::size_t a = 0; a < group.size(); ++a) {
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        if (uniform_unit(rng) < cfg.intra_prob) edges.insert(graph::canonical(group[a], group[b]));
      }
    }
  }
  double inter_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  for (const NodeSet& group : members) inter_pairs -= 0.5 * static_cast<double>(group.size()) * static_cast<double>(group.size() - 1);
  const auto n_inter = static_cast<std::size_t>(std::lround(cfg.inter_prob * inter_pairs));
  if (c > 1) {
    std::size_t added = 0;
    while (added < n_inter) {
      const auto a = static_cast<NodeId>(uniform_index(rng, static_cast<std::size_t>(n)));
      const auto b = static_cast<NodeId>(uniform_index(rng, static_cast<std::size_t>(n)));
      if (community[static_cast<std::size_t>(a)] == community[static_cast<std::size_t>(b)]) continue;
      if (edges.insert(graph::canonical(a, b)).second) ++added;
    }
  }

  if (cfg.rewire_fraction > 0.0 && c > 1) {
    for (NodeId v : anomalies) {
      std::vector<graph::Edge> own;
      for (const graph::Edge& e : edges) {
        if (e.i == v || e.j == v) own.push_back(e);
      }
      shuffle(own, rng);
      const auto moves = static_cast<std::size_t>(std::lround(cfg.rewire_fraction * static_cast<double>(own.size())));
      for (std::size_t k = 0; k < moves; ++k) {
        for (int attempt = 0; attempt < 64; ++attempt) {
          const auto w = static_cast<NodeId>(uniform_index(rng, static_cast<std::size_t>(n)));
          if (w == v || community[static_cast<std::size_t>(w)] == community[static_cast<std::size_t>(v)]) continue;
          const graph::Edge fresh = graph::canonical(v, w);
          if (edges.contains(fresh)) continue;
          edges.erase(own[k]);
          edges.insert(fresh);
          break;
        }
      }
    }
  }

  std::vector<graph::Edge> edge_list(edges.begin(), edges.end());
  graph::AttributedGraph g = graph::make_graph(n, std::move(edge_list), std::make_shared<const Matrix>(std::move(x)));
  return make_bundle("synthetic-" + std::to_string(cfg.seed), std::move(g), std::move(labels), cfg.seed);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string manifest_from_parts(const DatasetBundle& b, std::string_view edges, std::string_view features,
                                std::string_view labels) {
  std::string m;
  m += "format=" + std::string(kDatasetFormat) + "\n";
  m += "name=" + b.name + "\n";
  m += "nodes=" + std::to_string(b.graph.n()) + "\n";
  m += "edges=" + std::to_string(b.graph.edge_count()) + "\n";
  m += "features=" + std::to_string(b.graph.d()) + "\n";
  m += "anomalies=" + std::to_string(b.anomaly_count()) + "\n";
  m += "split_seed=" + std::to_string(b.split_seed) + "\n";
  m += "checksum_edges=" + hex64(fnv1a(edges)) + "\n";
  m += "checksum_features=" + hex64(fnv1a(features)) + "\n";
  m += "checksum_labels=" + hex64(fnv1a(labels)) + "\n";
  return m;
}

}  // namespace

std::string manifest_text(const DatasetBundle& b) {
  return manifest_from_parts(b, edges_text(b.graph), features_text(b.graph.features()), labels_text(b.labels));
}

void save_dataset(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string edges = edges_text(b.graph);
  const std::string features = features_text(b.graph.features());
  const std::string labels = labels_text(b.labels);
  write_file(dir / "edges", edges);
  write_file(dir / "features", features);
  write_file(dir / "labels", labels);
  write_file(dir / "manifest", manifest_from_parts(b, edges, features, labels));
}

DatasetBundle load_dataset(const fs::path& dir) {
  const std::string manifest = read_file(dir / "manifest");
  std::map<std::string, std::string, std::less<>> kv;
  {
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(manifest)) {
      ++line_no;
      if (line.empty() || line.front() == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) fail("manifest", line_no, "expected key=value");
      kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
  }
  const auto get = [&](std::string_view key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("manifest: missing key " + std::string(key));
    return it->second;
  };
  const auto get_count = [&](std::string_view key) {
    std::uint64_t v = 0;
    if (!parse_number(get(key), v)) throw FormatError("manifest: bad number for " + std::string(key));
    return v;
  };
  if (get("format") != kDatasetFormat) throw FormatError("manifest: unsupported format " + get("format"));
  const auto n = static_cast<NodeId>(get_count("nodes"));
  const std::uint64_t m = get_count("edges");
  const std::uint64_t d = get_count("features");
  const std::uint64_t anomalies = get_count("anomalies");
  const std::uint64_t split_seed = get_count("split_seed");

  const std::string edges_raw = read_file(dir / "edges");
  const std::string features_raw = read_file(dir / "features");
  const std::string labels_raw = read_file(dir / "labels");

  std::vector<std::pair<NodeId, NodeId>> edge_pairs;
  edge_pairs.reserve(m);
  {
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(edges_raw)) {
      ++line_no;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      NodeId a = 0;
      NodeId b = 0;
      if (tok.size() != 2 || !parse_number(tok[0], a) || !parse_number(tok[1], b)) {
        fail("edges", line_no, "expected two node ids");
      }
      if (a < 0 || b < 0 || a >= n || b >= n) fail("edges", line_no, "node id out of range");
      if (a >= b) fail("edges", line_no, "edge not in canonical i<j form");
      edge_pairs.emplace_back(a, b);
    }
  }
  if (edge_pairs.size() != m) {
    throw FormatError("edges: manifest says " + std::to_string(m) + " edges, file has " + std::to_string(edge_pairs.size()));
  }

  Matrix x;
  {
    const auto lines = split_lines(features_raw);
    if (lines.empty()) throw FormatError("features: missing header");
    const auto header = split_ws(lines[0]);
    std::uint64_t hn = 0;
    std::uint64_t hd = 0;
    if (header.size() != 2 || !parse_number(header[0], hn) || !parse_number(header[1], hd)) {
      fail("features", 1, "expected header 'n d'");
    }
    if (hn != static_cast<std::uint64_t>(n) || hd != d) fail("features", 1, "header disagrees with manifest");
    x.resize(n, static_cast<Eigen::Index>(d));
    for (NodeId r = 0; r < n; ++r) {
      const std::size_t line_no = static_cast<std::size_t>(r) + 2;
      if (line_no > lines.size()) fail("features", line_no, "missing row for node " + std::to_string(r));
      const auto tok = split_ws(lines[line_no - 1]);
      if (tok.size() != d) {
        fail("features", line_no, "row for node " + std::to_string(r) + " has " + std::to_string(tok.size()) +
                                      " values, expected " + std::to_string(d));
      }
      for (std::size_t k = 0; k < d; ++k) {
        double value = 0.0;
        if (!parse_number(tok[k], value)) fail("features", line_no, "bad number '" + std::string(tok[k]) + "'");
        x(r, static_cast<Eigen::Index>(k)) = value;
      }
    }
  }

  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  {
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(labels_raw)) {
      ++line_no;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      if (tok.size() != 1 || (tok[0] != "0" && tok[0] != "1")) fail("labels", line_no, "label must be 0 or 1");
      labels.push_back(tok[0] == "1" ? 1 : 0);
    }
  }
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw FormatError("labels: expected " + std::to_string(n) + " labels, found " + std::to_string(labels.size()));
  }
  if (static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1)) != anomalies) {
    throw FormatError("labels: anomaly count disagrees with manifest");
  }
  // Structural errors above name the offending line; a file that parses but
  // differs from what was saved is caught here.
  const std::pair<const char*, const std::string*> checks[] = {
      {"edges", &edges_raw}, {"features", &features_raw}, {"labels", &labels_raw}};
  for (const auto& [file, raw] : checks) {
    const auto it = kv.find(std::string("checksum_") + file);
    if (it != kv.end() && it->second != hex64(fnv1a(*raw))) {
      throw FormatError(std::string(file) + ": checksum does not match manifest");
    }
  }

  graph::AttributedGraph g = graph::build_graph(edge_pairs, std::move(x));
  if (g.edge_count() != m) throw FormatError("edges: duplicate edges present");
  return make_bundle(get("name"), std::move(g), std::move(labels), split_seed);
}

// ---------------------------------------------------------------------------

std::string encode_checkpoint(const nk::ParamStore& params) {
  std::string head = std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  head += "entries " + std::to_string(params.size()) + "\n";
  std::string payload;
  payload.reserve(params.scalar_count() * 8);
  for (const auto& e : params) {
    if (e.name.find_first_of(" \t\n") != std::string::npos) throw std::invalid_argument("checkpoint: bad name " + e.name);
    head += e.name + " " + std::to_string(e.value.rows()) + " " + std::to_string(e.value.cols()) + "\n";
    for (Eigen::Index k = 0; k < e.value.size(); ++k) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(e.value.data()[k]);
      for (int b = 0; b < 8; ++b) payload += static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  head += "payload " + std::to_string(payload.size()) + "\n";
  return head + payload + "checksum " + hex64(fnv1a(payload)) + "\n";
}

nk::ParamStore decode_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  const auto next_line = [&]() {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw FormatError("checkpoint: truncated header");
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  const auto magic = split_ws(next_line());
  int version = 0;
  if (magic.size() != 2 || magic[0] != kCheckpointMagic || !parse_number(magic[1], version)) {
    throw FormatError("checkpoint: not a checkpoint file");
  }
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count_line = split_ws(next_line());
  std::size_t count = 0;
  if (count_line.size() != 2 || count_line[0] != "entries" || !parse_number(count_line[1], count)) {
    throw FormatError("checkpoint: bad entry count");
  }
  struct Shape {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
  };
  std::vector<Shape> shapes;
  std::size_t expected = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const auto tok = split_ws(next_line());
    Shape s{};
    if (tok.size() != 3 || !parse_number(tok[1], s.rows) || !parse_number(tok[2], s.cols) || s.rows < 0 || s.cols < 0) {
      throw FormatError("checkpoint: bad shape line " + std::to_string(k));
    }
    s.name = std::string(tok[0]);
    expected += static_cast<std::size_t>(s.rows * s.cols) * 8;
    shapes.push_back(std::move(s));
  }
  const auto payload_line = split_ws(next_line());
  std::size_t payload_size = 0;
  if (payload_line.size() != 2 || payload_line[0] != "payload" || !parse_number(payload_line[1], payload_size)) {
    throw FormatError("checkpoint: bad payload header");
  }
  if (payload_size != expected) throw FormatError("checkpoint: shape table inconsistent with payload length");
  if (bytes.size() < pos + payload_size) throw FormatError("checkpoint: truncated payload");
  const std::string_view payload = bytes.substr(pos, payload_size);
  pos += payload_size;
  const auto trailer = split_ws(next_line());
  if (trailer.size() != 2 || trailer[0] != "checksum") throw FormatError("checkpoint: missing checksum trailer");
  if (trailer[1] != hex64(fnv1a(payload))) throw FormatError("checkpoint: checksum mismatch");

  nk::ParamStore out;
  std::size_t off = 0;
  for (const Shape& s : shapes) {
    Matrix m(s.rows, s.cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[off + b])) << (8 * b);
      off += 8;
      m.data()[k] = std::bit_cast<double>(bits);
    }
    out.add(s.name, std::move(m));
  }
  return out;
}

void save_checkpoint(const nk::ParamStore& params, const fs::path& path) { write_file(path, encode_checkpoint(params)); }

nk::ParamStore load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

nk::ParamStore checkpoint_roundtrip(const nk::ParamStore& params, const fs::path& path) {
  save_checkpoint(params, path);
  return load_checkpoint(path);
}

}  // namespace regad::io

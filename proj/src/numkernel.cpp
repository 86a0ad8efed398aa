#include "regad/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>

namespace regad::nk {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_tape(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, "nk: variables live on different tapes");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("nk::") + op + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.size() == 0) throw std::logic_error("nk: no gradient recorded for this variable");
  return node.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (backward_done_) throw std::logic_error("nk: backward already ran on this tape");
  const Node& out = nodes_.at(loss.id);
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw std::logic_error("nk: backward needs a scalar loss");
  }
  backward_done_ = true;
  if (!out.requires_grad) return;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.grad);
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.cols() == b.rows(), "nk::matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var spmm(const SparseMatrix& s, Var h) {
  require(s.cols() == h.rows(), "nk::spmm: inner dimensions differ");
  Matrix out = s * h.value();
  auto shared = std::make_shared<const SparseMatrix>(s);
  return h.tape->record(std::move(out), {h}, [shared, h](Tape& t, const Matrix& g) {
    t.accumulate(h, shared->transpose() * g);
  });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias);
  require(bias.rows() == 1 && bias.cols() == a.cols(), "nk::add_bias: bias must be 1 x cols");
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var cwise_product(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "cwise_product");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var affine(Var a, double scale, double shift) {
  Matrix out = (a.value().array() * scale + shift).matrix();
  return a.tape->record(std::move(out), {a},
                        [a, scale](Tape& t, const Matrix& g) { t.accumulate(a, g * scale); });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const Var y{a.tape, a.tape->size()};
  return a.tape->record(std::move(out), {a}, [a, y](Tape& t, const Matrix& g) {
    const Matrix& s = y.value();
    t.accumulate(a, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var log_sigmoid(Var a) {
  // log σ(x) = -softplus(-x) = min(x, 0) - log1p(exp(-|x|))
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(x)); });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var log(Var a) {
  Matrix out = a.value().array().log().matrix();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var abs(Var a) {
  Matrix out = a.value().cwiseAbs();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix sign = a.value().unaryExpr([](double x) { return double((x > 0.0) - (x < 0.0)); });
    t.accumulate(a, g.cwiseProduct(sign));
  });
}

Var gather_rows(Var a, std::span<const NodeId> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] >= 0 && rows[k] < a.rows(), "nk::gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(rows[k]);
  }
  std::vector<NodeId> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) d.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(a, d);
  });
}

Var pair_dot(Var a, std::span<const std::pair<NodeId, NodeId>> pairs) {
  Matrix out(static_cast<Eigen::Index>(pairs.size()), 1);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    require(i >= 0 && j >= 0 && i < a.rows() && j < a.rows(), "nk::pair_dot: row index out of range");
    out(static_cast<Eigen::Index>(k), 0) = a.value().row(i).dot(a.value().row(j));
  }
  std::vector<std::pair<NodeId, NodeId>> pr(pairs.begin(), pairs.end());
  return a.tape->record(std::move(out), {a}, [a, pr = std::move(pr)](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t k = 0; k < pr.size(); ++k) {
      const double gk = g(static_cast<Eigen::Index>(k), 0);
      d.row(pr[k].first) += gk * a.value().row(pr[k].second);
      d.row(pr[k].second) += gk * a.value().row(pr[k].first);
    }
    t.accumulate(a, d);
  });
}

Var weighted_sum(Var a, const Matrix& weights) {
  require_same_shape(a.value(), weights, "weighted_sum");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return a.tape->record(std::move(out), {a}, [a, weights](Tape& t, const Matrix& g) {
    t.accumulate(a, weights * g(0, 0));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "nk::mean: empty input");
  const double inv = 1.0 / static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() * inv;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) * inv));
  });
}

// ---------------------------------------------------------------------------

void ParamStore::add(std::string name, Matrix value) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

Matrix& ParamStore::at(std::string_view name) {
  for (Entry& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("ParamStore: no parameter named " + std::string(name));
}

const Matrix& ParamStore::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const Entry& e : entries_) total += static_cast<std::size_t>(e.value.size());
  return total;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const Entry& a = entries_[k];
    const Entry& b = other.entries_[k];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
    if (a.value.size() > 0 &&
        std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0) {
      return false;
    }
  }
  return true;
}

std::vector<Var> bind(Tape& tape, const ParamStore& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params) vars.push_back(tape.parameter(e.value));
  return vars;
}

ParamStore collect_gradients(const Tape& tape, std::span<const Var> vars, const ParamStore& params) {
  if (vars.size() != params.size()) throw std::invalid_argument("collect_gradients: size mismatch");
  ParamStore out;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const auto& e = params.entries()[k];
    out.add(e.name, tape.has_grad(vars[k]) ? tape.grad(vars[k])
                                           : Matrix::Zero(e.value.rows(), e.value.cols()).eval());
  }
  return out;
}

GradCheckReport grad_check(const LossFn& loss, const ParamStore& params, double tolerance,
                           double step) {
  ParamStore analytic;
  const double f0 = loss(params, &analytic);
  if (!std::isfinite(f0)) throw NonFiniteError("grad_check: loss is not finite");

  GradCheckReport report;
  ParamStore probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    auto& entry = probe.entries()[p];
    const Matrix& g = analytic.at(entry.name);
    for (Eigen::Index k = 0; k < entry.value.size(); ++k) {
      const double saved = entry.value.data()[k];
      entry.value.data()[k] = saved + step;
      const double up = loss(probe, nullptr);
      entry.value.data()[k] = saved - step;
      const double down = loss(probe, nullptr);
      entry.value.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g.data()[k];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw NonFiniteError("grad_check: non-finite gradient in " + entry.name);
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel;
        report.worst_param = entry.name;
        report.worst_index = k;
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace regad::nk

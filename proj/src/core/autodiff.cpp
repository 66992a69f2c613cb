// Copyright 2026 The retinavl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "retinavl/core/autodiff.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace retinavl::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) { return push({std::move(value), {}, {}, false, {}}); }

Var Tape::variable(Matrix value) { return push({std::move(value), {}, {}, true, {}}); }

Var Tape::param(const std::string& name, const Matrix& value) {
  return push({value, {}, {}, true, name});
}

std::map<std::string, Var> Tape::bind(const ParameterSet& params, const std::string& prefix, bool frozen) {
  std::map<std::string, Var> out;
  for (const auto& [name, m] : params) out.emplace(name, frozen ? constant(m) : param(prefix + name, m));
  return out;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || v.requires_grad();
  if (!needs) return push({std::move(value), {}, {}, false, {}});
  return push({std::move(value), {}, std::move(backward), true, {}});
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || v.requires_grad();
  if (!needs) return push({std::move(value), {}, {}, false, {}});
  return push({std::move(value), {}, std::move(backward), true, {}});
}

void Tape::backward(Var root) {
  RVL_CHECK(root.rows() == 1 && root.cols() == 1, ShapeError, "backward(root) needs a scalar root");
  backward({{root, Matrix::Ones(1, 1)}});
}

void Tape::backward(const std::vector<std::pair<Var, Matrix>>& seeds) {
  int last = -1;
  for (const auto& [v, g] : seeds) {
    RVL_CHECK(v.rows() == g.rows() && v.cols() == g.cols(), ShapeError, "seed gradient shape mismatch");
    add_grad(v.id(), g);
    last = std::max(last, v.id());
  }
  for (int id = last; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

void Tape::accumulate_param_grads(ParameterSet& grads, const std::string& strip_prefix) const {
  for (const auto& n : nodes_) {
    if (n.param_name.empty() || n.grad.size() == 0) continue;
    std::string name = n.param_name;
    if (!strip_prefix.empty()) {
      if (name.compare(0, strip_prefix.size(), strip_prefix) != 0) continue;
      name = name.substr(strip_prefix.size());
    }
    if (!grads.contains(name)) continue;
    grads[name] += n.grad;
  }
}

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  RVL_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), ShapeError,
            std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  RVL_CHECK(a.cols() == b.rows(), ShapeError, "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.add_grad(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.add_grad(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  RVL_CHECK(a.cols() == b.cols(), ShapeError, "matmul_nt: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.add_grad(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.add_grad(ib, g.transpose() * t.value(ia));
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape().record(a.value().transpose(), {a},
                         [ia](Tape& t, int self) { t.add_grad(ia, t.grad(self).transpose()); });
}

Var sparse_matmul(const SparseMatrix& s, Var a) {
  RVL_CHECK(s.cols() == a.rows(), ShapeError, "sparse_matmul: inner dimensions differ");
  const int ia = a.id();
  Matrix out = s * a.value();
  // The sparse operand is captured by value; callers typically cache and reuse it.
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, int self) {
    t.add_grad(ia, s.transpose() * t.grad(self));
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.add_grad(ia, t.grad(self));
    t.add_grad(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.add_grad(ia, t.grad(self));
    t.add_grad(ib, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.add_grad(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.add_grad(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape().record(a.value() * s, {a}, [ia, s](Tape& t, int self) { t.add_grad(ia, t.grad(self) * s); });
}

Var add_row(Var a, Var row) {
  RVL_CHECK(row.rows() == 1 && row.cols() == a.cols(), ShapeError, "add_row: row width mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.add_grad(ia, g);
    if (t.requires_grad(ir)) t.add_grad(ir, g.colwise().sum());
  });
}

Var add_const(Var a, const Matrix& c) {
  RVL_CHECK(a.rows() == c.rows() && a.cols() == c.cols(), ShapeError, "add_const: shape mismatch");
  const int ia = a.id();
  return a.tape().record(a.value() + c, {a}, [ia](Tape& t, int self) { t.add_grad(ia, t.grad(self)); });
}

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;

}  // namespace

Var gelu(Var a) {
  const int ia = a.id();
  const Matrix& x = a.value();
  const Eigen::ArrayXXd inner = kSqrt2OverPi * (x.array() + 0.044715 * x.array().cube());
  Matrix out = 0.5 * x.array() * (1.0 + inner.tanh());
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Eigen::ArrayXXd x = t.value(ia).array();
    const Eigen::ArrayXXd th = (kSqrt2OverPi * (x + 0.044715 * x.cube())).tanh();
    const Eigen::ArrayXXd d =
        0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * kSqrt2OverPi * (1.0 + 3 * 0.044715 * x.square());
    t.add_grad(ia, (t.grad(self).array() * d).matrix());
  });
}

Var relu(Var a) {
  const int ia = a.id();
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    t.add_grad(ia, (t.grad(self).array() * (t.value(ia).array() > 0.0).cast<double>()).matrix());
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Eigen::ArrayXXd y = t.value(self).array();
    t.add_grad(ia, (t.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var softmax_rows(Var a) {
  const int ia = a.id();
  const Matrix& x = a.value();
  const Vector m = x.rowwise().maxCoeff();
  Matrix e = (x.colwise() - m).array().exp();
  const Vector s = e.rowwise().sum();
  Matrix out = s.cwiseInverse().asDiagonal() * e;
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Matrix& p = t.value(self);
    const Matrix& g = t.grad(self);
    const Vector dot = p.cwiseProduct(g).rowwise().sum();
    t.add_grad(ia, p.cwiseProduct(g.colwise() - dot));
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  RVL_CHECK(gamma.rows() == 1 && gamma.cols() == a.cols() && beta.rows() == 1 && beta.cols() == a.cols(),
            ShapeError, "layer_norm: affine parameter width mismatch");
  const Matrix& x = a.value();
  const double width = static_cast<double>(x.cols());
  const Vector mu = x.rowwise().mean();
  const Matrix centered = x.colwise() - mu;
  const Vector inv_std = ((centered.array().square().rowwise().sum() / width) + eps).rsqrt();
  Matrix xhat = inv_std.asDiagonal() * centered;
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const int ia = a.id(), ig = gamma.id(), ib = beta.id();
  return a.tape().record(std::move(out), {a, gamma, beta},
                         [ia, ig, ib, xhat = std::move(xhat), inv_std, width](Tape& t, int self) {
                           const Matrix& g = t.grad(self);
                           if (t.requires_grad(ig)) t.add_grad(ig, g.cwiseProduct(xhat).colwise().sum());
                           if (t.requires_grad(ib)) t.add_grad(ib, g.colwise().sum());
                           if (!t.requires_grad(ia)) return;
                           const Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                           const Vector m1 = dxhat.rowwise().sum() / width;
                           const Vector m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / width;
                           Matrix dx = dxhat.colwise() - m1;
                           dx -= m2.asDiagonal() * xhat;
                           t.add_grad(ia, inv_std.asDiagonal() * dx);
                         });
}

Var l2_normalize_rows(Var a) {
  const int ia = a.id();
  const Vector norms = a.value().rowwise().norm();
  RVL_CHECK((norms.array() > 0).all(), NumericError, "l2_normalize_rows: zero row");
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return a.tape().record(std::move(out), {a}, [ia, norms](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const Vector radial = y.cwiseProduct(g).rowwise().sum();
    Matrix d = g - radial.asDiagonal() * y;
    t.add_grad(ia, norms.cwiseInverse().asDiagonal() * d);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  RVL_CHECK(start >= 0 && count >= 0 && start + count <= a.rows(), ShapeError, "slice_rows out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().record(a.value().middleRows(start, count), {a}, [ia, start, count, rows, cols](Tape& t, int self) {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleRows(start, count) = t.grad(self);
    t.add_grad(ia, g);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  RVL_CHECK(start >= 0 && count >= 0 && start + count <= a.cols(), ShapeError, "slice_cols out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().record(a.value().middleCols(start, count), {a}, [ia, start, count, rows, cols](Tape& t, int self) {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleCols(start, count) = t.grad(self);
    t.add_grad(ia, g);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  RVL_CHECK(!parts.empty(), ShapeError, "concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    RVL_CHECK(p.cols() == parts[0].cols(), ShapeError, "concat_rows: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].tape().record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (auto [id, start] : spans)
      if (t.requires_grad(id)) t.add_grad(id, g.middleRows(start, t.value(id).rows()));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  RVL_CHECK(!parts.empty(), ShapeError, "concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    RVL_CHECK(p.rows() == parts[0].rows(), ShapeError, "concat_cols: height mismatch");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].tape().record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (auto [id, start] : spans)
      if (t.requires_grad(id)) t.add_grad(id, g.middleCols(start, t.value(id).cols()));
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix& tab = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    RVL_CHECK(ids[k] >= 0 && ids[k] < tab.rows(), ShapeError, "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(k)) = tab.row(ids[k]);
  }
  const int it = table.id();
  return table.tape().record(std::move(out), {table}, [it, ids](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix d = Matrix::Zero(t.value(it).rows(), t.value(it).cols());
    for (std::size_t k = 0; k < ids.size(); ++k) d.row(ids[k]) += g.row(static_cast<Eigen::Index>(k));
    t.add_grad(it, d);
  });
}

Var sum(Var a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia, rows, cols](Tape& t, int self) {
    t.add_grad(ia, Matrix::Constant(rows, cols, t.grad(self)(0, 0)));
  });
}

Var mean(Var a) {
  RVL_CHECK(a.value().size() > 0, ShapeError, "mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace retinavl::ad

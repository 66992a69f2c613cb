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

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's gradient to its inputs. Nodes that do not depend on
// any gradient-requiring leaf skip the closure entirely, so a frozen network
// built from constants costs one forward pass and nothing more.
//
//   ad::Tape tape;
//   auto w = tape.param("w", weights);
//   auto y = ad::sum(ad::matmul(tape.constant(x), w));
//   tape.backward(y);
//   tape.accumulate_param_grads(grads);

#pragma once

#include "retinavl/core/params.hpp"
#include "retinavl/core/types.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <string>
#include <vector>

namespace retinavl::ad {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Unnamed leaf that accumulates a gradient.
  Var variable(Matrix value);
  /// Named leaf; its gradient is reported by accumulate_param_grads.
  Var param(const std::string& name, const Matrix& value);
  /// Binds every entry of `params` as a named leaf (or as constants when frozen).
  std::map<std::string, Var> bind(const ParameterSet& params, const std::string& prefix = "",
                                  bool frozen = false);

  /// Seeds d(root)/d(root) = 1 for a 1 x 1 root and runs the reverse sweep.
  void backward(Var root);
  /// Seeds arbitrary upstream gradients (same shapes as the seeded nodes).
  void backward(const std::vector<std::pair<Var, Matrix>>& seeds);

  /// Adds the gradient of every named leaf into `grads[prefix + name]`.
  void accumulate_param_grads(ParameterSet& grads, const std::string& strip_prefix = "") const;

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  using Backward = std::function<void(Tape&, int)>;
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// grad(id) += g, allocating on first use. Ignored for constant nodes.
  template <typename Derived>
  void add_grad(int id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    std::string param_name;
  };
  Var push(Node node);

  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// S * a for a constant sparse S.
Var sparse_matmul(const SparseMatrix& s, Var a);

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a + row, broadcasting a 1 x C row over all rows of a.
Var add_row(Var a, Var row);
Var add_const(Var a, const Matrix& c);
Var gelu(Var a);
Var relu(Var a);
Var sigmoid(Var a);

// Row-wise.
Var softmax_rows(Var a);
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var l2_normalize_rows(Var a);

// Shape.
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(Var table, const std::vector<int>& ids);

// Reductions.
Var sum(Var a);
Var mean(Var a);

}  // namespace retinavl::ad

// Copyright 2026 The nar-accent Authors
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

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; sequences are time-major
// (rows = frames, cols = channels).
//
// A Var is a cheap handle to a node of the computation graph. Ops build new
// nodes that remember their inputs; backward() walks the graph from a scalar
// root and accumulates gradients into every node that requires them. Nodes
// that do not (transitively) depend on a gradient-requiring leaf carry no
// backward closure, so teacher branches built from frozen parameters or
// detach() cost nothing in the backward pass.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace accent::ag {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row validity flags: 1 = real frame/phone, 0 = padding.
using Mask = std::vector<std::uint8_t>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;

  static Var constant(Matrix value);
  static Var leaf(Matrix value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Direct write access, for optimizers and finite differences only.
  Matrix& mutable_value() { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() != 0; }
  // Gradient accumulated by backward(); all zeros when nothing flowed in.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Matrix value, std::vector<Var> inputs,
                         std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

// Builds an op result. When no input requires a gradient the backward
// closure is dropped and the result is a constant.
Var make_result(Matrix value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

// Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
void backward(const Var& root);

// --- elementwise / linear algebra ----------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // Hadamard
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add_row(const Var& x, const Var& row);  // broadcast 1xC over rows
Var linear(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
Var tanh(const Var& x);
Var detach(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

// --- sequence ops ---------------------------------------------------------
// Softmax over each row; columns whose key_mask entry is 0 get weight 0.
Var masked_softmax(const Var& scores, std::span<const std::uint8_t> key_mask);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);
// out.row(i) = table.row(index[i]); index -1 yields a zero row.
Var gather_rows(const Var& table, std::span<const int> index);
// Same-padded 1-D convolution unfold: row t holds rows t-k/2 .. t+k/2 of x
// concatenated (zeros beyond the sequence ends). kernel must be odd.
Var im2col(const Var& x, int kernel);
Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
// Zeroes rows whose mask entry is 0.
Var mask_rows(const Var& x, std::span<const std::uint8_t> mask);
// Inverted dropout with a fixed Bernoulli mask drawn from rng.
Var dropout(const Var& x, double rate, std::mt19937_64& rng);

// --- reductions / losses --------------------------------------------------
Var sum(const Var& x);
// sum(x .* weights) for a constant weights matrix.
Var weighted_sum(const Var& x, const Matrix& weights);
// Mean of |a-b| over all entries of valid rows.
Var masked_l1_mean(const Var& a, const Var& b,
                   std::span<const std::uint8_t> mask);
// Mean of (a-b)^2 over all entries of valid rows.
Var masked_mse_mean(const Var& a, const Var& b,
                    std::span<const std::uint8_t> mask);
// Mean over valid rows of the row-wise Euclidean norm ||a_i - b_i||_2.
// The subgradient at a zero-norm row is taken as 0.
Var masked_row_l2_mean(const Var& a, const Var& b,
                       std::span<const std::uint8_t> mask);
// Mean over valid rows of the row-wise L1 norm ||a_i - b_i||_1.
Var masked_row_l1_mean(const Var& a, const Var& b,
                       std::span<const std::uint8_t> mask);

}  // namespace accent::ag

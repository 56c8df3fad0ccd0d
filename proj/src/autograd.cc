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

#include "accent/autograd.h"

#include <cassert>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "accent/error.h"
#include "accent/random.h"

namespace accent::ag {

namespace {

template <typename Expr>
void accumulate(Node& n, const Expr& g) {
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " +
                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
  }
}

void check_mask(std::span<const std::uint8_t> mask, Eigen::Index rows,
                const char* op) {
  if (static_cast<Eigen::Index>(mask.size()) != rows) {
    throw Error(std::string(op) + ": mask length " +
                std::to_string(mask.size()) + " != rows " +
                std::to_string(rows));
  }
}

Eigen::Index count_valid(std::span<const std::uint8_t> mask) {
  Eigen::Index n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

}  // namespace

Var Var::constant(Matrix value) { return leaf(std::move(value), false); }

Var Var::leaf(Matrix value, bool requires_grad) {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = requires_grad;
  return v;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw Error("item() on non-scalar");
  return node_->value(0, 0);
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

Var make_result(Matrix value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& v : inputs) out.node_->inputs.push_back(v.node());
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw Error("backward() needs a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Release intermediate gradients; leaves keep theirs.
  for (Node* n : order) {
    if (!n->inputs.empty()) n->grad.resize(0, 0);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    accumulate(in(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    accumulate(in(self, 1), -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b},
                     [](Node& self) {
                       Node& x = in(self, 0);
                       Node& y = in(self, 1);
                       if (x.requires_grad) {
                         accumulate(x, self.grad.cwiseProduct(y.value));
                       }
                       if (y.requires_grad) {
                         accumulate(y, self.grad.cwiseProduct(x.value));
                       }
                     });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    accumulate(in(self, 0), self.grad * s);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) {
      Matrix gx(x.value.rows(), x.value.cols());
      gx.noalias() = self.grad * y.value.transpose();
      accumulate(x, gx);
    }
    if (y.requires_grad) {
      Matrix gy(y.value.rows(), y.value.cols());
      gy.noalias() = x.value.transpose() * self.grad;
      accumulate(y, gy);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw Error("matmul_nt: inner dims " + std::to_string(a.cols()) +
                " vs " + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) {
      Matrix gx(x.value.rows(), x.value.cols());
      gx.noalias() = self.grad * y.value;
      accumulate(x, gx);
    }
    if (y.requires_grad) {
      Matrix gy(y.value.rows(), y.value.cols());
      gy.noalias() = self.grad.transpose() * x.value;
      accumulate(y, gy);
    }
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw Error("add_row: expected 1x" + std::to_string(x.cols()) +
                " row, got " + std::to_string(row.rows()) + "x" +
                std::to_string(row.cols()));
  }
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {x, row}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    if (in(self, 1).requires_grad) {
      accumulate(in(self, 1), self.grad.colwise().sum());
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  return add_row(matmul(x, weight), bias);
}

Var relu(const Var& x) {
  return make_result(x.value().cwiseMax(0.0), {x}, [](Node& self) {
    Node& a = in(self, 0);
    accumulate(a, (a.value.array() > 0.0)
                      .select(self.grad.array(), 0.0)
                      .matrix());
  });
}

Var tanh(const Var& x) {
  return make_result(x.value().array().tanh().matrix(), {x}, [](Node& self) {
    accumulate(in(self, 0),
               self.grad.cwiseProduct(
                   (1.0 - self.value.array().square()).matrix()));
  });
}

Var detach(const Var& x) { return Var::constant(x.value()); }

Var masked_softmax(const Var& scores, std::span<const std::uint8_t> key_mask) {
  check_mask(key_mask, scores.cols(), "masked_softmax");
  const Matrix& s = scores.value();
  Matrix p = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (key_mask[j]) mx = std::max(mx, s(i, j));
    }
    if (!std::isfinite(mx)) continue;  // no valid key: all-zero row
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (key_mask[j]) {
        p(i, j) = std::exp(s(i, j) - mx);
        z += p(i, j);
      }
    }
    p.row(i) /= z;
  }
  return make_result(std::move(p), {scores}, [](Node& self) {
    const Matrix& p = self.value;
    Eigen::VectorXd dot = (self.grad.cwiseProduct(p)).rowwise().sum();
    Matrix g = self.grad;
    g.colwise() -= dot;
    accumulate(in(self, 0), g.cwiseProduct(p));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 ||
      beta.cols() != c) {
    throw Error("layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  Matrix xhat(n, c);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var =
        (x.value().row(i).array() - mu).square().sum() / static_cast<double>(c);
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * rstd(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), rstd = std::move(rstd), c](Node& self) {
        Node& xn = in(self, 0);
        Node& gn = in(self, 1);
        Node& bn = in(self, 2);
        if (gn.requires_grad) {
          accumulate(gn, self.grad.cwiseProduct(xhat).colwise().sum());
        }
        if (bn.requires_grad) {
          accumulate(bn, self.grad.colwise().sum());
        }
        if (xn.requires_grad) {
          Matrix dxhat = self.grad;
          dxhat.array().rowwise() *= gn.value.row(0).array();
          Matrix dx(dxhat.rows(), c);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
            const double m1 = dxhat.row(i).sum() * inv_c;
            const double m2 = dxhat.row(i).dot(xhat.row(i)) * inv_c;
            dx.row(i) =
                rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2)
                              .matrix();
          }
          accumulate(xn, dx);
        }
      });
}

Var gather_rows(const Var& table, std::span<const int> index) {
  const Eigen::Index rows = static_cast<Eigen::Index>(index.size());
  Matrix out = Matrix::Zero(rows, table.cols());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int k = index[i];
    if (k < 0) continue;
    if (k >= table.rows()) {
      throw Error("gather_rows: index " + std::to_string(k) +
                  " out of range for " + std::to_string(table.rows()) +
                  " rows");
    }
    out.row(i) = table.value().row(k);
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_result(std::move(out), {table},
                     [idx = std::move(idx)](Node& self) {
                       Node& t = in(self, 0);
                       Matrix g = Matrix::Zero(t.value.rows(), t.value.cols());
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         if (idx[i] >= 0) {
                           g.row(idx[i]) += self.grad.row(
                               static_cast<Eigen::Index>(i));
                         }
                       }
                       accumulate(t, g);
                     });
}

Var im2col(const Var& x, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw Error("im2col: kernel must be odd, got " + std::to_string(kernel));
  }
  const Eigen::Index t = x.rows();
  const Eigen::Index c = x.cols();
  const int half = kernel / 2;
  Matrix out = Matrix::Zero(t, c * kernel);
  for (Eigen::Index r = 0; r < t; ++r) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = r + j - half;
      if (src >= 0 && src < t) {
        out.block(r, j * c, 1, c) = x.value().row(src);
      }
    }
  }
  return make_result(std::move(out), {x}, [kernel, half, t, c](Node& self) {
    Matrix g = Matrix::Zero(t, c);
    for (Eigen::Index r = 0; r < t; ++r) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = r + j - half;
        if (src >= 0 && src < t) g.row(src) += self.grad.block(r, j * c, 1, c);
      }
    }
    accumulate(in(self, 0), g);
  });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel) {
  if (kernel == 1) return linear(x, weight, bias);
  return linear(im2col(x, kernel), weight, bias);
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw Error("slice_cols: range out of bounds");
  }
  Matrix out = x.value().middleCols(start, count);
  return make_result(std::move(out), {x}, [start, count](Node& self) {
    Node& a = in(self, 0);
    Matrix g = Matrix::Zero(a.value.rows(), a.value.cols());
    g.middleCols(start, count) = self.grad;
    accumulate(a, g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return make_result(std::move(out), parts,
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         Node& p = *self.inputs[i];
                         accumulate(p, self.grad.middleCols(offsets[i],
                                                            p.value.cols()));
                       }
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return make_result(std::move(out), parts,
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         Node& p = *self.inputs[i];
                         accumulate(p, self.grad.middleRows(offsets[i],
                                                            p.value.rows()));
                       }
                     });
}

Var mask_rows(const Var& x, std::span<const std::uint8_t> mask) {
  check_mask(mask, x.rows(), "mask_rows");
  Matrix out = x.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (!mask[i]) out.row(i).setZero();
  }
  Mask m(mask.begin(), mask.end());
  return make_result(std::move(out), {x}, [m = std::move(m)](Node& self) {
    Matrix g = self.grad;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (!m[i]) g.row(i).setZero();
    }
    accumulate(in(self, 0), g);
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw Error("dropout rate must be < 1");
  Matrix m(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = uniform01(rng) < rate ? 0.0 : s;
  }
  return mul(x, Var::constant(std::move(m)));
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& a = in(self, 0);
    accumulate(a, Matrix::Constant(a.value.rows(), a.value.cols(),
                                   self.grad(0, 0)));
  });
}

Var weighted_sum(const Var& x, const Matrix& weights) {
  if (weights.rows() != x.rows() || weights.cols() != x.cols()) {
    throw Error("weighted_sum: shape mismatch");
  }
  Matrix out(1, 1);
  out(0, 0) = x.value().cwiseProduct(weights).sum();
  return make_result(std::move(out), {x}, [weights](Node& self) {
    accumulate(in(self, 0), weights * self.grad(0, 0));
  });
}

Var masked_l1_mean(const Var& a, const Var& b,
                   std::span<const std::uint8_t> mask) {
  check_same_shape(a, b, "masked_l1_mean");
  check_mask(mask, a.rows(), "masked_l1_mean");
  const Eigen::Index valid = count_valid(mask);
  const double denom = static_cast<double>(std::max<Eigen::Index>(valid, 1) *
                                           std::max<Eigen::Index>(a.cols(), 1));
  Matrix sign = Matrix::Zero(a.rows(), a.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!mask[i]) continue;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = a.value()(i, j) - b.value()(i, j);
      total += std::abs(d);
      sign(i, j) = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total / denom;
  return make_result(std::move(out), {a, b},
                     [sign = std::move(sign), denom](Node& self) {
                       const double g = self.grad(0, 0) / denom;
                       accumulate(in(self, 0), sign * g);
                       accumulate(in(self, 1), sign * -g);
                     });
}

Var masked_mse_mean(const Var& a, const Var& b,
                    std::span<const std::uint8_t> mask) {
  check_same_shape(a, b, "masked_mse_mean");
  check_mask(mask, a.rows(), "masked_mse_mean");
  const Eigen::Index valid = count_valid(mask);
  const double denom = static_cast<double>(std::max<Eigen::Index>(valid, 1) *
                                           std::max<Eigen::Index>(a.cols(), 1));
  Matrix diff = a.value() - b.value();
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    if (!mask[i]) diff.row(i).setZero();
  }
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / denom;
  return make_result(std::move(out), {a, b},
                     [diff = std::move(diff), denom](Node& self) {
                       const double g = 2.0 * self.grad(0, 0) / denom;
                       accumulate(in(self, 0), diff * g);
                       accumulate(in(self, 1), diff * -g);
                     });
}

Var masked_row_l2_mean(const Var& a, const Var& b,
                       std::span<const std::uint8_t> mask) {
  check_same_shape(a, b, "masked_row_l2_mean");
  check_mask(mask, a.rows(), "masked_row_l2_mean");
  const double denom =
      static_cast<double>(std::max<Eigen::Index>(count_valid(mask), 1));
  Matrix unit = Matrix::Zero(a.rows(), a.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!mask[i]) continue;
    const auto d = a.value().row(i) - b.value().row(i);
    const double norm = d.norm();
    total += norm;
    if (norm > 0.0) unit.row(i) = d / norm;
  }
  Matrix out(1, 1);
  out(0, 0) = total / denom;
  return make_result(std::move(out), {a, b},
                     [unit = std::move(unit), denom](Node& self) {
                       const double g = self.grad(0, 0) / denom;
                       accumulate(in(self, 0), unit * g);
                       accumulate(in(self, 1), unit * -g);
                     });
}

Var masked_row_l1_mean(const Var& a, const Var& b,
                       std::span<const std::uint8_t> mask) {
  check_same_shape(a, b, "masked_row_l1_mean");
  check_mask(mask, a.rows(), "masked_row_l1_mean");
  const double denom =
      static_cast<double>(std::max<Eigen::Index>(count_valid(mask), 1));
  Matrix sign = Matrix::Zero(a.rows(), a.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!mask[i]) continue;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = a.value()(i, j) - b.value()(i, j);
      total += std::abs(d);
      sign(i, j) = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total / denom;
  return make_result(std::move(out), {a, b},
                     [sign = std::move(sign), denom](Node& self) {
                       const double g = self.grad(0, 0) / denom;
                       accumulate(in(self, 0), sign * g);
                       accumulate(in(self, 1), sign * -g);
                     });
}

}  // namespace accent::ag

// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rpn/autodiff.hpp"

#include "rpn/common.hpp"
#include "rpn/errors.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rpn::ad {

namespace {

using HeadView = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using MutableHeadView = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

#if defined(__GLIBC__)
// Graph tensors are large and short-lived. Keeping them on the heap instead
// of fresh mmaps avoids page-faulting every activation on every batch.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                        b.shape_string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

Parameter& ParameterSet::add(const std::string& name, Shape shape, std::size_t fan_in) {
  if (contains(name)) {
    throw ValidationError("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& x : p->value.values()) x = rpn::uniform(rng_, -bound, bound);
  p->grad = Tensor(p->value.shape());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::add_zeros(const std::string& name, Shape shape) {
  if (contains(name)) {
    throw ValidationError("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(std::move(shape));
  p->grad = Tensor(p->value.shape());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw ValidationError("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return *p;
  throw ValidationError("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Graph plumbing

Var Graph::push(Tensor value, bool requires_grad,
                std::function<void(Graph&, std::uint32_t)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buffer(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::parameter(Parameter& p) {
  auto v = push(p.value, true, [](Graph& g, std::uint32_t self) {
    auto& node = g.nodes_[self];
    if (node.param->grad.shape() != node.value.shape()) {
      node.param->grad = Tensor(node.value.shape());
    }
    node.param->grad.matrix() += node.grad.matrix();
  });
  nodes_[v.id].param = &p;
  return v;
}

void Graph::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ValidationError("backward: loss must be scalar, got shape " +
                          nodes_[loss.id].value.shape_string());
  }
  if (!nodes_[loss.id].requires_grad) {
    return;
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    n.backprop(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows() || B.rank() > 2) {
    shape_error("matmul", A, B);
  }
  Shape shape = A.shape().empty() ? Shape{1} : A.shape();
  shape.back() = B.cols();
  Tensor out(shape);
  out.matrix().noalias() = A.matrix() * B.matrix();
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& dC = g.nodes_[self].grad.matrix();
    if (g.needs(a)) g.grad_buffer(a.id).matrix().noalias() += dC * g.value(b).matrix().transpose();
    if (g.needs(b)) g.grad_buffer(b.id).matrix().noalias() += g.value(a).matrix().transpose() * dC;
  });
}

Var Graph::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() == B.shape()) {
    Tensor out(A.shape());
    out.matrix() = A.matrix() + B.matrix();
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
      const auto& dC = g.nodes_[self].grad.matrix();
      if (g.needs(a)) g.grad_buffer(a.id).matrix() += dC;
      if (g.needs(b)) g.grad_buffer(b.id).matrix() += dC;
    });
  }
  if (B.rows() != 1 || B.cols() != A.cols()) {
    shape_error("add", A, B);
  }
  Tensor out(A.shape());
  out.matrix() = A.matrix().rowwise() + B.matrix().row(0);
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& dC = g.nodes_[self].grad.matrix();
    if (g.needs(a)) g.grad_buffer(a.id).matrix() += dC;
    if (g.needs(b)) g.grad_buffer(b.id).matrix().row(0) += dC.colwise().sum();
  });
}

Var Graph::sub(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() != B.shape()) shape_error("sub", A, B);
  Tensor out(A.shape());
  out.matrix() = A.matrix() - B.matrix();
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& dC = g.nodes_[self].grad.matrix();
    if (g.needs(a)) g.grad_buffer(a.id).matrix() += dC;
    if (g.needs(b)) g.grad_buffer(b.id).matrix() -= dC;
  });
}

Var Graph::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() != B.shape()) shape_error("mul", A, B);
  Tensor out(A.shape());
  out.matrix() = A.matrix().cwiseProduct(B.matrix());
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& dC = g.nodes_[self].grad.matrix();
    if (g.needs(a)) g.grad_buffer(a.id).matrix() += dC.cwiseProduct(g.value(b).matrix());
    if (g.needs(b)) g.grad_buffer(b.id).matrix() += dC.cwiseProduct(g.value(a).matrix());
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out(value(a).shape());
  out.matrix() = value(a).matrix() * s;
  return push(std::move(out), needs(a), [a, s](Graph& g, std::uint32_t self) {
    g.grad_buffer(a.id).matrix() += g.nodes_[self].grad.matrix() * s;
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Var Graph::relu(Var a) { return leaky_relu(a, 0.0); }

Var Graph::leaky_relu(Var a, double slope) {
  const auto& A = value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0 ? A[i] : slope * A[i];
  return push(std::move(out), needs(a), [a, slope](Graph& g, std::uint32_t self) {
    const auto& x = g.value(a);
    const auto& dy = g.nodes_[self].grad;
    auto& dx = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > 0 ? dy[i] : slope * dy[i];
  });
}

Var Graph::sigmoid(Var a) {
  const auto& A = value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double x = A[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto& y = g.nodes_[self].value;
    const auto& dy = g.nodes_[self].grad;
    auto& dx = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::sin(Var a) {
  Tensor out(value(a).shape());
  out.matrix() = value(a).matrix().array().sin().matrix();
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    g.grad_buffer(a.id).matrix().array() +=
        g.nodes_[self].grad.matrix().array() * g.value(a).matrix().array().cos();
  });
}

Var Graph::cos(Var a) {
  Tensor out(value(a).shape());
  out.matrix() = value(a).matrix().array().cos().matrix();
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    g.grad_buffer(a.id).matrix().array() -=
        g.nodes_[self].grad.matrix().array() * g.value(a).matrix().array().sin();
  });
}

Var Graph::softmax(Var a) {
  const auto& A = value(a);
  Tensor out(A.shape());
  auto y = out.matrix();
  const auto x = A.matrix();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto y = g.nodes_[self].value.matrix();
    const auto dy = g.nodes_[self].grad.matrix();
    auto dx = g.grad_buffer(a.id).matrix();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(dy.row(r));
      dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  const auto& first = value(parts[0]);
  std::size_t cols = 0;
  bool grad = false;
  for (const auto& p : parts) {
    const auto& t = value(p);
    if (t.rows() != first.rows() || t.rank() != first.rank()) shape_error("concat", first, t);
    cols += t.cols();
    grad = grad || needs(p);
  }
  Shape shape = first.shape();
  shape.back() = cols;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& t = value(p);
    out.matrix().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(t.cols())) =
        t.matrix();
    offset += t.cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), grad, [ids](Graph& g, std::uint32_t self) {
    const auto dy = g.nodes_[self].grad.matrix();
    std::size_t offset = 0;
    for (const auto& p : ids) {
      const auto c = static_cast<Eigen::Index>(g.value(p).cols());
      if (g.needs(p)) g.grad_buffer(p.id).matrix() += dy.middleCols(static_cast<Eigen::Index>(offset), c);
      offset += static_cast<std::size_t>(c);
    }
  });
}

Var Graph::vstack(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("vstack: no inputs");
  const auto cols = value(parts[0]).cols();
  std::size_t rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    if (value(p).cols() != cols) shape_error("vstack", value(parts[0]), value(p));
    rows += value(p).rows();
    grad = grad || needs(p);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& t = value(p);
    std::copy(t.data(), t.data() + t.size(), out.data() + offset);
    offset += t.size();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), grad, [ids](Graph& g, std::uint32_t self) {
    const auto& dy = g.nodes_[self].grad;
    std::size_t offset = 0;
    for (const auto& p : ids) {
      const auto n = g.value(p).size();
      if (g.needs(p)) {
        auto& dx = g.grad_buffer(p.id);
        for (std::size_t i = 0; i < n; ++i) dx[i] += dy[offset + i];
      }
      offset += n;
    }
  });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const auto& A = value(a);
  if (begin >= end || end > A.cols()) {
    throw ValidationError("slice_cols: range [" + std::to_string(begin) + ", " +
                          std::to_string(end) + ") out of shape " + A.shape_string());
  }
  Shape shape = A.shape();
  shape.back() = end - begin;
  Tensor out(shape);
  out.matrix() = A.matrix().middleCols(static_cast<Eigen::Index>(begin),
                                       static_cast<Eigen::Index>(end - begin));
  return push(std::move(out), needs(a), [a, begin, end](Graph& g, std::uint32_t self) {
    g.grad_buffer(a.id).matrix().middleCols(static_cast<Eigen::Index>(begin),
                                            static_cast<Eigen::Index>(end - begin)) +=
        g.nodes_[self].grad.matrix();
  });
}

Var Graph::gather_rows(Var a, std::vector<std::uint32_t> rows) {
  const auto& A = value(a);
  const auto cols = A.cols();
  const auto n_rows = A.rows();
  Tensor out({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n_rows) {
      throw ValidationError("gather_rows: index " + std::to_string(rows[r]) + " out of " +
                            A.shape_string());
    }
    std::copy_n(A.data() + rows[r] * cols, cols, out.data() + r * cols);
  }
  auto v = push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto& idx = g.nodes_[self].aux_index;
    const auto& dy = g.nodes_[self].grad;
    auto& dx = g.grad_buffer(a.id);
    const auto cols = dx.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = dx.data() + idx[r] * cols;
      const double* src = dy.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
  nodes_[v.id].aux_index = std::move(rows);
  return v;
}

Var Graph::reshape(Var a, Shape shape) {
  auto out = value(a).reshaped(std::move(shape));
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto& dy = g.nodes_[self].grad;
    auto& dx = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

// kind: 0 mean, 1 max, 2 sum
Var Graph::reduce(Var a, std::size_t axis, int kind) {
  const auto& A = value(a);
  if (axis >= A.rank()) {
    throw ValidationError("pool: axis " + std::to_string(axis) + " out of range for " +
                          A.shape_string());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= A.dim(i);
  for (std::size_t i = axis + 1; i < A.rank(); ++i) inner *= A.dim(i);
  const std::size_t len = A.dim(axis);
  if (len == 0) throw ValidationError("pool: empty axis");
  Shape shape = A.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape);
  std::vector<std::uint32_t> argmax;
  if (kind == 1) argmax.resize(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double* src = A.data() + o * len * inner + i;
      double acc = kind == 1 ? src[0] : 0.0;
      std::uint32_t best = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const double x = src[l * inner];
        if (kind == 1) {
          if (x > acc) {
            acc = x;
            best = static_cast<std::uint32_t>(l);
          }
        } else {
          acc += x;
        }
      }
      if (kind == 0) acc /= static_cast<double>(len);
      out[o * inner + i] = acc;
      if (kind == 1) argmax[o * inner + i] = best;
    }
  }
  auto v = push(std::move(out), needs(a), [a, outer, inner, len, kind](Graph& g, std::uint32_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& arg = g.nodes_[self].aux_index;
    auto& dx = g.grad_buffer(a.id);
    const double w = kind == 0 ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const double gy = dy[o * inner + i];
        double* dst = dx.data() + o * len * inner + i;
        if (kind == 1) {
          dst[arg[o * inner + i] * inner] += gy;
        } else {
          for (std::size_t l = 0; l < len; ++l) dst[l * inner] += w * gy;
        }
      }
    }
  });
  nodes_[v.id].aux_index = std::move(argmax);
  return v;
}

Var Graph::mean_pool(Var a, std::size_t axis) { return reduce(a, axis, 0); }
Var Graph::max_pool(Var a, std::size_t axis) { return reduce(a, axis, 1); }
Var Graph::sum(Var a, std::size_t axis) { return reduce(a, axis, 2); }

Var Graph::mean_all(Var a) {
  const auto& A = value(a);
  auto flat = reshape(a, Shape{A.size()});
  return mean_pool(flat, 0);
}

// ---------------------------------------------------------------------------
// Attention

Var Graph::attention(Var q, Var k, Var v, AttentionLayout L) {
  const auto& Q = value(q);
  const auto& K = value(k);
  const auto& V = value(v);
  const std::size_t d = Q.cols();
  if (L.heads == 0 || d % L.heads != 0 || K.cols() != d || V.cols() != d ||
      Q.rows() != L.groups * L.nq || K.rows() != L.groups * L.nk || V.rows() != K.rows() ||
      L.nk == 0) {
    throw ValidationError("attention: shapes q" + Q.shape_string() + " k" + K.shape_string() +
                          " v" + V.shape_string() + " do not match layout groups=" +
                          std::to_string(L.groups) + " nq=" + std::to_string(L.nq) +
                          " nk=" + std::to_string(L.nk) + " heads=" + std::to_string(L.heads));
  }
  const std::size_t dh = d / L.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto nq = static_cast<Eigen::Index>(L.nq);
  const auto nk = static_cast<Eigen::Index>(L.nk);
  const auto dhi = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
  Tensor out({L.groups * L.nq, d});
  AlignedVector weights(L.groups * L.heads * L.nq * L.nk);
  for (std::size_t g = 0; g < L.groups; ++g) {
    for (std::size_t h = 0; h < L.heads; ++h) {
      const std::size_t c0 = h * dh;
      HeadView Qh(Q.data() + g * L.nq * d + c0, nq, dhi, stride);
      HeadView Kh(K.data() + g * L.nk * d + c0, nk, dhi, stride);
      HeadView Vh(V.data() + g * L.nk * d + c0, nk, dhi, stride);
      MutableHeadView Oh(out.data() + g * L.nq * d + c0, nq, dhi, stride);
      MatrixMap A(weights.data() + (g * L.heads + h) * L.nq * L.nk, nq, nk);
      A.noalias() = Qh.lazyProduct(Kh.transpose()) * sc;
      for (Eigen::Index i = 0; i < nq; ++i) {
        auto row = A.row(i);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      Oh.noalias() = A.lazyProduct(Vh);
    }
  }
  auto node = push(std::move(out), needs(q) || needs(k) || needs(v),
                   [q, k, v, L, dh, sc](Graph& gr, std::uint32_t self) {
    const auto& Q = gr.value(q);
    const auto& K = gr.value(k);
    const auto& V = gr.value(v);
    const auto& dO = gr.nodes_[self].grad;
    const auto& W = gr.nodes_[self].aux;
    const std::size_t d = Q.cols();
    const auto nq = static_cast<Eigen::Index>(L.nq);
    const auto nk = static_cast<Eigen::Index>(L.nk);
    const auto dhi = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    Tensor* dQ = gr.needs(q) ? &gr.grad_buffer(q.id) : nullptr;
    Tensor* dK = gr.needs(k) ? &gr.grad_buffer(k.id) : nullptr;
    Tensor* dV = gr.needs(v) ? &gr.grad_buffer(v.id) : nullptr;
    RowMatrix dS(nq, nk);
    for (std::size_t g = 0; g < L.groups; ++g) {
      for (std::size_t h = 0; h < L.heads; ++h) {
        const std::size_t c0 = h * dh;
        const std::size_t qoff = g * L.nq * d + c0;
        const std::size_t koff = g * L.nk * d + c0;
        HeadView Qh(Q.data() + qoff, nq, dhi, stride);
        HeadView Kh(K.data() + koff, nk, dhi, stride);
        HeadView Vh(V.data() + koff, nk, dhi, stride);
        HeadView dOh(dO.data() + qoff, nq, dhi, stride);
        ConstMatrixMap A(W.data() + (g * L.heads + h) * L.nq * L.nk, nq, nk);
        if (dV) MutableHeadView(dV->data() + koff, nk, dhi, stride).noalias() += A.transpose() * dOh;
        dS.noalias() = dOh * Vh.transpose();
        for (Eigen::Index i = 0; i < nq; ++i) {
          const double dot = A.row(i).dot(dS.row(i));
          dS.row(i) = (A.row(i).array() * (dS.row(i).array() - dot) * sc).matrix();
        }
        if (dQ) MutableHeadView(dQ->data() + qoff, nq, dhi, stride).noalias() += dS * Kh;
        if (dK) MutableHeadView(dK->data() + koff, nk, dhi, stride).noalias() += dS.transpose() * Qh;
      }
    }
  });
  nodes_[node.id].aux = std::move(weights);
  return node;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) {
    throw ValidationError("adam: learning rate must be > 0");
  }
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
  for (auto* p : params_) {
    if (p->grad.size() != p->value.size()) continue;
    for (double g : p->grad.values()) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam: non-finite gradient in parameter '" + p->name + "'");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (p->grad.size() != p->value.size()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double g = p->grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p->value[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace rpn::ad

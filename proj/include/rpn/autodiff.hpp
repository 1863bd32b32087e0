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

#pragma once

// Tape-based reverse-mode differentiation over dense float64 tensors.
//
// A Graph is built fresh for every batch; nodes are appended in evaluation
// order, so reverse insertion order is a valid topological order for the
// backward sweep. Forward values are never mutated after creation.

#include "rpn/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace rpn::ad {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value once touched by backward()

  void zero_grad();
};

// Owns parameters with stable addresses and unique names, in insertion order.
class ParameterSet {
 public:
  // uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) from the set's RNG.
  Parameter& add(const std::string& name, Shape shape, std::size_t fan_in);
  Parameter& add_zeros(const std::string& name, Shape shape);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t tensor_count() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::mt19937_64 rng_{0};
};

struct Var {
  std::uint32_t id = 0;
};

// Multi-head scaled dot-product attention over `groups` independent
// problems; queries [groups*nq, d], keys/values [groups*nk, d].
struct AttentionLayout {
  std::size_t groups = 0;
  std::size_t nq = 0;
  std::size_t nk = 0;
  std::size_t heads = 1;
};

class Graph {
 public:
  Var constant(Tensor value);
  Var parameter(Parameter& p);

  Var matmul(Var a, Var b);
  // Same shape, or b a single row broadcast over a's rows.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope = 0.01);
  Var sigmoid(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var softmax(Var a);  // last axis, max-subtracted
  Var concat(std::span<const Var> parts);  // last axis
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  Var vstack(std::span<const Var> parts);  // along rows of the 2-d views
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var gather_rows(Var a, std::vector<std::uint32_t> rows);
  Var reshape(Var a, Shape shape);
  Var mean_pool(Var a, std::size_t axis);
  Var max_pool(Var a, std::size_t axis);
  Var sum(Var a, std::size_t axis);
  Var mean_all(Var a);  // scalar
  Var attention(Var q, Var k, Var v, AttentionLayout layout);

  Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

  // Loss must hold exactly one value. Parameter gradients accumulate into
  // Parameter::grad.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::uint32_t)> backprop;
    AlignedVector aux;
    std::vector<std::uint32_t> aux_index;
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Graph&, std::uint32_t)> backprop);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Tensor& grad_buffer(std::uint32_t id);
  Var reduce(Var a, std::size_t axis, int kind);

  std::deque<Node> nodes_;  // stable references across push
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. step() validates every gradient first and
// leaves all parameters untouched if any is non-finite.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace rpn::ad

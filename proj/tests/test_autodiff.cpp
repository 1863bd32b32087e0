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
#include "rpn/errors.hpp"
#include "rpn/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <random>

using namespace rpn;
using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(std::mt19937_64& rng, const Shape& shape, double scale = 1.0) {
  Tensor t(shape);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

ad::Parameter& random_param(ad::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, const Shape& shape,
                            double scale = 1.0) {
  auto& p = ps.add_zeros(name, shape);
  p.value = random_tensor(rng, shape, scale);
  return p;
}

// Finite-difference check of `op` under a random linear read-out, so every
// output element contributes to the scalar loss.
GradcheckReport check_op(ad::ParameterSet& ps, std::mt19937_64& rng, const std::function<Var(Graph&)>& op) {
  Graph shape_probe;
  const Tensor w = random_tensor(rng, shape_probe.value(op(shape_probe)).shape());
  return gradcheck(
      ps, [&](Graph& g) { return g.mean_all(g.mul(op(g), g.constant(w))); }, 1e-6, 1e-4);
}

// Plain loops, no Eigen, for the attention reference.
std::vector<double> reference_attention(const Tensor& q, const Tensor& k, const Tensor& v, ad::AttentionLayout L) {
  const std::size_t d = q.cols(), dh = d / L.heads;
  std::vector<double> out(L.groups * L.nq * d, 0.0);
  for (std::size_t g = 0; g < L.groups; ++g)
    for (std::size_t h = 0; h < L.heads; ++h)
      for (std::size_t i = 0; i < L.nq; ++i) {
        std::vector<double> s(L.nk);
        double m = -1e300;
        for (std::size_t j = 0; j < L.nk; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += q.at(g * L.nq + i, h * dh + c) * k.at(g * L.nk + j, h * dh + c);
          s[j] = acc / std::sqrt(static_cast<double>(dh));
          m = std::max(m, s[j]);
        }
        double z = 0;
        for (auto& x : s) z += (x = std::exp(x - m));
        for (std::size_t j = 0; j < L.nk; ++j)
          for (std::size_t c = 0; c < dh; ++c)
            out[(g * L.nq + i) * d + h * dh + c] += s[j] / z * v.at(g * L.nk + j, h * dh + c);
      }
  return out;
}

}  // namespace

TEST_CASE("autodiff: elementwise and linear ops pass gradcheck") {
  std::mt19937_64 rng(1);
  ad::ParameterSet ps;
  auto& a = random_param(ps, rng, "a", {4, 5});
  auto& b = random_param(ps, rng, "b", {4, 5});
  auto& w = random_param(ps, rng, "w", {5, 3});
  auto& r = random_param(ps, rng, "row", {1, 5});

  const std::vector<std::pair<const char*, std::function<Var(Graph&)>>> ops = {
      {"matmul", [&](Graph& g) { return g.matmul(g.parameter(a), g.parameter(w)); }},
      {"add", [&](Graph& g) { return g.add(g.parameter(a), g.parameter(b)); }},
      {"add_row", [&](Graph& g) { return g.add(g.parameter(a), g.parameter(r)); }},
      {"sub", [&](Graph& g) { return g.sub(g.parameter(a), g.parameter(b)); }},
      {"mul", [&](Graph& g) { return g.mul(g.parameter(a), g.parameter(b)); }},
      {"scale", [&](Graph& g) { return g.scale(g.parameter(a), -1.7); }},
      {"relu", [&](Graph& g) { return g.relu(g.parameter(a)); }},
      {"leaky_relu", [&](Graph& g) { return g.leaky_relu(g.parameter(a), 0.1); }},
      {"sigmoid", [&](Graph& g) { return g.sigmoid(g.parameter(a)); }},
      {"sin", [&](Graph& g) { return g.sin(g.parameter(a)); }},
      {"cos", [&](Graph& g) { return g.cos(g.parameter(a)); }},
      {"softmax", [&](Graph& g) { return g.softmax(g.parameter(a)); }},
      {"linear", [&](Graph& g) {
         return g.linear(g.parameter(a), g.parameter(w), g.slice_cols(g.parameter(r), 0, 3));
       }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    const auto rep = check_op(ps, rng, op);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.passed());
  }
}

TEST_CASE("autodiff: structural ops pass gradcheck") {
  std::mt19937_64 rng(2);
  ad::ParameterSet ps;
  auto& a = random_param(ps, rng, "a", {6, 4});
  auto& b = random_param(ps, rng, "b", {6, 3});
  auto& c = random_param(ps, rng, "c", {2, 4});
  auto& t = random_param(ps, rng, "t", {3, 4, 5});

  const std::vector<std::pair<const char*, std::function<Var(Graph&)>>> ops = {
      {"concat", [&](Graph& g) { return g.concat({g.parameter(a), g.parameter(b), g.parameter(a)}); }},
      {"vstack", [&](Graph& g) {
         const Var parts[] = {g.parameter(a), g.parameter(c)};
         return g.vstack(parts);
       }},
      {"slice_cols", [&](Graph& g) { return g.slice_cols(g.parameter(a), 1, 3); }},
      {"gather_rows", [&](Graph& g) { return g.gather_rows(g.parameter(a), {5, 0, 0, 3, 5}); }},
      {"reshape", [&](Graph& g) { return g.reshape(g.parameter(t), {12, 5}); }},
      {"mean_pool0", [&](Graph& g) { return g.mean_pool(g.parameter(t), 0); }},
      {"mean_pool1", [&](Graph& g) { return g.mean_pool(g.parameter(t), 1); }},
      {"max_pool1", [&](Graph& g) { return g.max_pool(g.parameter(t), 1); }},
      {"max_pool2", [&](Graph& g) { return g.max_pool(g.parameter(t), 2); }},
      {"sum2", [&](Graph& g) { return g.sum(g.parameter(t), 2); }},
      {"mean_all", [&](Graph& g) { return g.mean_all(g.parameter(t)); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    const auto rep = check_op(ps, rng, op);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.passed());
  }
}

TEST_CASE("autodiff: attention matches a loop reference and passes gradcheck") {
  std::mt19937_64 rng(3);
  const ad::AttentionLayout L{3, 2, 4, 2};
  ad::ParameterSet ps;
  auto& q = random_param(ps, rng, "q", {L.groups * L.nq, 6});
  auto& k = random_param(ps, rng, "k", {L.groups * L.nk, 6});
  auto& v = random_param(ps, rng, "v", {L.groups * L.nk, 6});

  Graph g;
  const Var out = g.attention(g.parameter(q), g.parameter(k), g.parameter(v), L);
  const auto want = reference_attention(q.value, k.value, v.value, L);
  REQUIRE(g.value(out).size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(g.value(out)[i] == doctest::Approx(want[i]).epsilon(1e-12));

  const auto rep = check_op(ps, rng, [&](Graph& gr) {
    return gr.attention(gr.parameter(q), gr.parameter(k), gr.parameter(v), L);
  });
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.passed());
  CHECK_THROWS_AS(g.attention(g.parameter(q), g.parameter(k), g.parameter(v), {3, 2, 4, 4}), ValidationError);
}

TEST_CASE("autodiff: softmax rows sum to one") {
  std::mt19937_64 rng(4);
  Graph g;
  const Var s = g.softmax(g.constant(random_tensor(rng, {50, 7}, 30.0)));
  const auto m = g.value(s).matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("autodiff: gradients accumulate across uses and shapes are validated") {
  ad::ParameterSet ps;
  auto& a = ps.add_zeros("a", {2, 2});
  a.value = Tensor::from_rows({{1, 2}, {3, 4}});
  Graph g;
  const Var x = g.parameter(a);
  g.backward(g.mean_all(g.add(x, g.mul(x, x))));  // d/dx mean(x + x^2) = (1 + 2x) / 4
  CHECK(a.grad[0] == doctest::Approx(0.75));
  CHECK(a.grad[3] == doctest::Approx(2.25));
  CHECK(a.grad.shape() == a.value.shape());

  CHECK_THROWS_AS(g.matmul(x, g.constant(Tensor({3, 1}))), ValidationError);
  CHECK_THROWS_AS(g.backward(x), ValidationError);
  CHECK_THROWS_AS(g.slice_cols(x, 1, 1), ValidationError);
  CHECK_THROWS_AS(g.gather_rows(x, {2}), ValidationError);
}

TEST_CASE("autodiff: identical inputs give bit-identical values and gradients") {
  const auto run = [] {
    std::mt19937_64 rng(9);
    ad::ParameterSet ps;
    auto& a = random_param(ps, rng, "a", {8, 6});
    auto& w = random_param(ps, rng, "w", {6, 6});
    Graph g;
    const Var h = g.sigmoid(g.matmul(g.parameter(a), g.parameter(w)));
    const Var y = g.attention(h, h, h, {2, 4, 4, 2});
    g.backward(g.mean_all(g.mul(y, y)));
    std::vector<double> out(g.value(y).values().begin(), g.value(y).values().end());
    out.insert(out.end(), w.grad.values().begin(), w.grad.values().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("autodiff: attention results do not depend on heap placement") {
  // Long key rows so softmax sums and dots run vectorized; each pad moves
  // the op's scratch buffers to a different offset.
  const auto run = [](std::size_t shift) {
    const auto pad = std::make_unique<char[]>(16 * shift + 8);
    std::mt19937_64 rng(4);
    ad::ParameterSet ps;
    auto& q = random_param(ps, rng, "q", {2 * 9, 32});
    auto& k = random_param(ps, rng, "k", {2 * 17, 32});
    Graph g;
    const Var kv = g.parameter(k);
    const Var y = g.attention(g.parameter(q), kv, kv, {2, 9, 17, 2});
    g.backward(g.mean_all(g.mul(y, y)));
    std::vector<double> out(g.value(y).values().begin(), g.value(y).values().end());
    out.insert(out.end(), q.grad.values().begin(), q.grad.values().end());
    out.insert(out.end(), k.grad.values().begin(), k.grad.values().end());
    pad[0] = 1;
    return out;
  };
  const auto base = run(0);
  for (std::size_t s = 1; s < 8; ++s) CHECK(run(s) == base);
}

TEST_CASE("autodiff: parameter init is seeded and bounded by sqrt(1 / fan_in)") {
  ad::ParameterSet a, b;
  a.reseed(5);
  b.reseed(5);
  const auto& pa = a.add("w", {16, 9}, 16);
  const auto& pb = b.add("w", {16, 9}, 16);
  CHECK(std::vector<double>(pa.value.values().begin(), pa.value.values().end()) ==
        std::vector<double>(pb.value.values().begin(), pb.value.values().end()));
  for (double v : pa.value.values()) CHECK(std::abs(v) <= 0.25);
  CHECK_THROWS_AS(a.add("w", {1}, 1), ValidationError);
  CHECK(a.scalar_count() == 144);
}

TEST_CASE("adam: first step with unit gradient moves by the learning rate") {
  ad::ParameterSet ps;
  auto& p = ps.add_zeros("p", {3});
  p.value = Tensor({3}, std::vector<double>{1.0, -2.0, 0.5});
  ad::Adam opt(ps.all(), {1e-4, 0.9, 0.999, 1e-8});
  p.grad = Tensor({3}, 1.0);
  opt.step();
  const double step = 1e-4 / (1.0 + 1e-8);
  CHECK(p.value[0] == doctest::Approx(1.0 - step).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-2.0 - step).epsilon(1e-15));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged; symmetric state gives symmetric updates") {
  ad::ParameterSet ps;
  auto& p = ps.add_zeros("p", {2});
  p.value = Tensor({2}, std::vector<double>{0.3, 0.3});
  ad::Adam opt(ps.all());
  p.grad = Tensor({2}, 0.0);
  opt.step();
  CHECK(p.value[0] == 0.3);
  CHECK(p.value[1] == 0.3);
  for (int i = 0; i < 5; ++i) {
    p.grad = Tensor({2}, std::vector<double>{0.7, 0.7});
    opt.step();
    CHECK(p.value[0] == p.value[1]);
  }
}

TEST_CASE("adam: non-finite gradients abort without touching any parameter") {
  ad::ParameterSet ps;
  auto& a = ps.add_zeros("a", {2});
  auto& b = ps.add_zeros("b", {2});
  ad::Adam opt(ps.all());
  a.grad = Tensor({2}, 1.0);
  b.grad = Tensor({2}, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(opt.step(), NumericalError);
  CHECK(a.value[0] == 0.0);
  CHECK(opt.steps() == 0);
  CHECK_THROWS_AS(ad::Adam(ps.all(), {0.0}), ValidationError);
}

TEST_CASE("gradcheck: relative error uses the magnitude floor") {
  CHECK(gradcheck_rel_error(1.0, 1.0) == 0.0);
  CHECK(gradcheck_rel_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(gradcheck_rel_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

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

#include "rpn/errors.hpp"
#include "rpn/gradcheck.hpp"
#include "rpn/model.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

using namespace rpn;
using ad::Graph;
using ad::Tensor;

namespace {

ModelConfig small_config(ModelVariant variant = ModelVariant::kFull) {
  ModelConfig c;
  c.n = 4;
  c.k = 3;
  c.point_feature_dim = 16;
  c.point_mlp = {8, 16};
  c.d_model = 8;
  c.heads = 2;
  c.pe_frequencies = 2;
  c.decoder_layers = 2;
  c.decoder_width = 16;
  c.sh_degree = 2;
  c.variant = variant;
  return c;
}

SceneContext small_context(std::size_t k) {
  ScenePrep prep;
  prep.point_density = 0.5;
  prep.seed = 4;
  prep.probe_spacing_m = 4.0;
  return SceneContext(parse_scene(test::ground_scene_json(8, 6, 2, 3)), prep, k);
}

SphericalOffset random_geo(std::mt19937_64& rng) {
  return spherical_offset(Vec3::Zero(), test::random_in(rng, Vec3::Constant(-1), Vec3::Constant(1)));
}

std::vector<Query> random_queries(std::mt19937_64& rng, std::size_t count) {
  std::vector<Query> q(count);
  for (std::size_t i = 0; i < count; ++i) {
    q[i].tx = test::random_in(rng, Vec3(-0.8, -0.8, 0.5), Vec3(0.8, 0.8, 0.9));
    q[i].pattern = static_cast<int>(i % 2);
    q[i].rx = test::random_in(rng, Vec3(-0.9, -0.9, 0.0), Vec3(0.9, 0.9, 0.3));
  }
  return q;
}

}  // namespace

TEST_CASE("model: config validation and json round trip") {
  auto c = small_config();
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(c.to_json().at("n_c") == 9);
  CHECK(c.to_json().at("output") == "logistic");
  CHECK(parse_variant("no_probes") == ModelVariant::kNoProbes);
  CHECK_THROWS_AS(parse_variant("probes"), ValidationError);

  auto bad = c;
  bad.point_feature_dim = 15;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.sh_degree = 9;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.n = 0;
  CHECK_THROWS_AS(RayProNet{bad}, ValidationError);
  auto j = c.to_json();
  j["n_c"] = 4;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ValidationError);
}

TEST_CASE("model: default parameter shapes") {
  const RayProNet m(ModelConfig{});
  const auto& p = m.params();
  CHECK(p.get("point.proj.w").value.shape() == ad::Shape{256, 128});
  CHECK(p.get("probe_attn.wk").value.shape() == ad::Shape{67, 64});
  CHECK(p.get("probe_attn.wv").value.shape() == ad::Shape{67, 64});
  CHECK(p.get("probe_attn.wo").value.shape() == ad::Shape{64, 128});
  CHECK(p.get("probe_attn.tx_embedding").value.shape() == ad::Shape{4, 64});
  CHECK(p.get("rx_attn.wk").value.shape() == ad::Shape{67, 64});
  CHECK(p.get("rx_attn.wo").value.shape() == ad::Shape{64, 1});
  CHECK(p.get("query_enc.w").value.shape() == ad::Shape{24, 64});
  CHECK(p.get("decoder.l0.w").value.shape() == ad::Shape{9, 256});
  CHECK(p.get("decoder.l7.w").value.shape() == ad::Shape{256, 256});
  CHECK_FALSE(p.contains("decoder.l8.w"));
  CHECK(p.get("decoder.out.w").value.shape() == ad::Shape{256, 9 * 16});

  std::set<std::string> names;
  for (const auto* q : p.all()) names.insert(q->name);
  CHECK(names.size() == p.tensor_count());
  CHECK(RayProNet(ModelConfig{}).parameter_count() == m.parameter_count());

  auto ablated = ModelConfig{};
  ablated.variant = ModelVariant::kNoProbes;
  const RayProNet a(ablated);
  CHECK(a.probe_block_size() == 0);
  CHECK(m.probe_block_size() > 0);
  // Same n and K, so only the probe block differs.
  CHECK(m.parameter_count() - a.parameter_count() == m.probe_block_size());
}

TEST_CASE("model: initialization depends on the seed only") {
  const RayProNet a(small_config(), 3), b(small_config(), 3), c(small_config(), 4);
  const auto same = [](const RayProNet& x, const RayProNet& y) {
    for (const auto* p : x.params().all()) {
      const auto u = p->value.values();
      const auto v = y.params().get(p->name).value.values();
      if (!std::equal(u.begin(), u.end(), v.begin(), v.end())) return false;
    }
    return true;
  };
  CHECK(same(a, b));
  CHECK_FALSE(same(a, c));
}

TEST_CASE("model: positional features") {
  const auto f = positional_features({0, 0, 2}, 2);
  REQUIRE(f.size() == 12);
  // x component is 0: sin 0, cos 0 at both frequencies.
  CHECK(f[0] == doctest::Approx(0.0));
  CHECK(f[1] == doctest::Approx(1.0));
  // z component is 1: sin pi, cos pi, sin 2pi, cos 2pi.
  CHECK(f[8] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[9] == doctest::Approx(-1.0));
  CHECK(f[11] == doctest::Approx(1.0));
  CHECK_THROWS_AS(positional_features(Vec3::Zero(), 2), ValidationError);
}

TEST_CASE("model: stage shapes") {
  const auto cfg = small_config();
  const RayProNet m(cfg, 1);
  const auto ctx = small_context(cfg.k);
  std::mt19937_64 rng(5);
  Graph g;
  ModelGraph mg(g, m, false);
  auto pf = mg.embed_points(g.constant(ctx.point_tensor()));
  CHECK(g.value(pf).shape() == ad::Shape{ctx.points().size(), 16});

  ProbeBatch pb;
  pb.rows = 5;
  for (std::size_t r = 0; r < pb.rows; ++r) {
    for (std::size_t s = 0; s < cfg.k; ++s) {
      pb.point_index.push_back(static_cast<std::uint32_t>(rng() % ctx.points().size()));
      pb.point_geo.push_back(random_geo(rng));
    }
    pb.tx_geo.push_back(random_geo(rng));
    pb.pattern.push_back(static_cast<int>(r % 4));
  }
  auto probe = mg.probe_attention(pf, pb);
  CHECK(g.value(probe).shape() == ad::Shape{5, 16});

  ReceiverBatch rb;
  rb.receivers = 7;
  rb.links = cfg.n;
  for (std::size_t b = 0; b < rb.receivers; ++b) {
    for (std::size_t j = 0; j < rb.links; ++j) {
      rb.feature_row.push_back(static_cast<std::uint32_t>(rng() % pb.rows));
      rb.link_geo.push_back(random_geo(rng));
    }
    rb.los_geo.push_back(random_geo(rng));
  }
  auto rays = mg.receiver_attention(probe, rb);
  CHECK(g.value(rays).shape() == ad::Shape{7, 5});
  const auto basis = sh_basis_rows(rb, cfg.sh_degree);
  CHECK(basis.shape() == ad::Shape{7, 5 * 9});
  auto out = mg.decode_sh(rays, basis);
  CHECK(g.value(out).shape() == ad::Shape{7, 1});

  // Inconsistent inputs are rejected.
  auto short_pb = pb;
  short_pb.point_index.pop_back();
  CHECK_THROWS_AS(mg.probe_attention(pf, short_pb), ValidationError);
  auto bad_pattern = pb;
  bad_pattern.pattern[0] = 4;
  CHECK_THROWS_AS(mg.probe_attention(pf, bad_pattern), ValidationError);
  auto bad_row = rb;
  bad_row.feature_row[0] = 99;
  CHECK_THROWS_AS(mg.receiver_attention(probe, bad_row), ValidationError);
  CHECK_THROWS_AS(mg.decode_sh(rays, Tensor({7, 5 * 4})), ValidationError);
}

TEST_CASE("model: probe feature ignores the order of its points") {
  const auto cfg = small_config();
  const RayProNet m(cfg, 2);
  const auto ctx = small_context(cfg.k);
  std::mt19937_64 rng(6);
  ProbeBatch pb;
  pb.rows = 6;
  for (std::size_t r = 0; r < pb.rows; ++r) {
    for (std::size_t s = 0; s < cfg.k; ++s) {
      pb.point_index.push_back(static_cast<std::uint32_t>(rng() % ctx.points().size()));
      pb.point_geo.push_back(random_geo(rng));
    }
    pb.tx_geo.push_back(random_geo(rng));
    pb.pattern.push_back(static_cast<int>(r % 2));
  }
  auto shuffled = pb;
  for (std::size_t r = 0; r < pb.rows; ++r) {
    std::vector<std::size_t> perm(cfg.k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t s = 0; s < cfg.k; ++s) {
      shuffled.point_index[r * cfg.k + s] = pb.point_index[r * cfg.k + perm[s]];
      shuffled.point_geo[r * cfg.k + s] = pb.point_geo[r * cfg.k + perm[s]];
    }
  }
  Graph g;
  ModelGraph mg(g, m, false);
  auto pf = mg.embed_points(g.constant(ctx.point_tensor()));
  const auto& a = g.value(mg.probe_attention(pf, pb));
  const auto& b = g.value(mg.probe_attention(pf, shuffled));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-9);
}

TEST_CASE("model: point encoder is equivariant to point order") {
  const auto cfg = small_config();
  const RayProNet m(cfg, 2);
  const auto ctx = small_context(cfg.k);
  const auto& P = ctx.point_tensor();
  const std::size_t np = P.rows();
  std::vector<std::uint32_t> perm(np);
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor Q({np, 3});
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t c = 0; c < 3; ++c) Q.at(i, c) = P.at(perm[i], c);
  Graph g;
  ModelGraph mg(g, m, false);
  const auto& a = g.value(mg.embed_points(g.constant(P)));
  const auto& b = g.value(mg.embed_points(g.constant(Q)));
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t c = 0; c < a.cols(); ++c) CHECK(std::abs(b.at(i, c) - a.at(perm[i], c)) < 1e-9);
}

TEST_CASE("model: receiver rays follow their links; line of sight does not care") {
  const auto cfg = small_config();
  const RayProNet m(cfg, 3);
  std::mt19937_64 rng(7);
  Tensor feats({10, cfg.point_feature_dim});
  std::normal_distribution<double> nd;
  for (auto& v : feats.values()) v = nd(rng);
  ReceiverBatch rb;
  rb.receivers = 4;
  rb.links = cfg.n;
  for (std::size_t b = 0; b < rb.receivers; ++b) {
    for (std::size_t j = 0; j < rb.links; ++j) {
      rb.feature_row.push_back(static_cast<std::uint32_t>(rng() % 10));
      rb.link_geo.push_back(random_geo(rng));
    }
    rb.los_geo.push_back(random_geo(rng));
  }
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permuted = rb;
  for (std::size_t b = 0; b < rb.receivers; ++b) {
    for (std::size_t j = 0; j < rb.links; ++j) {
      permuted.feature_row[b * rb.links + j] = rb.feature_row[b * rb.links + perm[j]];
      permuted.link_geo[b * rb.links + j] = rb.link_geo[b * rb.links + perm[j]];
    }
  }
  Graph g;
  ModelGraph mg(g, m, false);
  const auto& a = g.value(mg.receiver_attention(g.constant(feats), rb));
  const auto& b = g.value(mg.receiver_attention(g.constant(feats), permuted));
  for (std::size_t r = 0; r < rb.receivers; ++r) {
    for (std::size_t j = 0; j < rb.links; ++j) CHECK(std::abs(b.at(r, j) - a.at(r, perm[j])) < 1e-9);
    CHECK(std::abs(b.at(r, rb.links) - a.at(r, rb.links)) < 1e-9);
  }
}

TEST_CASE("model: predictions lie in (0, 1) and match the training graph") {
  for (auto variant : {ModelVariant::kFull, ModelVariant::kNoProbes}) {
    const auto cfg = small_config(variant);
    const RayProNet m(cfg, 9);
    const auto ctx = small_context(cfg.k);
    std::mt19937_64 rng(11);
    const auto q = random_queries(rng, 40);
    Graph g;
    ModelGraph mg(g, m, true);
    const auto& fwd = g.value(mg.forward(ctx, q));
    const auto pred = m.predict(ctx, q, 7);
    REQUIRE(pred.size() == q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(pred[i] > 0.0);
      CHECK(pred[i] < 1.0);
      CHECK(std::abs(pred[i] - fwd.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("model: mismatched context and bad patterns are rejected") {
  const auto cfg = small_config();
  const RayProNet m(cfg);
  const auto ctx = small_context(cfg.k + 1);
  std::mt19937_64 rng(1);
  auto q = random_queries(rng, 3);
  CHECK_THROWS_AS(m.predict(ctx, q), ValidationError);
  const auto ok = small_context(cfg.k);
  q[1].pattern = 9;
  CHECK_THROWS_AS(m.predict(ok, q), ValidationError);
  CHECK(m.predict(ok, std::span<const Query>{}).empty());
}

TEST_CASE("model: micro gradcheck") {
  for (auto variant : {ModelVariant::kFull, ModelVariant::kNoProbes}) {
    const auto report = gradcheck_micro(5, variant);
    INFO(variant_name(variant), " worst ", report.worst_parameter, " ", report.max_rel_error);
    CHECK(report.checked > 0);
    CHECK(report.passed());
    CHECK(report.max_rel_error < 1e-4);
  }
}

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

#include "rpn/model.hpp"

#include "rpn/antenna.hpp"
#include "rpn/errors.hpp"
#include "rpn/sh.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace rpn {

using ad::Shape;
using ad::Tensor;
using ad::Var;

std::string variant_name(ModelVariant v) {
  return v == ModelVariant::kFull ? "full" : "no_probes";
}

ModelVariant parse_variant(const std::string& name) {
  if (name == "full") return ModelVariant::kFull;
  if (name == "no_probes") return ModelVariant::kNoProbes;
  throw ValidationError("unknown model variant '" + name + "' (expected full or no_probes)");
}

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (n == 0 || k == 0) fail("n and K must be >= 1");
  if (point_feature_dim == 0 || point_feature_dim % 2 != 0) fail("point_feature_dim must be even and > 0");
  if (point_mlp.empty()) fail("point_mlp needs at least one layer");
  if (std::find(point_mlp.begin(), point_mlp.end(), 0u) != point_mlp.end()) fail("point_mlp widths must be > 0");
  if (heads == 0 || d_model == 0 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (pe_frequencies == 0) fail("pe_frequencies must be >= 1");
  if (decoder_layers == 0 || decoder_width == 0) fail("decoder needs at least one hidden layer");
  if (sh_degree < 0 || sh_degree > sh::kMaxDegree) fail("sh_degree out of range");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n", n},
          {"K", k},
          {"point_feature_dim", point_feature_dim},
          {"point_mlp", point_mlp},
          {"d_model", d_model},
          {"heads", heads},
          {"pe_frequencies", pe_frequencies},
          {"decoder_layers", decoder_layers},
          {"decoder_width", decoder_width},
          {"sh_degree", sh_degree},
          {"n_c", n_c()},
          {"output", "logistic"},
          {"variant", variant_name(variant)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n = j.value("n", c.n);
    c.k = j.value("K", c.k);
    c.point_feature_dim = j.value("point_feature_dim", c.point_feature_dim);
    c.point_mlp = j.value("point_mlp", c.point_mlp);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.pe_frequencies = j.value("pe_frequencies", c.pe_frequencies);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.decoder_width = j.value("decoder_width", c.decoder_width);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.variant = parse_variant(j.value("variant", std::string("full")));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  if (j.contains("n_c") && j.at("n_c").get<std::size_t>() != c.n_c()) {
    throw ValidationError("model config: n_c does not match sh_degree");
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.n = 2;
  c.k = 2;
  c.point_feature_dim = 8;
  c.point_mlp = {6, 8};
  c.d_model = 8;
  c.heads = 2;
  c.pe_frequencies = 2;
  c.decoder_layers = 2;
  c.decoder_width = 8;
  c.sh_degree = 1;
  return c;
}

nlohmann::json ScenePrep::to_json() const {
  return {{"point_density", point_density}, {"seed", seed}, {"probe_spacing_m", probe_spacing_m}};
}

ScenePrep ScenePrep::from_json(const nlohmann::json& j) {
  ScenePrep p;
  p.point_density = j.value("point_density", p.point_density);
  p.seed = j.value("seed", p.seed);
  p.probe_spacing_m = j.value("probe_spacing_m", p.probe_spacing_m);
  return p;
}

// ---------------------------------------------------------------------------
// Scene context

namespace {

std::vector<Link> padded_links(const std::vector<Neighbor>& nb, std::size_t want, const Vec3& origin,
                               std::span<const Vec3> targets) {
  std::vector<Link> out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) {
    const auto idx = nb[i < nb.size() ? i : 0].index;
    out.push_back({idx, spherical_offset(origin, targets[idx])});
  }
  return out;
}

}  // namespace

SceneContext::SceneContext(PointCloudScene metric_scene, const ScenePrep& prep, std::size_t k)
    : prep_(prep), k_(k) {
  if (k == 0) throw ValidationError("scene context: K must be >= 1");
  if (metric_scene.normalized()) {
    throw ValidationError("scene context expects a scene in meters");
  }
  scene_ = normalize_scene(sample_point_cloud(std::move(metric_scene), prep.point_density, prep.seed));
  const double spacing =
      prep.probe_spacing_m > 0.0 ? prep.probe_spacing_m : default_probe_spacing(scene_.bounds);
  probes_ = place_probes(scene_, spacing);
  if (probes_.positions.empty()) throw ValidationError("scene context: no probe lies in free space");
  point_tree_ = KdTree(scene_.points);
  probe_tree_ = KdTree(probes_.positions);
  probe_links_.reserve(probes_.positions.size() * k);
  for (const auto& p : probes_.positions) {
    auto links = padded_links(point_tree_.nearest(p, k), k, p, scene_.points);
    probe_links_.insert(probe_links_.end(), links.begin(), links.end());
  }
  point_tensor_ = Tensor({scene_.points.size(), 3});
  for (std::size_t i = 0; i < scene_.points.size(); ++i) {
    for (int a = 0; a < 3; ++a) point_tensor_.at(i, a) = scene_.points[i][a];
  }
}

std::vector<Link> SceneContext::nearest_probes(const Vec3& from, std::size_t n) const {
  return padded_links(probe_tree_.nearest(from, n), n, from, probes_.positions);
}

std::vector<Link> SceneContext::nearest_points(const Vec3& from, std::size_t k) const {
  return padded_links(point_tree_.nearest(from, k), k, from, scene_.points);
}

// ---------------------------------------------------------------------------
// Encoders

std::vector<double> positional_features(const Vec3& direction, std::size_t frequencies) {
  const double r = direction.norm();
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw ValidationError("positional encoding: direction must be a non-zero finite vector");
  }
  const Vec3 d = direction / r;
  std::vector<double> out;
  out.reserve(6 * frequencies);
  for (int c = 0; c < 3; ++c) {
    double w = kPi;
    for (std::size_t f = 0; f < frequencies; ++f, w *= 2.0) {
      out.push_back(std::sin(w * d[c]));
      out.push_back(std::cos(w * d[c]));
    }
  }
  return out;
}

namespace {

Tensor geometry_tensor(std::span<const SphericalOffset> geo) {
  Tensor t({geo.size(), 3});
  for (std::size_t i = 0; i < geo.size(); ++i) {
    t.at(i, 0) = geo[i].distance;
    t.at(i, 1) = geo[i].elevation;
    t.at(i, 2) = geo[i].azimuth;
  }
  return t;
}

}  // namespace

Tensor sh_basis_rows(const ReceiverBatch& batch, int degree) {
  const std::size_t nc = sh::basis_count(degree);
  const std::size_t rays = batch.links + 1;
  Tensor t({batch.receivers, rays * nc});
  for (std::size_t b = 0; b < batch.receivers; ++b) {
    double* row = t.data() + b * rays * nc;
    for (std::size_t j = 0; j < batch.links; ++j) {
      sh::eval(unit_direction(batch.link_geo[b * batch.links + j]), degree,
               std::span<double>(row + j * nc, nc));
    }
    sh::eval(unit_direction(batch.los_geo[b]), degree,
             std::span<double>(row + batch.links * nc, nc));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Graph binding

ModelGraph::ModelGraph(ad::Graph& graph, const RayProNet& model, bool trainable)
    : graph_(graph), model_(model), trainable_(trainable) {}

Var ModelGraph::param(const std::string& name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const auto& p = model_.params().get(name);
  // Parameters are only written through backward(), which a non-trainable
  // binding never records.
  const Var v = trainable_ ? graph_.parameter(const_cast<ad::Parameter&>(p)) : graph_.constant(p.value);
  cache_.emplace(name, v);
  return v;
}

Var ModelGraph::embed_points(Var points) {
  const auto& cfg = model_.config();
  const auto& P = graph_.value(points);
  if (P.rows() == 0) throw ValidationError("embed_points: empty point cloud");
  if (P.cols() != 3) throw ValidationError("embed_points: expected [n_p, 3], got " + P.shape_string());
  Var h = points;
  for (std::size_t i = 0; i < cfg.point_mlp.size(); ++i) {
    const auto l = "point.l" + std::to_string(i);
    h = graph_.relu(graph_.linear(h, param(l + ".w"), param(l + ".b")));
  }
  const std::size_t width = cfg.point_mlp.back();
  const std::size_t np = P.rows();
  Var global = graph_.max_pool(h, 0);  // [width]
  global = graph_.reshape(global, Shape{1, width});
  Var tiled = graph_.gather_rows(global, std::vector<std::uint32_t>(np, 0));
  Var both = graph_.concat({h, tiled});
  return graph_.linear(both, param("point.proj.w"), param("point.proj.b"));
}

Var ModelGraph::positional_encode(std::span<const Vec3> directions) {
  const auto& cfg = model_.config();
  const std::size_t w = 6 * cfg.pe_frequencies;
  Tensor feats({directions.size(), w});
  for (std::size_t i = 0; i < directions.size(); ++i) {
    const auto f = positional_features(directions[i], cfg.pe_frequencies);
    std::copy(f.begin(), f.end(), feats.data() + i * w);
  }
  return graph_.linear(graph_.constant(std::move(feats)), param("query_enc.w"), param("query_enc.b"));
}

Var ModelGraph::attention_block(const std::string& prefix, Var key_in, Var value_in,
                                std::span<const Vec3> query_dirs, ad::AttentionLayout layout) {
  Var keys = graph_.linear(key_in, param(prefix + ".wk"), param(prefix + ".bk"));
  Var values = graph_.linear(value_in, param(prefix + ".wv"), param(prefix + ".bv"));
  Var queries = graph_.linear(positional_encode(query_dirs), param(prefix + ".wq"), param(prefix + ".bq"));
  return graph_.attention(queries, keys, values, layout);
}

Var ModelGraph::probe_attention(Var point_features, const ProbeBatch& batch) {
  const auto& cfg = model_.config();
  if (cfg.variant != ModelVariant::kFull) {
    throw ValidationError("probe_attention: the ablated model has no probe block");
  }
  const std::size_t K = cfg.k;
  const std::size_t R = batch.rows;
  if (R == 0 || batch.point_index.size() != R * K || batch.point_geo.size() != R * K ||
      batch.tx_geo.size() != R || batch.pattern.size() != R) {
    throw ValidationError("probe_attention: missing links (need K=" + std::to_string(K) +
                          " point links and one transmitter per probe row)");
  }
  const std::size_t np = graph_.value(point_features).rows();
  const std::size_t h = cfg.half_dim();
  Var emb = param("probe_attn.tx_embedding");
  Var src_k = graph_.vstack(std::vector<Var>{graph_.slice_cols(point_features, 0, h), emb});
  Var src_v = graph_.vstack(std::vector<Var>{graph_.slice_cols(point_features, h, 2 * h), emb});

  std::vector<std::uint32_t> idx;
  std::vector<SphericalOffset> key_geo, value_geo;
  std::vector<Vec3> dirs;
  idx.reserve(R * (K + 1));
  key_geo.reserve(R * (K + 1));
  value_geo.reserve(R * (K + 1));
  dirs.reserve(R * (K + 1));
  for (std::size_t r = 0; r < R; ++r) {
    const int pat = batch.pattern[r];
    if (pat < 0 || pat >= AntennaPattern::kCount) {
      throw ValidationError("probe_attention: pattern_id " + std::to_string(pat) + " out of range");
    }
    for (std::size_t s = 0; s < K; ++s) {
      const auto pi = batch.point_index[r * K + s];
      if (pi >= np) throw ValidationError("probe_attention: point index out of range");
      idx.push_back(pi);
      key_geo.push_back(batch.point_geo[r * K + s]);
      value_geo.push_back(batch.tx_geo[r]);
      dirs.push_back(unit_direction(batch.point_geo[r * K + s]));
    }
    idx.push_back(static_cast<std::uint32_t>(np + pat));
    key_geo.push_back(batch.tx_geo[r]);
    value_geo.push_back(batch.tx_geo[r]);
    dirs.push_back(unit_direction(batch.tx_geo[r]));
  }
  Var key_in = graph_.concat({graph_.gather_rows(src_k, idx), graph_.constant(geometry_tensor(key_geo))});
  Var value_in = graph_.concat({graph_.gather_rows(src_v, std::move(idx)),
                                graph_.constant(geometry_tensor(value_geo))});
  Var att = attention_block("probe_attn", key_in, value_in, dirs, {R, K + 1, K + 1, cfg.heads});
  Var pooled = graph_.mean_pool(graph_.reshape(att, Shape{R, K + 1, cfg.d_model}), 1);
  return graph_.linear(pooled, param("probe_attn.wo"), param("probe_attn.bo"));
}

Var ModelGraph::receiver_attention(Var features, const ReceiverBatch& batch) {
  const auto& cfg = model_.config();
  const std::size_t B = batch.receivers;
  const std::size_t L = batch.links;
  if (B == 0 || L == 0 || batch.feature_row.size() != B * L || batch.link_geo.size() != B * L ||
      batch.los_geo.size() != B) {
    throw ValidationError("receiver_attention: missing links");
  }
  const std::size_t h = cfg.half_dim();
  const std::size_t rows = graph_.value(features).rows();
  for (auto r : batch.feature_row) {
    if (r >= rows) throw ValidationError("receiver_attention: feature row out of range");
  }
  Var linked = graph_.gather_rows(features, batch.feature_row);
  std::vector<SphericalOffset> los_rep;
  los_rep.reserve(B * L);
  std::vector<Vec3> dirs;
  dirs.reserve(B * (L + 1));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < L; ++j) {
      los_rep.push_back(batch.los_geo[b]);
      dirs.push_back(unit_direction(batch.link_geo[b * L + j]));
    }
    dirs.push_back(unit_direction(batch.los_geo[b]));
  }
  Var key_in = graph_.concat({graph_.slice_cols(linked, 0, h), graph_.constant(geometry_tensor(batch.link_geo))});
  Var value_in = graph_.concat({graph_.slice_cols(linked, h, 2 * h), graph_.constant(geometry_tensor(los_rep))});
  Var att = attention_block("rx_attn", key_in, value_in, dirs, {B, L + 1, L, cfg.heads});
  Var ray = graph_.linear(att, param("rx_attn.wo"), param("rx_attn.bo"));
  return graph_.reshape(ray, Shape{B, L + 1});
}

Var ModelGraph::decode_sh(Var ray_features, const Tensor& sh_basis) {
  const auto& cfg = model_.config();
  const auto& F = graph_.value(ray_features);
  const std::size_t rays = cfg.rays() + 1;
  if (F.cols() != rays || sh_basis.rows() != F.rows() || sh_basis.cols() != rays * cfg.n_c()) {
    throw ValidationError("decode_sh: ray features " + F.shape_string() + " and SH basis " +
                          sh_basis.shape_string() + " do not match n+1=" + std::to_string(rays) +
                          ", n_c=" + std::to_string(cfg.n_c()));
  }
  Var h = ray_features;
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const auto l = "decoder.l" + std::to_string(i);
    h = graph_.relu(graph_.linear(h, param(l + ".w"), param(l + ".b")));
  }
  Var coeffs = graph_.linear(h, param("decoder.out.w"), param("decoder.out.b"));
  Var raw = graph_.sum(graph_.mul(coeffs, graph_.constant(sh_basis)), 1);
  return graph_.sigmoid(graph_.reshape(raw, Shape{F.rows(), 1}));
}

// ---------------------------------------------------------------------------
// Batch planning

namespace {

using GroupKey = std::tuple<double, double, double, int>;

struct Plan {
  std::vector<std::size_t> group_of;  // per query
  std::vector<std::pair<Vec3, int>> groups;
  ProbeBatch probes;
  ReceiverBatch receivers;
};

std::size_t group_index(std::map<GroupKey, std::size_t>& index, std::vector<std::pair<Vec3, int>>& groups,
                        const Query& q) {
  const GroupKey key{q.tx.x(), q.tx.y(), q.tx.z(), q.pattern};
  auto [it, fresh] = index.emplace(key, groups.size());
  if (fresh) groups.emplace_back(q.tx, q.pattern);
  return it->second;
}

void add_probe_row(const SceneContext& ctx, ProbeBatch& pb, std::uint32_t probe, const Vec3& tx, int pattern) {
  for (const auto& l : ctx.probe_points(probe)) {
    pb.point_index.push_back(l.index);
    pb.point_geo.push_back(l.geometry);
  }
  pb.tx_geo.push_back(spherical_offset(ctx.probes()[probe], tx));
  pb.pattern.push_back(pattern);
  ++pb.rows;
}

// Probe rows are created only for the (group, probe) pairs the receivers
// touch, in first-use order.
Plan plan_queries(const SceneContext& ctx, const ModelConfig& cfg, std::span<const Query> queries) {
  Plan plan;
  std::map<GroupKey, std::size_t> gindex;
  plan.group_of.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.pattern < 0 || q.pattern >= AntennaPattern::kCount) {
      throw ValidationError("pattern_id " + std::to_string(q.pattern) + " out of range [0, 3]");
    }
    plan.group_of.push_back(group_index(gindex, plan.groups, q));
  }
  auto& rb = plan.receivers;
  rb.receivers = queries.size();
  const bool full = cfg.variant == ModelVariant::kFull;
  rb.links = cfg.rays();
  rb.feature_row.reserve(queries.size() * rb.links);
  rb.link_geo.reserve(queries.size() * rb.links);
  rb.los_geo.reserve(queries.size());

  std::map<std::pair<std::size_t, std::uint32_t>, std::uint32_t> rows;
  for (std::size_t b = 0; b < queries.size(); ++b) {
    const auto& q = queries[b];
    const std::size_t g = plan.group_of[b];
    const auto links = full ? ctx.nearest_probes(q.rx, cfg.n) : ctx.nearest_points(q.rx, cfg.k);
    for (const auto& l : links) {
      std::uint32_t row = l.index;
      if (full) {
        auto [it, fresh] = rows.emplace(std::make_pair(g, l.index), static_cast<std::uint32_t>(plan.probes.rows));
        if (fresh) add_probe_row(ctx, plan.probes, l.index, q.tx, q.pattern);
        row = it->second;
      }
      rb.feature_row.push_back(row);
      rb.link_geo.push_back(l.geometry);
    }
    rb.los_geo.push_back(spherical_offset(q.rx, q.tx));
  }
  return plan;
}

}  // namespace

Var ModelGraph::forward(const SceneContext& ctx, std::span<const Query> queries) {
  const auto& cfg = model_.config();
  if (ctx.k() != cfg.k) throw ValidationError("forward: scene context K differs from model K");
  const auto plan = plan_queries(ctx, cfg, queries);
  Var pf = embed_points(graph_.constant(ctx.point_tensor()));
  Var features = cfg.variant == ModelVariant::kFull ? probe_attention(pf, plan.probes) : pf;
  Var rays = receiver_attention(features, plan.receivers);
  return decode_sh(rays, sh_basis_rows(plan.receivers, cfg.sh_degree));
}

// ---------------------------------------------------------------------------
// Model

RayProNet::RayProNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_.reseed(seed);
  const auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    params_.add(name + ".w", {in, out}, in);
    params_.add(name + ".b", {1, out}, in);
  };
  std::size_t in = 3;
  for (std::size_t i = 0; i < cfg_.point_mlp.size(); ++i) {
    linear("point.l" + std::to_string(i), in, cfg_.point_mlp[i]);
    in = cfg_.point_mlp[i];
  }
  linear("point.proj", 2 * in, cfg_.point_feature_dim);
  linear("query_enc", 6 * cfg_.pe_frequencies, cfg_.d_model);

  const std::size_t kv = cfg_.half_dim() + 3;
  const auto attention = [&](const std::string& p, std::size_t out) {
    params_.add(p + ".wk", {kv, cfg_.d_model}, kv);
    params_.add(p + ".bk", {1, cfg_.d_model}, kv);
    params_.add(p + ".wv", {kv, cfg_.d_model}, kv);
    params_.add(p + ".bv", {1, cfg_.d_model}, kv);
    params_.add(p + ".wq", {cfg_.d_model, cfg_.d_model}, cfg_.d_model);
    params_.add(p + ".bq", {1, cfg_.d_model}, cfg_.d_model);
    params_.add(p + ".wo", {cfg_.d_model, out}, cfg_.d_model);
    params_.add(p + ".bo", {1, out}, cfg_.d_model);
  };
  if (cfg_.variant == ModelVariant::kFull) {
    attention("probe_attn", cfg_.point_feature_dim);
    params_.add("probe_attn.tx_embedding", {static_cast<std::size_t>(AntennaPattern::kCount), cfg_.half_dim()},
                cfg_.half_dim());
  }
  attention("rx_attn", 1);

  in = cfg_.rays() + 1;
  for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) {
    linear("decoder.l" + std::to_string(i), in, cfg_.decoder_width);
    in = cfg_.decoder_width;
  }
  linear("decoder.out", in, (cfg_.rays() + 1) * cfg_.n_c());
}

std::size_t RayProNet::probe_block_size() const {
  std::size_t n = 0;
  for (const auto* p : params_.all()) {
    if (p->name.rfind("probe_attn.", 0) == 0) n += p->value.size();
  }
  return n;
}

std::vector<double> RayProNet::predict(const SceneContext& ctx, std::span<const Query> queries,
                                       std::size_t chunk) const {
  if (ctx.k() != cfg_.k) throw ValidationError("predict: scene context K differs from model K");
  std::vector<double> out(queries.size());
  if (queries.empty()) return out;
  chunk = std::max<std::size_t>(chunk, 1);
  const bool full = cfg_.variant == ModelVariant::kFull;

  // Shared stage: point features and, for the full model, every probe row
  // of every (tx, pattern) group in the request.
  Tensor features;
  std::vector<std::size_t> group_of;
  {
    ad::Graph g;
    ModelGraph mg(g, *this, false);
    Var pf = mg.embed_points(g.constant(ctx.point_tensor()));
    if (full) {
      std::map<GroupKey, std::size_t> gindex;
      std::vector<std::pair<Vec3, int>> groups;
      for (const auto& q : queries) {
        if (q.pattern < 0 || q.pattern >= AntennaPattern::kCount) {
          throw ValidationError("pattern_id " + std::to_string(q.pattern) + " out of range [0, 3]");
        }
        group_of.push_back(group_index(gindex, groups, q));
      }
      ProbeBatch pb;
      for (const auto& [tx, pattern] : groups) {
        for (std::size_t p = 0; p < ctx.probes().size(); ++p) {
          add_probe_row(ctx, pb, static_cast<std::uint32_t>(p), tx, pattern);
        }
      }
      features = g.value(mg.probe_attention(pf, pb));
    } else {
      features = g.value(pf);
    }
  }

  const std::size_t np = ctx.probes().size();
  for (std::size_t begin = 0; begin < queries.size(); begin += chunk) {
    const std::size_t end = std::min(queries.size(), begin + chunk);
    ReceiverBatch rb;
    rb.receivers = end - begin;
    rb.links = cfg_.rays();
    for (std::size_t b = begin; b < end; ++b) {
      const auto& q = queries[b];
      const auto links = full ? ctx.nearest_probes(q.rx, cfg_.n) : ctx.nearest_points(q.rx, cfg_.k);
      for (const auto& l : links) {
        rb.feature_row.push_back(full ? static_cast<std::uint32_t>(group_of[b] * np + l.index) : l.index);
        rb.link_geo.push_back(l.geometry);
      }
      rb.los_geo.push_back(spherical_offset(q.rx, q.tx));
    }
    ad::Graph g;
    ModelGraph mg(g, *this, false);
    Var o = mg.decode_sh(mg.receiver_attention(g.constant(features), rb), sh_basis_rows(rb, cfg_.sh_degree));
    const auto& v = g.value(o);
    std::copy(v.values().begin(), v.values().end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  }
  return out;
}

}  // namespace rpn

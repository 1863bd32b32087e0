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

// RayProNet: point encoder -> probe attention -> receiver attention ->
// spherical-harmonics decoder. All geometry handed to the network is in
// normalized scene units.

#include "rpn/autodiff.hpp"
#include "rpn/kdtree.hpp"
#include "rpn/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rpn {

enum class ModelVariant { kFull, kNoProbes };

std::string variant_name(ModelVariant v);
ModelVariant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t n = 8;  // probes per receiver
  std::size_t k = 8;  // points per probe (or per receiver when ablated)
  std::size_t point_feature_dim = 128;
  std::vector<std::size_t> point_mlp{64, 128, 128};
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t pe_frequencies = 4;
  std::size_t decoder_layers = 8;
  std::size_t decoder_width = 256;
  int sh_degree = 3;
  ModelVariant variant = ModelVariant::kFull;

  std::size_t n_c() const { return static_cast<std::size_t>((sh_degree + 1) * (sh_degree + 1)); }
  std::size_t half_dim() const { return point_feature_dim / 2; }
  // Rays per receiver excluding the line of sight.
  std::size_t rays() const { return variant == ModelVariant::kFull ? n : k; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  // n = K = 2, d_model = 8, two decoder layers, narrow encoder.
  static ModelConfig micro();
};

// How a metric scene becomes network input: point density (points/m^2),
// sampling seed and probe spacing (0 picks the default for the bounds).
struct ScenePrep {
  double point_density = 0.3;
  std::uint64_t seed = 0;
  double probe_spacing_m = 0.0;

  nlohmann::json to_json() const;
  static ScenePrep from_json(const nlohmann::json& j);
};

// Immutable network-side view of a scene: normalized point cloud, probes
// and the nearest-neighbour indices over both.
class SceneContext {
 public:
  SceneContext(PointCloudScene metric_scene, const ScenePrep& prep, std::size_t k);

  const PointCloudScene& scene() const { return scene_; }
  const WorldTransform& transform() const { return *scene_.world_transform; }
  const ScenePrep& prep() const { return prep_; }
  std::span<const Vec3> points() const { return scene_.points; }
  std::span<const Vec3> probes() const { return probes_.positions; }
  const ProbeSet& probe_set() const { return probes_; }
  const ad::Tensor& point_tensor() const { return point_tensor_; }
  std::size_t k() const { return k_; }

  // Cached K nearest points of each probe.
  std::span<const Link> probe_points(std::size_t probe) const {
    return {probe_links_.data() + probe * k_, k_};
  }
  std::vector<Link> nearest_probes(const Vec3& from, std::size_t n) const;
  std::vector<Link> nearest_points(const Vec3& from, std::size_t k) const;

 private:
  PointCloudScene scene_;
  ScenePrep prep_;
  ProbeSet probes_;
  std::size_t k_;
  KdTree point_tree_;
  KdTree probe_tree_;
  std::vector<Link> probe_links_;
  ad::Tensor point_tensor_;
};

// One (transmitter, antenna pattern, receiver) triple, normalized units.
struct Query {
  Vec3 tx = Vec3::Zero();
  int pattern = 0;
  Vec3 rx = Vec3::Zero();
};

// Sinusoidal lift of a unit direction: per component c and frequency f,
// (sin(2^f pi c), cos(2^f pi c)). Length 6 * frequencies.
std::vector<double> positional_features(const Vec3& direction, std::size_t frequencies);

// Rows of the probe-side attention problem. Row r is one (group, probe)
// pair with K point links and the transmitter seen from that probe.
struct ProbeBatch {
  std::size_t rows = 0;
  std::vector<std::uint32_t> point_index;   // rows * K
  std::vector<SphericalOffset> point_geo;   // rows * K, probe -> point
  std::vector<SphericalOffset> tx_geo;      // rows, probe -> transmitter
  std::vector<int> pattern;                 // rows
};

// Receiver-side attention problem: each receiver attends over `links`
// feature rows (probe features, or point features when ablated).
struct ReceiverBatch {
  std::size_t receivers = 0;
  std::size_t links = 0;
  std::vector<std::uint32_t> feature_row;  // receivers * links
  std::vector<SphericalOffset> link_geo;   // receivers * links, rx -> linked node
  std::vector<SphericalOffset> los_geo;    // receivers, rx -> transmitter
};

class RayProNet;

// Binds a model to a graph. With trainable = false parameters enter as
// constants and nothing is recorded for backward.
class ModelGraph {
 public:
  ModelGraph(ad::Graph& graph, const RayProNet& model, bool trainable);

  ad::Graph& g() { return graph_; }
  ad::Var param(const std::string& name);

  // [n_p, 3] -> [n_p, point_feature_dim]
  ad::Var embed_points(ad::Var points);
  // [rows, d_model]
  ad::Var positional_encode(std::span<const Vec3> directions);
  // -> [rows, point_feature_dim]
  ad::Var probe_attention(ad::Var point_features, const ProbeBatch& batch);
  // -> [receivers, links + 1]; the last column is the line-of-sight ray.
  ad::Var receiver_attention(ad::Var features, const ReceiverBatch& batch);
  // sh_basis [receivers, (links+1) * n_c] -> [receivers, 1] in (0, 1)
  ad::Var decode_sh(ad::Var ray_features, const ad::Tensor& sh_basis);

  // Full pipeline for arbitrary queries; [queries, 1].
  ad::Var forward(const SceneContext& ctx, std::span<const Query> queries);

 private:
  ad::Var attention_block(const std::string& prefix, ad::Var key_in, ad::Var value_in,
                          std::span<const Vec3> query_dirs, ad::AttentionLayout layout);

  ad::Graph& graph_;
  const RayProNet& model_;
  bool trainable_;
  std::map<std::string, ad::Var> cache_;
};

// SH basis rows for the given ray directions plus line of sight.
ad::Tensor sh_basis_rows(const ReceiverBatch& batch, int degree);

class RayProNet {
 public:
  explicit RayProNet(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  // Scalars in the probe-attention block (absent from the ablated model).
  std::size_t probe_block_size() const;

  // Inference in chunks; embed_points and probe features are computed once
  // per call and shared by all queries with the same (tx, pattern).
  std::vector<double> predict(const SceneContext& ctx, std::span<const Query> queries,
                              std::size_t chunk = 2048) const;

 private:
  ModelConfig cfg_;
  ad::ParameterSet params_;
};

}  // namespace rpn

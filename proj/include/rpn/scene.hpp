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

#include "rpn/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rpn {

struct Material {
  double reflection_amplitude = 0.5;  // |Γ| in [0, 1]
};

// Axis-aligned solid box, meters.
struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  Material material;
};

// Thin two-sided surface, meters.
struct Triangle {
  std::array<Vec3, 3> v{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  Material material;
};

using Primitive = std::variant<Box, Triangle>;

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    expand(b.min);
    expand(b.max);
  }
  bool empty() const { return (max.array() < min.array()).any(); }
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
  }
};

Aabb primitive_bounds(const Primitive& prim);
double primitive_area(const Primitive& prim);
const Material& primitive_material(const Primitive& prim);
// Euclidean distance from p to the primitive's surface.
double distance_to_surface(const Primitive& prim, const Vec3& p);
// Strict interior test; triangles have no interior.
bool inside_solid(const Primitive& prim, const Vec3& p);

// Uniform scale + translation between the normalized cube [-1, 1]^3 and
// meters: world = center + half_extent * normalized.
class WorldTransform {
 public:
  WorldTransform() = default;
  WorldTransform(Vec3 center, double half_extent);

  static WorldTransform fit(const Aabb& bounds);

  Vec3 to_world(const Vec3& normalized) const { return center_ + half_extent_ * normalized; }
  Vec3 to_normalized(const Vec3& world) const { return (world - center_) / half_extent_; }
  double to_world_distance(double d) const { return d * half_extent_; }
  double to_normalized_distance(double d) const { return d / half_extent_; }

  // Factor applied to meters to get normalized units.
  double scale() const { return 1.0 / half_extent_; }
  const Vec3& center() const { return center_; }
  double half_extent() const { return half_extent_; }

 private:
  Vec3 center_ = Vec3::Zero();
  double half_extent_ = 1.0;
};

struct PointCloudScene {
  std::vector<Primitive> primitives;
  // Optional declared simulation volume; unioned into bounds.
  std::optional<Aabb> extent;
  Aabb bounds;

  // Meters until normalize_scene() runs, normalized afterwards.
  std::vector<Vec3> points;
  std::vector<std::uint32_t> point_primitive;
  std::optional<WorldTransform> world_transform;

  bool normalized() const { return world_transform.has_value(); }
  // Order-sensitive fingerprint of the geometry.
  std::string hash() const;
};

// Parses the scene JSON document. Errors carry the JSON line on parse
// failures.
PointCloudScene parse_scene(const std::string& text);
PointCloudScene load_scene(const std::filesystem::path& path);
std::string scene_to_json(const PointCloudScene& scene, int indent = -1);

// round(area * density) points per primitive (minimum 1), area-uniform,
// seeded per primitive from (seed, primitive_index).
PointCloudScene sample_point_cloud(PointCloudScene scene, double density, std::uint64_t seed);

PointCloudScene normalize_scene(PointCloudScene scene);

struct ProbeSet {
  std::vector<Vec3> positions;  // normalized
  double spacing_m = 0.0;
  bool center_fallback = false;  // spacing exceeded every extent
};

double default_probe_spacing(const Aabb& bounds);

// Regular grid over the bounds starting at bounds.min; probes strictly
// inside a box are dropped.
ProbeSet place_probes(const PointCloudScene& scene, double spacing_m);

// Distance / elevation-from-+z / azimuth-from-+x of (to - from).
struct SphericalOffset {
  double distance = 0.0;
  double elevation = 0.0;  // [0, pi]
  double azimuth = 0.0;    // [-pi, pi)
};

SphericalOffset spherical_offset(const Vec3& from, const Vec3& to);
Vec3 unit_direction(const SphericalOffset& s);

struct Link {
  std::uint32_t index = 0;
  SphericalOffset geometry;
};

struct ProbeGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<Vec3> probe_positions;      // normalized
  std::vector<Vec3> transmitters;         // normalized
  std::vector<Vec3> receivers;            // normalized
  std::vector<Link> probe_point_links;    // probe-major, k per probe
  std::vector<SphericalOffset> probe_tx;  // probe-major, one per transmitter
  std::vector<Link> receiver_probe_links; // receiver-major, n per receiver
  std::vector<SphericalOffset> receiver_tx;  // receiver-major, one per transmitter
  std::vector<bool> probe_padded;
  std::vector<bool> receiver_padded;

  std::span<const Link> point_links(std::size_t probe) const {
    return {probe_point_links.data() + probe * k, k};
  }
  std::span<const Link> probe_links(std::size_t receiver) const {
    return {receiver_probe_links.data() + receiver * n, n};
  }
  const SphericalOffset& tx_link(std::size_t probe, std::size_t tx) const {
    return probe_tx[probe * transmitters.size() + tx];
  }
  const SphericalOffset& los(std::size_t receiver, std::size_t tx) const {
    return receiver_tx[receiver * transmitters.size() + tx];
  }
};

// All positions are normalized. Exact k-nearest sets, ascending distance,
// ties to the lower index; short candidate lists are padded by repeating
// the nearest entry and flagged.
ProbeGraph build_links(const PointCloudScene& scene, std::span<const Vec3> probes,
                       std::span<const Vec3> transmitters, std::span<const Vec3> receivers,
                       std::size_t n, std::size_t k);

}  // namespace rpn

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

#include "rpn/scene.hpp"

#include "rpn/errors.hpp"
#include "rpn/kdtree.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace rpn {

namespace {

using nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Vec3 read_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(what + ": expected an array of 3 numbers");
  }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) {
      throw ValidationError(what + ": non-numeric coordinate");
    }
    v[i] = j[i].get<double>();
    if (!std::isfinite(v[i])) {
      throw ValidationError(what + ": non-finite coordinate");
    }
  }
  return v;
}

Material read_material(const json& prim, const std::string& what) {
  Material m;
  if (prim.contains("material")) {
    const auto& mj = prim.at("material");
    if (mj.contains("reflection_amplitude")) {
      m.reflection_amplitude = mj.at("reflection_amplitude").get<double>();
    }
  }
  if (!(m.reflection_amplitude >= 0.0 && m.reflection_amplitude <= 1.0)) {
    throw ValidationError(what + ": reflection_amplitude must lie in [0, 1]");
  }
  return m;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// Face areas of a box in the order -x,+x,-y,+y,-z,+z.
std::array<double, 6> box_face_areas(const Box& b) {
  const Vec3 e = b.max - b.min;
  return {e.y() * e.z(), e.y() * e.z(), e.x() * e.z(), e.x() * e.z(), e.x() * e.y(), e.x() * e.y()};
}

// Splits `total` over weights by largest remainder; exact when the
// proportional shares are integral.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum <= 0) {
    out[0] = total;
    return out;
  }
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double share = static_cast<double>(total) * weights[i] / sum;
    // Guard against 49.999999 from rounding in the share itself.
    const double fl = std::floor(share + 1e-9);
    out[i] = static_cast<std::size_t>(fl);
    used += out[i];
    rema.emplace_back(share - fl, i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < total; ++r, ++used) {
    ++out[rema[r % rema.size()].second];
  }
  return out;
}

}  // namespace

Aabb primitive_bounds(const Primitive& prim) {
  Aabb box;
  std::visit(Overloaded{[&](const Box& b) {
                          box.expand(b.min);
                          box.expand(b.max);
                        },
                        [&](const Triangle& t) {
                          for (const auto& v : t.v) box.expand(v);
                        }},
             prim);
  return box;
}

double primitive_area(const Primitive& prim) {
  return std::visit(Overloaded{[](const Box& b) {
                                 const auto a = box_face_areas(b);
                                 return std::accumulate(a.begin(), a.end(), 0.0);
                               },
                               [](const Triangle& t) {
                                 return 0.5 * (t.v[1] - t.v[0]).cross(t.v[2] - t.v[0]).norm();
                               }},
                    prim);
}

const Material& primitive_material(const Primitive& prim) {
  return std::visit([](const auto& p) -> const Material& { return p.material; }, prim);
}

double distance_to_surface(const Primitive& prim, const Vec3& p) {
  return std::visit(
      Overloaded{[&](const Box& b) {
                   const Vec3 outside = (b.min - p).cwiseMax(p - b.max).cwiseMax(0.0);
                   if (outside.squaredNorm() > 0) {
                     return outside.norm();
                   }
                   return std::min((p - b.min).minCoeff(), (b.max - p).minCoeff());
                 },
                 [&](const Triangle& t) {
                   return (closest_on_triangle(p, t.v[0], t.v[1], t.v[2]) - p).norm();
                 }},
      prim);
}

bool inside_solid(const Primitive& prim, const Vec3& p) {
  if (const auto* b = std::get_if<Box>(&prim)) {
    return (p.array() > b->min.array()).all() && (p.array() < b->max.array()).all();
  }
  return false;
}

WorldTransform::WorldTransform(Vec3 center, double half_extent)
    : center_(std::move(center)), half_extent_(half_extent) {
  if (!(half_extent_ > 0.0) || !std::isfinite(half_extent_)) {
    throw ValidationError("world transform needs a positive finite scale");
  }
}

WorldTransform WorldTransform::fit(const Aabb& bounds) {
  if (bounds.empty()) {
    throw ValidationError("cannot normalize: empty bounds");
  }
  const double longest = bounds.extent().maxCoeff();
  if (!(longest > 0.0)) {
    throw ValidationError("cannot normalize: bounds have zero extent on every axis");
  }
  return WorldTransform(bounds.center(), 0.5 * longest);
}

std::string PointCloudScene::hash() const {
  Fnv1a h;
  for (const auto& prim : primitives) {
    std::visit(Overloaded{[&](const Box& b) {
                            h.update("box");
                            for (int i = 0; i < 3; ++i) h.update(b.min[i]);
                            for (int i = 0; i < 3; ++i) h.update(b.max[i]);
                            h.update(b.material.reflection_amplitude);
                          },
                          [&](const Triangle& t) {
                            h.update("triangle");
                            for (const auto& v : t.v)
                              for (int i = 0; i < 3; ++i) h.update(v[i]);
                            h.update(t.material.reflection_amplitude);
                          }},
               prim);
  }
  if (extent) {
    h.update("extent");
    for (int i = 0; i < 3; ++i) h.update(extent->min[i]);
    for (int i = 0; i < 3; ++i) h.update(extent->max[i]);
  }
  return h.hex();
}

PointCloudScene parse_scene(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("scene JSON parse error at line " + std::to_string(line_of(text, e.byte)) +
                          ": " + e.what());
  }
  PointCloudScene scene;
  try {
    if (doc.contains("units") && doc.at("units") != "m") {
      throw ValidationError("scene units must be \"m\"");
    }
    if (!doc.contains("primitives") || !doc.at("primitives").is_array()) {
      throw ValidationError("scene: missing \"primitives\" array");
    }
    std::size_t idx = 0;
    for (const auto& pj : doc.at("primitives")) {
      const std::string what = "primitive " + std::to_string(idx++);
      const auto type = pj.at("type").get<std::string>();
      if (type == "box") {
        Box b{read_vec3(pj.at("min"), what + ".min"), read_vec3(pj.at("max"), what + ".max"),
              read_material(pj, what)};
        if ((b.max.array() < b.min.array()).any()) {
          throw ValidationError(what + ": box max must be >= min");
        }
        scene.primitives.emplace_back(b);
      } else if (type == "triangle") {
        const auto& vj = pj.at("v");
        if (!vj.is_array() || vj.size() != 3) {
          throw ValidationError(what + ": triangle needs 3 vertices");
        }
        Triangle t;
        for (int i = 0; i < 3; ++i) t.v[i] = read_vec3(vj[i], what + ".v");
        t.material = read_material(pj, what);
        scene.primitives.emplace_back(t);
      } else {
        throw ValidationError(what + ": unknown primitive type \"" + type + "\"");
      }
    }
    if (doc.contains("extent")) {
      Aabb e;
      e.expand(read_vec3(doc.at("extent").at("min"), "extent.min"));
      e.expand(read_vec3(doc.at("extent").at("max"), "extent.max"));
      scene.extent = e;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scene: ") + e.what());
  }
  if (scene.primitives.empty()) {
    throw ValidationError("scene has no primitives");
  }
  for (const auto& p : scene.primitives) scene.bounds.expand(primitive_bounds(p));
  if (scene.extent) scene.bounds.expand(*scene.extent);
  return scene;
}

PointCloudScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open scene file: " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string scene_to_json(const PointCloudScene& scene, int indent) {
  json prims = json::array();
  for (const auto& prim : scene.primitives) {
    std::visit(Overloaded{[&](const Box& b) {
                            prims.push_back({{"type", "box"},
                                             {"min", vec_json(b.min)},
                                             {"max", vec_json(b.max)},
                                             {"material",
                                              {{"reflection_amplitude",
                                                b.material.reflection_amplitude}}}});
                          },
                          [&](const Triangle& t) {
                            prims.push_back({{"type", "triangle"},
                                             {"v", json::array({vec_json(t.v[0]), vec_json(t.v[1]),
                                                                vec_json(t.v[2])})},
                                             {"material",
                                              {{"reflection_amplitude",
                                                t.material.reflection_amplitude}}}});
                          }},
               prim);
  }
  json doc = {{"units", "m"}, {"primitives", prims}};
  if (scene.extent) {
    doc["extent"] = {{"min", vec_json(scene.extent->min)}, {"max", vec_json(scene.extent->max)}};
  }
  return doc.dump(indent);
}

PointCloudScene sample_point_cloud(PointCloudScene scene, double density, std::uint64_t seed) {
  if (!(density > 0.0) || !std::isfinite(density)) {
    throw ValidationError("point density must be > 0");
  }
  if (scene.normalized()) {
    throw ValidationError("sample_point_cloud expects a scene in meters");
  }
  scene.points.clear();
  scene.point_primitive.clear();
  for (std::size_t pi = 0; pi < scene.primitives.size(); ++pi) {
    const auto& prim = scene.primitives[pi];
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(primitive_area(prim) * density)));
    std::mt19937_64 rng(mix_seed(seed, pi));
    const auto emit = [&](const Vec3& p) {
      scene.points.push_back(p);
      scene.point_primitive.push_back(static_cast<std::uint32_t>(pi));
    };
    if (const auto* t = std::get_if<Triangle>(&prim)) {
      for (std::size_t i = 0; i < count; ++i) {
        const double r1 = std::sqrt(uniform01(rng));
        const double r2 = uniform01(rng);
        emit((1 - r1) * t->v[0] + r1 * (1 - r2) * t->v[1] + r1 * r2 * t->v[2]);
      }
    } else {
      const auto& b = std::get<Box>(prim);
      const auto areas = box_face_areas(b);
      const auto per_face = apportion(count, areas);
      for (int f = 0; f < 6; ++f) {
        const int axis = f / 2;
        const int u = (axis + 1) % 3, v = (axis + 2) % 3;
        for (std::size_t i = 0; i < per_face[f]; ++i) {
          Vec3 p;
          p[axis] = (f % 2 == 0) ? b.min[axis] : b.max[axis];
          p[u] = uniform(rng, b.min[u], b.max[u]);
          p[v] = uniform(rng, b.min[v], b.max[v]);
          emit(p);
        }
      }
    }
  }
  return scene;
}

PointCloudScene normalize_scene(PointCloudScene scene) {
  if (scene.normalized()) {
    return scene;
  }
  if (scene.points.empty()) {
    throw ValidationError("normalize_scene: sample the point cloud first");
  }
  const auto xf = WorldTransform::fit(scene.bounds);
  for (auto& p : scene.points) {
    p = xf.to_normalized(p).cwiseMax(-1.0).cwiseMin(1.0);
  }
  scene.world_transform = xf;
  return scene;
}

double default_probe_spacing(const Aabb& bounds) { return bounds.extent().maxCoeff() / 8.0; }

ProbeSet place_probes(const PointCloudScene& scene, double spacing_m) {
  if (!(spacing_m > 0.0) || !std::isfinite(spacing_m)) {
    throw ValidationError("probe spacing must be > 0");
  }
  const auto xf = scene.world_transform.value_or(WorldTransform::fit(scene.bounds));
  ProbeSet out;
  out.spacing_m = spacing_m;
  const Vec3 ext = scene.bounds.extent();
  if ((ext.array() < spacing_m).all()) {
    out.center_fallback = true;
    out.positions.push_back(xf.to_normalized(scene.bounds.center()));
    return out;
  }
  const double tol = 1e-9 * std::max(1.0, ext.maxCoeff());
  std::array<long, 3> counts{};
  for (int a = 0; a < 3; ++a) {
    counts[a] = static_cast<long>(std::floor(ext[a] / spacing_m + 1e-9)) + 1;
  }
  for (long iz = 0; iz < counts[2]; ++iz) {
    for (long iy = 0; iy < counts[1]; ++iy) {
      for (long ix = 0; ix < counts[0]; ++ix) {
        const Vec3 w(scene.bounds.min.x() + static_cast<double>(ix) * spacing_m,
                     scene.bounds.min.y() + static_cast<double>(iy) * spacing_m,
                     scene.bounds.min.z() + static_cast<double>(iz) * spacing_m);
        // Grid nodes on a box face count as solid; they would be surface points.
        const bool solid = std::any_of(scene.primitives.begin(), scene.primitives.end(), [&](const Primitive& p) {
          const auto* b = std::get_if<Box>(&p);
          return b && (w.array() >= b->min.array() - tol).all() && (w.array() <= b->max.array() + tol).all();
        });
        if (!solid) {
          out.positions.push_back(xf.to_normalized(w));
        }
      }
    }
  }
  return out;
}

SphericalOffset spherical_offset(const Vec3& from, const Vec3& to) {
  const Vec3 v = to - from;
  SphericalOffset s;
  s.distance = v.norm();
  if (s.distance == 0.0) {
    return s;
  }
  s.elevation = std::acos(std::clamp(v.z() / s.distance, -1.0, 1.0));
  s.azimuth = std::atan2(v.y(), v.x());
  if (s.azimuth >= kPi) {
    s.azimuth = -kPi;
  }
  return s;
}

Vec3 unit_direction(const SphericalOffset& s) {
  const double st = std::sin(s.elevation);
  return {st * std::cos(s.azimuth), st * std::sin(s.azimuth), std::cos(s.elevation)};
}

ProbeGraph build_links(const PointCloudScene& scene, std::span<const Vec3> probes,
                       std::span<const Vec3> transmitters, std::span<const Vec3> receivers,
                       std::size_t n, std::size_t k) {
  if (n == 0 || k == 0) {
    throw ValidationError("build_links: n and K must be >= 1");
  }
  if (probes.empty()) {
    throw ValidationError("build_links: no probes");
  }
  if (scene.points.empty()) {
    throw ValidationError("build_links: no points");
  }
  ProbeGraph g;
  g.n = n;
  g.k = k;
  g.probe_positions.assign(probes.begin(), probes.end());
  g.transmitters.assign(transmitters.begin(), transmitters.end());
  g.receivers.assign(receivers.begin(), receivers.end());

  const auto fill = [](const std::vector<Neighbor>& nb, std::size_t want, const Vec3& origin,
                       std::span<const Vec3> targets, std::vector<Link>& out) {
    for (std::size_t i = 0; i < want; ++i) {
      const auto idx = nb[i < nb.size() ? i : 0].index;
      out.push_back({idx, spherical_offset(origin, targets[idx])});
    }
    return nb.size() < want;
  };

  const KdTree point_tree(scene.points);
  g.probe_point_links.reserve(probes.size() * k);
  for (const auto& p : probes) {
    g.probe_padded.push_back(fill(point_tree.nearest(p, k), k, p, scene.points, g.probe_point_links));
    for (const auto& t : transmitters) g.probe_tx.push_back(spherical_offset(p, t));
  }
  const KdTree probe_tree(probes);
  g.receiver_probe_links.reserve(receivers.size() * n);
  for (const auto& r : receivers) {
    g.receiver_padded.push_back(fill(probe_tree.nearest(r, n), n, r, probes, g.receiver_probe_links));
    for (const auto& t : transmitters) g.receiver_tx.push_back(spherical_offset(r, t));
  }
  return g;
}

}  // namespace rpn

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

#include "rpn/oracle.hpp"

#include "rpn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rpn {

namespace {

Vec3 mirror(const Vec3& p, const Vec3& origin, const Vec3& normal) {
  return p - 2.0 * (p - origin).dot(normal) * normal;
}

// Segment a->b against the plane; returns the crossing when a and b lie on
// strictly opposite sides.
std::optional<Vec3> plane_crossing(const Vec3& a, const Vec3& b, const Vec3& origin,
                                   const Vec3& normal) {
  const double sa = (a - origin).dot(normal);
  const double sb = (b - origin).dot(normal);
  if (!(sa * sb < 0.0)) {
    return std::nullopt;
  }
  const double t = sa / (sa - sb);
  return a + t * (b - a);
}

// Open-interval hit test of the ray o + t d, t in (t0, t1), against a box.
bool ray_hits_box(const Vec3& o, const Vec3& d, double t0, double t1, const Box& b) {
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return false;
      continue;
    }
    double ta = (b.min[a] - o[a]) / d[a];
    double tb = (b.max[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (!(t0 < t1)) return false;
  }
  return true;
}

// Moller-Trumbore, hit parameter strictly inside (t0, t1).
bool ray_hits_triangle(const Vec3& o, const Vec3& d, double t0, double t1, const Triangle& tri) {
  const Vec3 e1 = tri.v[1] - tri.v[0];
  const Vec3 e2 = tri.v[2] - tri.v[0];
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return false;
  const double inv = 1.0 / det;
  const Vec3 s = o - tri.v[0];
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  const double t = e2.dot(q) * inv;
  return t > t0 && t < t1;
}

double lin_from_db(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace

void TraceConfig::validate() const {
  if (!(frequency_hz > 0.0) || !std::isfinite(frequency_hz)) {
    throw ValidationError("frequency_hz must be > 0");
  }
  if (max_reflection_order < 0 || max_reflection_order > 2) {
    throw ValidationError("max_reflection_order must be 0, 1 or 2");
  }
  if (!(p_min_db < p_max_db)) {
    throw ValidationError("P_min_db must be < P_max_db");
  }
}

double friis_gain_db(double distance_m, double frequency_hz) {
  const double lambda = kSpeedOfLight / frequency_hz;
  return 20.0 * std::log10(lambda / (4.0 * kPi * distance_m));
}

double knife_edge_loss(double nu) {
  if (nu <= -0.78) {
    return 0.0;
  }
  const double x = nu - 0.1;
  return 6.9 + 20.0 * std::log10(std::sqrt(x * x + 1.0) + x);
}

double normalize_power_db(double p_db, double p_min_db, double p_max_db) {
  if (!(p_db > -std::numeric_limits<double>::infinity())) {
    return 0.0;
  }
  return std::clamp((p_db - p_min_db) / (p_max_db - p_min_db), 0.0, 1.0);
}

Tracer::Tracer(const PointCloudScene& scene, TraceConfig cfg) : scene_(&scene), cfg_(cfg) {
  cfg_.validate();
  for (const auto& prim : scene.primitives) {
    if (const auto* b = std::get_if<Box>(&prim)) {
      boxes_.push_back(*b);
      for (int f = 0; f < 6; ++f) {
        const int axis = f / 2;
        Face face{};
        face.normal = Vec3::Zero();
        face.normal[axis] = (f % 2 == 0) ? -1.0 : 1.0;
        face.origin = (f % 2 == 0) ? b->min : b->max;
        face.one_sided = true;
        face.gamma = b->material.reflection_amplitude;
        face.is_rect = true;
        face.lo = b->min;
        face.hi = b->max;
        face.lo[axis] = face.hi[axis] = face.origin[axis];
        faces_.push_back(face);
      }
    } else {
      const auto& t = std::get<Triangle>(prim);
      triangles_.push_back(t);
      const Vec3 n = (t.v[1] - t.v[0]).cross(t.v[2] - t.v[0]);
      if (n.norm() == 0.0) continue;  // degenerate: occluder only
      Face face{};
      face.origin = t.v[0];
      face.normal = n.normalized();
      face.one_sided = false;
      face.gamma = t.material.reflection_amplitude;
      face.is_rect = false;
      face.v = t.v;
      faces_.push_back(face);
    }
  }
}

bool Tracer::segment_blocked(const Vec3& a, const Vec3& b) const {
  const Vec3 delta = b - a;
  const double len = delta.norm();
  if (len <= 2 * kSegmentEpsilon) {
    return false;
  }
  const Vec3 d = delta / len;
  const double t0 = kSegmentEpsilon, t1 = len - kSegmentEpsilon;
  for (const auto& box : boxes_) {
    if (ray_hits_box(a, d, t0, t1, box)) return true;
  }
  for (const auto& tri : triangles_) {
    if (ray_hits_triangle(a, d, t0, t1, tri)) return true;
  }
  return false;
}

bool Tracer::on_reflecting_side(const Face& f, const Vec3& p) const {
  return (p - f.origin).dot(f.normal) > 0.0;
}

bool Tracer::inside_face(const Face& f, const Vec3& p) const {
  if (f.is_rect) {
    constexpr double tol = 1e-9;
    return (p.array() >= f.lo.array() - tol).all() && (p.array() <= f.hi.array() + tol).all();
  }
  // Barycentric coordinates of the in-plane point.
  const Vec3 e0 = f.v[1] - f.v[0], e1 = f.v[2] - f.v[0], w = p - f.v[0];
  const double d00 = e0.dot(e0), d01 = e0.dot(e1), d11 = e1.dot(e1);
  const double d20 = w.dot(e0), d21 = w.dot(e1);
  const double den = d00 * d11 - d01 * d01;
  const double v = (d11 * d20 - d01 * d21) / den;
  const double u = (d00 * d21 - d01 * d20) / den;
  return v >= 0.0 && u >= 0.0 && u + v <= 1.0;
}

LosPath Tracer::los(const Vec3& tx, const Vec3& rx) const {
  if (tx == rx) {
    throw ValidationError("trace: transmitter and receiver coincide");
  }
  return {(rx - tx).norm(), segment_blocked(tx, rx)};
}

std::vector<ReflectionPath> Tracer::reflections(const Vec3& tx, const Vec3& rx) const {
  std::vector<ReflectionPath> out;
  if (cfg_.max_reflection_order < 1) {
    return out;
  }
  const auto same_side_ok = [&](const Face& f, const Vec3& a, const Vec3& b) {
    if (f.one_sided) return on_reflecting_side(f, a) && on_reflecting_side(f, b);
    const double sa = (a - f.origin).dot(f.normal), sb = (b - f.origin).dot(f.normal);
    return sa * sb > 0.0;
  };

  for (const auto& f : faces_) {
    if (!same_side_ok(f, tx, rx)) continue;
    const Vec3 image = mirror(tx, f.origin, f.normal);
    const auto hit = plane_crossing(image, rx, f.origin, f.normal);
    if (!hit || !inside_face(f, *hit)) continue;
    if (segment_blocked(tx, *hit) || segment_blocked(*hit, rx)) continue;
    ReflectionPath p;
    p.order = 1;
    p.length = (rx - image).norm();
    p.gamma_product = f.gamma;
    p.valid = true;
    p.bounce = {*hit, *hit};
    p.departure = *hit - tx;
    out.push_back(p);
  }

  if (cfg_.max_reflection_order >= 2) {
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      const auto& f1 = faces_[i];
      if (f1.one_sided && !on_reflecting_side(f1, tx)) continue;
      const Vec3 image1 = mirror(tx, f1.origin, f1.normal);
      for (std::size_t j = 0; j < faces_.size(); ++j) {
        if (i == j) continue;
        const auto& f2 = faces_[j];
        if (f2.one_sided && !on_reflecting_side(f2, rx)) continue;
        const Vec3 image2 = mirror(image1, f2.origin, f2.normal);
        const auto p2 = plane_crossing(image2, rx, f2.origin, f2.normal);
        if (!p2 || !inside_face(f2, *p2)) continue;
        const auto p1 = plane_crossing(image1, *p2, f1.origin, f1.normal);
        if (!p1 || !inside_face(f1, *p1)) continue;
        if (!same_side_ok(f1, tx, *p2) || !same_side_ok(f2, *p1, rx)) continue;
        if (segment_blocked(tx, *p1) || segment_blocked(*p1, *p2) || segment_blocked(*p2, rx)) {
          continue;
        }
        ReflectionPath p;
        p.order = 2;
        p.length = (rx - image2).norm();
        p.gamma_product = f1.gamma * f2.gamma;
        p.valid = true;
        p.bounce = {*p1, *p2};
        p.departure = *p1 - tx;
        out.push_back(p);
      }
    }
  }

  // Coplanar faces sharing an edge can both claim a bounce on that edge.
  std::vector<ReflectionPath> unique;
  for (const auto& p : out) {
    const bool dup = std::any_of(unique.begin(), unique.end(), [&](const ReflectionPath& q) {
      return q.order == p.order && (q.bounce[0] - p.bounce[0]).norm() < 1e-9 &&
             (q.bounce[1] - p.bounce[1]).norm() < 1e-9;
    });
    if (!dup) unique.push_back(p);
  }
  return unique;
}

std::optional<DiffractionPath> Tracer::diffraction(const Vec3& tx, const Vec3& rx) const {
  const double lambda = cfg_.wavelength();
  const Vec3 d = rx - tx;
  const double total = d.norm();
  std::optional<DiffractionPath> best;
  for (const auto& box : boxes_) {
    if (!ray_hits_box(tx, d / total, kSegmentEpsilon, total - kSegmentEpsilon, box)) continue;
    // Horizontal footprint crossing of the tx-rx vertical plane (Liang-Barsky in xy).
    double s0 = 0.0, s1 = 1.0;
    bool crosses = true;
    for (int a = 0; a < 2 && crosses; ++a) {
      if (std::abs(d[a]) < 1e-300) {
        crosses = tx[a] >= box.min[a] && tx[a] <= box.max[a];
        continue;
      }
      double ta = (box.min[a] - tx[a]) / d[a];
      double tb = (box.max[a] - tx[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      s0 = std::max(s0, ta);
      s1 = std::min(s1, tb);
      crosses = s0 <= s1;
    }
    if (!crosses) continue;
    for (double s : {s0, s1}) {
      Vec3 edge = tx + s * d;
      const double clearance = box.max.z() - edge.z();
      edge.z() = box.max.z();
      const double d1 = (edge - tx).norm();
      const double d2 = (rx - edge).norm();
      if (d1 <= 0.0 || d2 <= 0.0) continue;
      const double nu = clearance * std::sqrt(2.0 * (d1 + d2) / (lambda * d1 * d2));
      if (!best || nu > best->nu) {
        best = DiffractionPath{nu, knife_edge_loss(nu), d1 + d2, edge};
      }
    }
  }
  return best;
}

std::vector<PowerResult> Tracer::received_power(const Vec3& tx, const Vec3& rx,
                                                std::span<const AntennaPattern> patterns) const {
  // A receiver buried in a solid hears nothing, diffraction included.
  const bool buried = std::any_of(boxes_.begin(), boxes_.end(), [&](const Box& b) {
    return (rx.array() > b.min.array()).all() && (rx.array() < b.max.array()).all();
  });
  if (buried) {
    std::vector<PowerResult> silent(patterns.size());
    for (auto& r : silent) r.p_norm = normalize_power_db(r.p_db, cfg_.p_min_db, cfg_.p_max_db);
    return silent;
  }
  const auto direct = los(tx, rx);
  const double lambda = cfg_.wavelength();
  const auto spreading = [&](double len) {
    const double a = lambda / (4.0 * kPi * len);
    return a * a;
  };

  struct Term {
    Vec3 departure;
    double weight;
  };
  std::vector<Term> terms;
  if (!direct.blocked) {
    terms.push_back({rx - tx, spreading(direct.length)});
  } else if (cfg_.diffraction_enabled) {
    if (const auto edge = diffraction(tx, rx)) {
      terms.push_back({edge->edge - tx, spreading(edge->length) * lin_from_db(-edge->loss_db)});
    }
  }
  for (const auto& p : reflections(tx, rx)) {
    terms.push_back({p.departure, p.gamma_product * p.gamma_product * spreading(p.length)});
  }

  std::vector<PowerResult> out;
  out.reserve(patterns.size());
  for (const auto& pattern : patterns) {
    PowerResult r;
    for (const auto& t : terms) {
      r.p_linear += pattern.gain_linear(t.departure) * t.weight;
    }
    r.p_db = r.p_linear > 0.0 ? 10.0 * std::log10(r.p_linear)
                              : -std::numeric_limits<double>::infinity();
    r.p_norm = normalize_power_db(r.p_db, cfg_.p_min_db, cfg_.p_max_db);
    out.push_back(r);
  }
  return out;
}

PowerResult Tracer::received_power(const Vec3& tx, const Vec3& rx,
                                   const AntennaPattern& pattern) const {
  return received_power(tx, rx, std::span<const AntennaPattern>(&pattern, 1)).front();
}

LosPath trace_los(const PointCloudScene& scene, const Vec3& tx, const Vec3& rx,
                  const TraceConfig& cfg) {
  return Tracer(scene, cfg).los(tx, rx);
}

std::vector<ReflectionPath> trace_reflections(const PointCloudScene& scene, const Vec3& tx,
                                              const Vec3& rx, const TraceConfig& cfg) {
  return Tracer(scene, cfg).reflections(tx, rx);
}

PowerResult received_power(const PointCloudScene& scene, const Vec3& tx, const Vec3& rx,
                           const AntennaPattern& pattern, const TraceConfig& cfg) {
  return Tracer(scene, cfg).received_power(tx, rx, pattern);
}

RxGrid RxGrid::over_bounds(const Aabb& bounds, int nx, int ny, std::vector<double> heights) {
  if (nx <= 0 || ny <= 0 || heights.empty()) {
    throw ValidationError("receiver grid must be non-empty");
  }
  RxGrid g;
  g.nx = nx;
  g.ny = ny;
  g.x0 = bounds.min.x();
  g.x1 = bounds.max.x();
  g.y0 = bounds.min.y();
  g.y1 = bounds.max.y();
  g.heights = std::move(heights);
  return g;
}

std::vector<Vec3> RxGrid::positions() const {
  std::vector<Vec3> out;
  out.reserve(size());
  const double dx = (x1 - x0) / nx, dy = (y1 - y0) / ny;
  for (double h : heights) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        out.emplace_back(x0 + (ix + 0.5) * dx, y0 + (iy + 0.5) * dy, h);
      }
    }
  }
  return out;
}

Dataset generate_dataset(const PointCloudScene& scene, std::span<const Vec3> transmitters,
                         std::span<const int> pattern_ids, const RxGrid& grid,
                         const TraceConfig& cfg) {
  if (transmitters.empty()) {
    throw ValidationError("generate_dataset: no transmitters");
  }
  if (grid.size() == 0) {
    throw ValidationError("generate_dataset: empty receiver grid");
  }
  if (pattern_ids.empty()) {
    throw ValidationError("generate_dataset: no antenna patterns");
  }
  const Tracer tracer(scene, cfg);
  std::vector<AntennaPattern> patterns;
  for (int id : pattern_ids) patterns.emplace_back(id);

  Dataset d;
  auto& h = d.header;
  h.scene_hash = scene.hash();
  h.frequency_hz = cfg.frequency_hz;
  h.p_min_db = cfg.p_min_db;
  h.p_max_db = cfg.p_max_db;
  h.n_tx = static_cast<int>(transmitters.size());
  h.n_patterns = static_cast<int>(patterns.size());
  h.rx_dims = {grid.nx, grid.ny, static_cast<int>(grid.heights.size())};
  h.pattern_ids.assign(pattern_ids.begin(), pattern_ids.end());
  h.max_reflection_order = cfg.max_reflection_order;
  h.diffraction_enabled = cfg.diffraction_enabled;
  h.rx_region = {grid.x0, grid.x1, grid.y0, grid.y1};
  h.rx_heights = grid.heights;
  h.scene_json = scene_to_json(scene);

  const int n_val = h.n_tx >= 2 ? std::max(1, h.n_tx - static_cast<int>(std::floor(0.85 * h.n_tx)))
                                : 0;
  for (int t = 0; t < h.n_tx; ++t) {
    (t < h.n_tx - n_val ? h.train_tx : h.val_tx).push_back(t);
  }

  const auto rx = grid.positions();
  d.records.resize(transmitters.size() * patterns.size() * rx.size());
  for (std::size_t t = 0; t < transmitters.size(); ++t) {
    const Vec3& tx = transmitters[t];
    for (std::size_t r = 0; r < rx.size(); ++r) {
      const auto powers = tracer.received_power(tx, rx[r], patterns);
      for (std::size_t p = 0; p < patterns.size(); ++p) {
        d.records[(t * patterns.size() + p) * rx.size() + r] = Record{
            static_cast<float>(tx.x()),  static_cast<float>(tx.y()),
            static_cast<float>(tx.z()),  static_cast<float>(pattern_ids[p]),
            static_cast<float>(rx[r].x()), static_cast<float>(rx[r].y()),
            static_cast<float>(rx[r].z()), static_cast<float>(powers[p].p_norm)};
      }
    }
  }
  return d;
}

void generate_dataset(const PointCloudScene& scene, std::span<const Vec3> transmitters,
                      std::span<const int> pattern_ids, const RxGrid& grid,
                      const TraceConfig& cfg, const std::filesystem::path& out_path) {
  write_dataset(generate_dataset(scene, transmitters, pattern_ids, grid, cfg), out_path);
}

std::vector<Vec3> sample_transmitters(const PointCloudScene& scene, std::size_t count,
                                      double z_min, double z_max, std::uint64_t seed) {
  if (!(z_min <= z_max)) {
    throw ValidationError("transmitter height range is empty");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x7478));
  std::vector<Vec3> out;
  const auto& b = scene.bounds;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 1000 * (count + 1)) {
      throw ValidationError("could not place transmitters in free space");
    }
    const Vec3 p(uniform(rng, b.min.x(), b.max.x()), uniform(rng, b.min.y(), b.max.y()),
                 uniform(rng, z_min, z_max));
    const bool solid = std::any_of(scene.primitives.begin(), scene.primitives.end(),
                                   [&](const Primitive& q) {
                                     // Keep a small clearance from box walls.
                                     if (const auto* bx = std::get_if<Box>(&q)) {
                                       return ((p.array() > bx->min.array() - 0.5) &&
                                               (p.array() < bx->max.array() + 0.5))
                                           .all();
                                     }
                                     return false;
                                   });
    if (!solid) out.push_back(p);
  }
  return out;
}

}  // namespace rpn

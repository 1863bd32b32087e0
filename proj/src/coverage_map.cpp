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

#include "rpn/coverage_map.hpp"

#include "rpn/antenna.hpp"
#include "rpn/dataset.hpp"
#include "rpn/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace rpn {

using nlohmann::json;

std::vector<Vec3> map_positions(const Aabb& bounds, double height, int resolution) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(resolution) * resolution);
  const double dx = (bounds.max.x() - bounds.min.x()) / resolution;
  const double dy = (bounds.max.y() - bounds.min.y()) / resolution;
  for (int iy = 0; iy < resolution; ++iy) {
    for (int ix = 0; ix < resolution; ++ix) {
      out.emplace_back(bounds.min.x() + (ix + 0.5) * dx, bounds.min.y() + (iy + 0.5) * dy, height);
    }
  }
  return out;
}

void validate_map_request(const Aabb& bounds, const Vec3& tx, int pattern_id, double height,
                          int resolution) {
  if (resolution < 8 || resolution > 512) {
    throw ValidationError("resolution must be in [8, 512], got " + std::to_string(resolution));
  }
  if (pattern_id < 0 || pattern_id >= AntennaPattern::kCount) {
    throw ValidationError("pattern_id must be in [0, 3], got " + std::to_string(pattern_id));
  }
  if (!tx.allFinite() || !bounds.contains(tx)) {
    throw ValidationError("tx must lie inside the scene bounds");
  }
  if (!std::isfinite(height) || height < bounds.min.z() || height > bounds.max.z()) {
    throw ValidationError("height must lie inside the scene bounds [" + std::to_string(bounds.min.z()) +
                          ", " + std::to_string(bounds.max.z()) + "]");
  }
}

namespace {

std::vector<Query> make_queries(const SceneContext& ctx, const Vec3& tx_m, int pattern_id,
                                std::span<const Vec3> points_m) {
  const auto& xf = ctx.transform();
  const Vec3 tx = xf.to_normalized(tx_m);
  std::vector<Query> q;
  q.reserve(points_m.size());
  for (const auto& p : points_m) q.push_back({tx, pattern_id, xf.to_normalized(p)});
  return q;
}

}  // namespace

CoverageMap predict_map(const RayProNet& model, const SceneContext& ctx, const Vec3& tx_m, int pattern_id,
                        double height_m, int resolution, double p_min_db, double p_max_db) {
  const auto& bounds = ctx.scene().bounds;
  validate_map_request(bounds, tx_m, pattern_id, height_m, resolution);
  CoverageMap map;
  map.bounds = bounds;
  map.height = height_m;
  map.resolution = resolution;
  map.p_min_db = p_min_db;
  map.p_max_db = p_max_db;
  const auto pos = map_positions(bounds, height_m, resolution);
  const auto q = make_queries(ctx, tx_m, pattern_id, pos);
  const auto out = model.predict(ctx, q, 4096);
  map.values.assign(out.begin(), out.end());
  return map;
}

std::vector<double> predict_points(const RayProNet& model, const SceneContext& ctx, const Vec3& tx_m,
                                   int pattern_id, std::span<const Vec3> points_m) {
  return model.predict(ctx, make_queries(ctx, tx_m, pattern_id, points_m));
}

CoverageMap oracle_map(const PointCloudScene& scene, const Vec3& tx_m, int pattern_id, double height_m,
                       int resolution, const TraceConfig& cfg) {
  validate_map_request(scene.bounds, tx_m, pattern_id, height_m, resolution);
  CoverageMap map;
  map.bounds = scene.bounds;
  map.height = height_m;
  map.resolution = resolution;
  map.p_min_db = cfg.p_min_db;
  map.p_max_db = cfg.p_max_db;
  const Tracer tracer(scene, cfg);
  const AntennaPattern pattern(pattern_id);
  for (const auto& rx : map_positions(scene.bounds, height_m, resolution)) {
    map.values.push_back(static_cast<float>(tracer.received_power(tx_m, rx, pattern).p_norm));
  }
  return map;
}

std::string map_bytes(const CoverageMap& map) {
  const json header = {
      {"bounds", {{"min", {map.bounds.min.x(), map.bounds.min.y(), map.bounds.min.z()}},
                  {"max", {map.bounds.max.x(), map.bounds.max.y(), map.bounds.max.z()}}}},
      {"height", map.height},
      {"resolution", map.resolution},
      {"P_min_db", map.p_min_db},
      {"P_max_db", map.p_max_db},
  };
  const auto text = header.dump();
  std::string out(kMapMagic, 8);
  binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (float v : map.values) binio::put_f32(out, v);
  return out;
}

void write_map(const CoverageMap& map, const std::filesystem::path& path) {
  binio::write_file(path, map_bytes(map));
}

CoverageMap read_map(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  std::string text;
  const auto offset = binio::split_header(bytes, kMapMagic, text, "coverage map");
  CoverageMap map;
  try {
    const auto h = json::parse(text);
    const auto mn = h.at("bounds").at("min").get<std::vector<double>>();
    const auto mx = h.at("bounds").at("max").get<std::vector<double>>();
    if (mn.size() != 3 || mx.size() != 3) throw FormatError("coverage map: bounds need 3 components");
    map.bounds.min = Vec3(mn[0], mn[1], mn[2]);
    map.bounds.max = Vec3(mx[0], mx[1], mx[2]);
    map.height = h.at("height").get<double>();
    map.resolution = h.at("resolution").get<int>();
    map.p_min_db = h.at("P_min_db").get<double>();
    map.p_max_db = h.at("P_max_db").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("coverage map: malformed header: ") + e.what());
  }
  const auto n = static_cast<std::size_t>(map.resolution) * map.resolution;
  if (map.resolution <= 0 || bytes.size() - offset != 4 * n) {
    throw FormatError("coverage map: payload does not hold resolution^2 values");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  map.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) map.values[i] = binio::get_f32(p + 4 * i);
  return map;
}

void write_pgm(const CoverageMap& map, const std::filesystem::path& path) {
  const int r = map.resolution;
  std::string out = "P5\n" + std::to_string(r) + " " + std::to_string(r) + "\n255\n";
  for (int iy = r - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < r; ++ix) {
      const float v = std::clamp(map.values[static_cast<std::size_t>(iy) * r + ix], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  binio::write_file(path, out);
}

}  // namespace rpn

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

// Map file: "RPNM0001", u32 LE header length, JSON header {bounds, height,
// resolution, P_min_db, P_max_db}, then resolution^2 LE float32 row-major
// (row = y, column = x).

#include "rpn/model.hpp"
#include "rpn/oracle.hpp"

#include <filesystem>
#include <vector>

namespace rpn {

inline constexpr char kMapMagic[8] = {'R', 'P', 'N', 'M', '0', '0', '0', '1'};

struct CoverageMap {
  Aabb bounds;  // meters
  double height = 0.0;
  int resolution = 0;
  double p_min_db = -160.0;
  double p_max_db = -50.0;
  std::vector<float> values;  // normalized power

  double value_db(std::size_t i) const { return p_min_db + values.at(i) * (p_max_db - p_min_db); }
};

// Cell-center receiver positions (meters) over the bounds' xy footprint.
std::vector<Vec3> map_positions(const Aabb& bounds, double height, int resolution);

// Checks shared by the CLI and the server; the message names the field.
void validate_map_request(const Aabb& bounds, const Vec3& tx, int pattern_id, double height,
                          int resolution);

CoverageMap predict_map(const RayProNet& model, const SceneContext& ctx, const Vec3& tx_m, int pattern_id,
                        double height_m, int resolution, double p_min_db, double p_max_db);

// Point predictions (meters in, normalized power out).
std::vector<double> predict_points(const RayProNet& model, const SceneContext& ctx, const Vec3& tx_m,
                                   int pattern_id, std::span<const Vec3> points_m);

// Ground-truth map from the ray tracer over the same grid.
CoverageMap oracle_map(const PointCloudScene& scene, const Vec3& tx_m, int pattern_id, double height_m,
                       int resolution, const TraceConfig& cfg);

std::string map_bytes(const CoverageMap& map);
void write_map(const CoverageMap& map, const std::filesystem::path& path);
CoverageMap read_map(const std::filesystem::path& path);
// 8-bit binary PGM, first row is the highest y.
void write_pgm(const CoverageMap& map, const std::filesystem::path& path);

}  // namespace rpn

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

// Deterministic ground-truth propagation: line of sight, image-method
// reflections up to second order and an optional single knife edge.
// Contributions are summed incoherently.

#include "rpn/antenna.hpp"
#include "rpn/dataset.hpp"
#include "rpn/scene.hpp"

#include <array>
#include <optional>
#include <vector>

namespace rpn {

struct TraceConfig {
  double frequency_hz = 2.14e9;
  int max_reflection_order = 2;
  bool diffraction_enabled = false;
  double p_min_db = -160.0;
  double p_max_db = -50.0;

  void validate() const;
  double wavelength() const { return kSpeedOfLight / frequency_hz; }
};

// Segments are clipped by this much at both ends before occlusion tests.
inline constexpr double kSegmentEpsilon = 1e-9;

struct LosPath {
  double length = 0.0;
  bool blocked = false;
};

struct ReflectionPath {
  int order = 0;
  double length = 0.0;
  double gamma_product = 1.0;
  bool valid = false;
  std::array<Vec3, 2> bounce{Vec3::Zero(), Vec3::Zero()};
  Vec3 departure = Vec3::Zero();  // tx -> first bounce
};

struct DiffractionPath {
  double nu = 0.0;
  double loss_db = 0.0;
  double length = 0.0;  // tx -> edge -> rx
  Vec3 edge = Vec3::Zero();
};

struct PowerResult {
  double p_linear = 0.0;
  double p_db = -std::numeric_limits<double>::infinity();
  double p_norm = 0.0;
};

// Free-space path gain (lambda / 4 pi d)^2 in dB.
double friis_gain_db(double distance_m, double frequency_hz);

// Knife-edge diffraction loss J(nu) in dB (ITU-R P.526 approximation).
double knife_edge_loss(double nu);

double normalize_power_db(double p_db, double p_min_db, double p_max_db);

// Precomputed reflecting faces and occluders for one scene (meters).
class Tracer {
 public:
  Tracer(const PointCloudScene& scene, TraceConfig cfg);

  const TraceConfig& config() const { return cfg_; }

  LosPath los(const Vec3& tx, const Vec3& rx) const;
  // Valid image-method paths only, order 1 first.
  std::vector<ReflectionPath> reflections(const Vec3& tx, const Vec3& rx) const;
  // Dominant box edge over a blocked line of sight, if any.
  std::optional<DiffractionPath> diffraction(const Vec3& tx, const Vec3& rx) const;

  PowerResult received_power(const Vec3& tx, const Vec3& rx, const AntennaPattern& pattern) const;
  // One trace, many patterns.
  std::vector<PowerResult> received_power(const Vec3& tx, const Vec3& rx,
                                          std::span<const AntennaPattern> patterns) const;

  bool segment_blocked(const Vec3& a, const Vec3& b) const;

 private:
  struct Face {
    Vec3 origin;
    Vec3 normal;      // unit; outward for box faces
    bool one_sided;   // box faces reflect from outside only
    double gamma;
    // Rectangle (box face): axis-aligned extent; triangle: vertices.
    bool is_rect;
    Vec3 lo, hi;
    std::array<Vec3, 3> v;
  };

  bool on_reflecting_side(const Face& f, const Vec3& p) const;
  bool inside_face(const Face& f, const Vec3& p) const;

  const PointCloudScene* scene_;
  TraceConfig cfg_;
  std::vector<Face> faces_;
  std::vector<Box> boxes_;
  std::vector<Triangle> triangles_;
};

LosPath trace_los(const PointCloudScene& scene, const Vec3& tx, const Vec3& rx,
                  const TraceConfig& cfg);
std::vector<ReflectionPath> trace_reflections(const PointCloudScene& scene, const Vec3& tx,
                                              const Vec3& rx, const TraceConfig& cfg);
PowerResult received_power(const PointCloudScene& scene, const Vec3& tx, const Vec3& rx,
                           const AntennaPattern& pattern, const TraceConfig& cfg);

// Receiver layout: nx * ny cell centers over [x0,x1]x[y0,y1] at each height.
struct RxGrid {
  int nx = 0;
  int ny = 0;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  std::vector<double> heights;

  static RxGrid over_bounds(const Aabb& bounds, int nx, int ny, std::vector<double> heights);
  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * heights.size(); }
  // Height-major, then row (y), then column (x).
  std::vector<Vec3> positions() const;
};

// Records ordered tx-major, then pattern, then receiver. The last
// floor(0.15 * n_tx) transmitters (at least one when n_tx >= 2) form the
// validation split.
Dataset generate_dataset(const PointCloudScene& scene, std::span<const Vec3> transmitters,
                         std::span<const int> pattern_ids, const RxGrid& grid,
                         const TraceConfig& cfg);

void generate_dataset(const PointCloudScene& scene, std::span<const Vec3> transmitters,
                      std::span<const int> pattern_ids, const RxGrid& grid,
                      const TraceConfig& cfg, const std::filesystem::path& out_path);

// Seeded uniform transmitter placement in free space (not inside a box).
std::vector<Vec3> sample_transmitters(const PointCloudScene& scene, std::size_t count,
                                      double z_min, double z_max, std::uint64_t seed);

}  // namespace rpn

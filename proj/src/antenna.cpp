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

#include "rpn/antenna.hpp"

#include "rpn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rpn {

namespace {

constexpr double kDeg = kPi / 180.0;

// Parabolic beam in elevation and azimuth, 3GPP 38.901 style element.
double parabolic_beam(double theta, double phi, double beamwidth_deg, double max_gain_dbi,
                      double front_back_db) {
  const double bw = beamwidth_deg * kDeg;
  const double vertical = -std::min(12.0 * std::pow((theta - kPi / 2) / bw, 2), front_back_db);
  const double horizontal = -std::min(12.0 * std::pow(phi / bw, 2), front_back_db);
  return max_gain_dbi - std::min(-(vertical + horizontal), front_back_db);
}

}  // namespace

AntennaPattern::AntennaPattern(int id, Eigen::Matrix3d orientation)
    : id_(id), orientation_(std::move(orientation)) {
  if (id < 0 || id >= kCount) {
    throw ValidationError("pattern_id must be in [0, 3], got " + std::to_string(id));
  }
}

std::string_view AntennaPattern::name() const {
  switch (id_) {
    case kIsotropic: return "isotropic";
    case kPatch: return "patch";
    case kDipole: return "dipole";
    default: return "sector";
  }
}

double AntennaPattern::gain_dbi(int id, double theta, double phi) {
  double g = 0.0;
  switch (id) {
    case kIsotropic:
      return 0.0;
    case kPatch:
      g = parabolic_beam(theta, phi, 65.0, 8.0, 30.0);
      break;
    case kDipole: {
      const double s = std::sin(theta);
      if (s < 1e-12) {
        return kFloorDbi;
      }
      const double field = std::cos(0.5 * kPi * std::cos(theta)) / s;
      g = 2.15 + 20.0 * std::log10(std::max(std::abs(field), 1e-300));
      break;
    }
    case kSector:
      g = parabolic_beam(theta, phi, 30.0, 14.0, 25.0);
      break;
    default:
      throw ValidationError("pattern_id must be in [0, 3], got " + std::to_string(id));
  }
  return std::max(g, kFloorDbi);
}

double AntennaPattern::gain_dbi(const Vec3& world_direction) const {
  if (id_ == kIsotropic) {
    return 0.0;
  }
  const Vec3 local = orientation_.transpose() * world_direction;
  const double r = local.norm();
  if (r == 0.0) {
    throw ValidationError("antenna gain: zero direction");
  }
  const double theta = std::acos(std::clamp(local.z() / r, -1.0, 1.0));
  const double phi = std::atan2(local.y(), local.x());
  return gain_dbi(id_, theta, phi);
}

double AntennaPattern::gain_linear(const Vec3& world_direction) const {
  return std::pow(10.0, gain_dbi(world_direction) / 10.0);
}

}  // namespace rpn

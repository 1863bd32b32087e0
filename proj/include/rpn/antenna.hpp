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

#include <Eigen/Geometry>

#include <string_view>

namespace rpn {

// Transmit antenna radiation pattern. The antenna frame has boresight along
// +x and +z up; `orientation` maps antenna-frame vectors to world vectors.
class AntennaPattern {
 public:
  static constexpr int kCount = 4;
  static constexpr double kFloorDbi = -40.0;

  enum Id : int {
    kIsotropic = 0,
    kPatch = 1,   // 65 deg 3dB beam, 8 dBi
    kDipole = 2,  // vertical half-wave dipole
    kSector = 3,  // 30 deg 3dB beam, 14 dBi
  };

  explicit AntennaPattern(int id = kIsotropic,
                          Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity());

  int id() const { return id_; }
  const Eigen::Matrix3d& orientation() const { return orientation_; }
  std::string_view name() const;

  // Gain in dBi toward a world-frame direction (need not be unit length).
  double gain_dbi(const Vec3& world_direction) const;
  double gain_linear(const Vec3& world_direction) const;

  // Gain in the antenna frame; theta from +z, phi from +x toward +y.
  static double gain_dbi(int id, double theta, double phi);

 private:
  int id_;
  Eigen::Matrix3d orientation_;
};

}  // namespace rpn

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

#include <span>
#include <string_view>
#include <vector>

namespace rpn::sh {

// Recorded in checkpoints so a reader can reject a different basis.
inline constexpr std::string_view kConvention =
    "real-orthonormal;no-condon-shortley;order=(0,0),(1,-1),(1,0),(1,1),...;"
    "theta-from-+z;phi-atan2(y,x)";

inline constexpr int kMaxDegree = 8;

constexpr std::size_t basis_count(int degree) {
  return static_cast<std::size_t>((degree + 1) * (degree + 1));
}

// Flat index of (l, m), m in [-l, l].
constexpr std::size_t index(int l, int m) { return static_cast<std::size_t>(l * l + l + m); }

// Real SH values Y_l^m(direction) for l <= degree. Non-unit directions are
// renormalized; the zero vector is rejected.
std::vector<double> eval(const Vec3& direction, int degree);
void eval(const Vec3& direction, int degree, std::span<double> out);

// coeffs . eval(direction); coeffs.size() must be (degree+1)^2.
double project(std::span<const double> coeffs, const Vec3& direction);

}  // namespace rpn::sh

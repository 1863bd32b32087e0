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

#include "rpn/sh.hpp"

#include "rpn/errors.hpp"

#include <array>
#include <cmath>

namespace rpn::sh {

namespace {

// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!), computed as a running product to
// stay accurate for the small degrees used here.
double normalization(int l, int m) {
  double ratio = 1.0;
  for (int k = l - m + 1; k <= l + m; ++k) ratio /= static_cast<double>(k);
  return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
}

}  // namespace

void eval(const Vec3& direction, int degree, std::span<double> out) {
  if (degree < 0 || degree > kMaxDegree) {
    throw ValidationError("sh: degree must be in [0, " + std::to_string(kMaxDegree) + "]");
  }
  if (out.size() != basis_count(degree)) {
    throw ValidationError("sh: output buffer has " + std::to_string(out.size()) +
                          " slots, need " + std::to_string(basis_count(degree)));
  }
  const double r = direction.norm();
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw ValidationError("sh: direction must be a non-zero finite vector");
  }
  const Vec3 d = direction / r;
  const double x = std::clamp(d.z(), -1.0, 1.0);  // cos(theta)
  const double s = std::hypot(d.x(), d.y());      // sin(theta) >= 0
  const double phi = std::atan2(d.y(), d.x());

  // Associated Legendre P_l^m(x) without the Condon-Shortley phase.
  std::array<double, (kMaxDegree + 1) * (kMaxDegree + 1)> p{};
  const auto P = [&](int l, int m) -> double& { return p[static_cast<std::size_t>(l * (kMaxDegree + 1) + m)]; };
  P(0, 0) = 1.0;
  for (int m = 1; m <= degree; ++m) P(m, m) = P(m - 1, m - 1) * (2.0 * m - 1.0) * s;
  for (int m = 0; m < degree; ++m) P(m + 1, m) = x * (2.0 * m + 1.0) * P(m, m);
  for (int m = 0; m <= degree; ++m) {
    for (int l = m + 2; l <= degree; ++l) {
      P(l, m) = ((2.0 * l - 1.0) * x * P(l - 1, m) - (l + m - 1.0) * P(l - 2, m)) / (l - m);
    }
  }

  for (int l = 0; l <= degree; ++l) {
    out[index(l, 0)] = normalization(l, 0) * P(l, 0);
    for (int m = 1; m <= l; ++m) {
      const double k = std::sqrt(2.0) * normalization(l, m) * P(l, m);
      out[index(l, m)] = k * std::cos(m * phi);
      out[index(l, -m)] = k * std::sin(m * phi);
    }
  }
}

std::vector<double> eval(const Vec3& direction, int degree) {
  std::vector<double> out(basis_count(degree < 0 ? 0 : degree));
  eval(direction, degree, out);
  return out;
}

double project(std::span<const double> coeffs, const Vec3& direction) {
  int degree = 0;
  while (basis_count(degree) < coeffs.size() && degree < kMaxDegree) ++degree;
  if (basis_count(degree) != coeffs.size()) {
    throw ValidationError("sh: coefficient count " + std::to_string(coeffs.size()) +
                          " is not a square (L+1)^2");
  }
  std::array<double, basis_count(kMaxDegree)> basis{};
  eval(direction, degree, std::span<double>(basis.data(), coeffs.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * basis[i];
  return acc;
}

}  // namespace rpn::sh

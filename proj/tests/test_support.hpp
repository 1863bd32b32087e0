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

// Test-side reference implementations. Nothing here calls into the code
// under test except to build inputs.

#pragma once

#include "rpn/common.hpp"
#include "rpn/scene.hpp"
#include "rpn/sh.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace test {

using rpn::Vec3;

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Vec3 random_in(std::mt19937_64& rng, const Vec3& lo, const Vec3& hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {lo.x() + (hi.x() - lo.x()) * u(rng), lo.y() + (hi.y() - lo.y()) * u(rng),
          lo.z() + (hi.z() - lo.z()) * u(rng)};
}

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre on [-1, 1] by Newton iteration on P_n.
inline QuadratureRule gauss_legendre(int n) {
  QuadratureRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(rpn::kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = x;
    r.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

// Row-major Gram matrix of the library basis under an n_theta x n_phi
// product rule.
inline std::vector<double> sh_gram(int degree, int n_theta, int n_phi) {
  const auto rule = gauss_legendre(n_theta);
  const auto n = rpn::sh::basis_count(degree);
  std::vector<double> gram(n * n, 0.0);
  std::vector<double> y(n);
  for (int a = 0; a < n_theta; ++a) {
    const double ct = rule.nodes[a];
    const double st = std::sqrt(1.0 - ct * ct);
    for (int b = 0; b < n_phi; ++b) {
      const double phi = 2.0 * rpn::kPi * (b + 0.5) / n_phi;
      rpn::sh::eval(Vec3(st * std::cos(phi), st * std::sin(phi), ct), degree, y);
      const double w = rule.weights[a] * 2.0 * rpn::kPi / n_phi;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gram[i * n + j] += w * y[i] * y[j];
    }
  }
  return gram;
}

// All-pairs k nearest, nearer first, ties to the lower index.
inline std::vector<std::uint32_t> brute_knn(const std::vector<Vec3>& points, const Vec3& q, std::size_t k) {
  std::vector<std::uint32_t> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::vector<double> d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d[i] = (points[i] - q).squaredNorm();
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return d[a] < d[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

inline rpn::Triangle triangle(Vec3 a, Vec3 b, Vec3 c, double gamma = 0.5) {
  rpn::Triangle t;
  t.v = {a, b, c};
  t.material.reflection_amplitude = gamma;
  return t;
}

inline rpn::Box box(Vec3 lo, Vec3 hi, double gamma = 0.5) {
  rpn::Box b;
  b.min = lo;
  b.max = hi;
  b.material.reflection_amplitude = gamma;
  return b;
}

// Square ground of half-width `half` at z = 0, with an optional centered box.
inline std::string ground_scene_json(double half, double height, double box_half = 0.0, double box_height = 0.0,
                                     double gamma = 0.5) {
  const auto num = [](double v) { return std::to_string(v); };
  const std::string h = num(half), mh = num(-half);
  std::string s = R"({"units":"m","extent":{"min":[)" + mh + "," + mh + ",0],\"max\":[" + h + "," + h + "," +
                  num(height) + "]},\"primitives\":[";
  const std::string mat = R"(,"material":{"reflection_amplitude":)" + num(gamma) + "}}";
  s += R"({"type":"triangle","v":[[)" + mh + "," + mh + ",0],[" + h + "," + mh + ",0],[" + h + "," + h + ",0]]" + mat;
  s += R"(,{"type":"triangle","v":[[)" + mh + "," + mh + ",0],[" + h + "," + h + ",0],[" + mh + "," + h + ",0]]" + mat;
  if (box_half > 0.0) {
    const std::string b = num(box_half), mb = num(-box_half);
    s += R"(,{"type":"box","min":[)" + mb + "," + mb + ",0],\"max\":[" + b + "," + b + "," + num(box_height) + "]" +
         mat;
  }
  return s + "]}";
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("rpn_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace test

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

#include <cstdint>
#include <span>
#include <vector>

namespace rpn {

struct Neighbor {
  std::uint32_t index = 0;
  double distance_sq = 0.0;

  // Total order used everywhere: nearer first, then lower index.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.distance_sq < b.distance_sq ||
           (a.distance_sq == b.distance_sq && a.index < b.index);
  }
};

// Static 3-d tree for exact k-nearest queries.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  // Up to k neighbors sorted by (distance, index).
  std::vector<Neighbor> nearest(const Vec3& query, std::size_t k) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range into order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
  void search(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  static constexpr std::uint32_t kLeafSize = 8;
};

}  // namespace rpn

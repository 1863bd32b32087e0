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

#include "rpn/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace rpn {

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0, 0.0});
  if (end - begin <= kLeafSize) {
    return id;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis] ||
                            (points_[a][axis] == points_[b][axis] && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const auto left = build(begin, mid, depth + 1);
  const auto right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t k,
                    std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (auto i = node.begin; i < node.end; ++i) {
      const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const auto near = delta < 0 ? node.left : node.right;
  const auto far = delta < 0 ? node.right : node.left;
  search(near, q, k, heap);
  // <= keeps equal-distance candidates with lower indices reachable.
  if (heap.size() < k || delta * delta <= heap.front().distance_sq) {
    search(far, q, k, heap);
  }
}

std::vector<Neighbor> KdTree::nearest(const Vec3& query, std::size_t k) const {
  std::vector<Neighbor> heap;
  if (points_.empty() || k == 0) {
    return heap;
  }
  k = std::min(k, points_.size());
  heap.reserve(k);
  search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  return heap;
}

}  // namespace rpn

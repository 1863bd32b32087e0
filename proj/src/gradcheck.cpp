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

#include "rpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rpn {

double gradcheck_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(ad::ParameterSet& params, const std::function<ad::Var(ad::Graph&)>& build,
                          double h, double tolerance) {
  params.zero_grad();
  {
    ad::Graph g;
    g.backward(build(g));
  }
  const auto loss_at = [&]() {
    ad::Graph g;
    return g.value(build(g)).item();
  };
  GradcheckReport report;
  for (auto* p : params.all()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double analytic = p->grad.size() == p->value.size() ? p->grad[i] : 0.0;
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = loss_at();
      p->value[i] = saved - h;
      const double down = loss_at();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = gradcheck_rel_error(analytic, numeric);
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p->name + "[" + std::to_string(i) + "]";
      }
      if (!(rel < tolerance)) report.failures.push_back({p->name, i, analytic, numeric, rel});
    }
  }
  return report;
}

GradcheckReport gradcheck_micro(std::uint64_t seed, ModelVariant variant) {
  PointCloudScene scene;
  const Vec3 a(-5, -5, 0), b(5, -5, 0), c(5, 5, 0), d(-5, 5, 0);
  scene.primitives.push_back(Triangle{{a, b, c}, {}});
  scene.primitives.push_back(Triangle{{a, c, d}, {}});
  scene.primitives.push_back(Box{Vec3(-1.5, -1.5, 0), Vec3(1.5, 1.5, 2.5), {}});
  Aabb extent;
  extent.expand(Vec3(-5, -5, 0));
  extent.expand(Vec3(5, 5, 4));
  scene.extent = extent;
  scene.bounds = extent;
  for (const auto& p : scene.primitives) scene.bounds.expand(primitive_bounds(p));

  auto cfg = ModelConfig::micro();
  cfg.variant = variant;
  ScenePrep prep;
  prep.point_density = 0.4;
  prep.seed = seed;
  prep.probe_spacing_m = 4.0;
  const SceneContext ctx(scene, prep, cfg.k);
  RayProNet model(cfg, mix_seed(seed, 1));

  std::mt19937_64 rng(mix_seed(seed, 3));
  std::vector<Query> queries;
  std::vector<double> targets;
  for (int t = 0; t < 2; ++t) {
    const Vec3 tx(uniform(rng, -4.5, 4.5), uniform(rng, -4.5, -2.0), uniform(rng, 1.0, 3.5));
    for (int pattern : {0, 1}) {
      for (int r = 0; r < 3; ++r) {
        const Vec3 rx(uniform(rng, -4.5, 4.5), uniform(rng, 2.0, 4.5), 1.5);
        queries.push_back({ctx.transform().to_normalized(tx), pattern, ctx.transform().to_normalized(rx)});
        targets.push_back(uniform01(rng));
      }
    }
  }
  return gradcheck(model.params(), [&](ad::Graph& g) {
    ModelGraph mg(g, model, true);
    ad::Var pred = mg.forward(ctx, queries);
    ad::Var diff = g.sub(pred, g.constant(ad::Tensor({targets.size(), 1}, targets)));
    return g.mean_all(g.mul(diff, diff));
  });
}

}  // namespace rpn

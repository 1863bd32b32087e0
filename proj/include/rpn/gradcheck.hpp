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

#include "rpn/autodiff.hpp"
#include "rpn/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rpn {

struct GradcheckFailure {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::vector<GradcheckFailure> failures;

  bool passed() const { return failures.empty(); }
};

// |a - n| / max(|a|, |n|, floor). The floor keeps parameters whose true
// gradient is ~0 from turning round-off into a large ratio.
double gradcheck_rel_error(double analytic, double numeric, double floor = 1e-6);

// Central differences over every scalar of every parameter. `build` must
// construct a scalar loss on the given graph from the current values.
GradcheckReport gradcheck(ad::ParameterSet& params, const std::function<ad::Var(ad::Graph&)>& build,
                          double h = 1e-6, double tolerance = 1e-4);

// End-to-end check of the micro configuration on a small synthetic scene.
GradcheckReport gradcheck_micro(std::uint64_t seed, ModelVariant variant = ModelVariant::kFull);

}  // namespace rpn

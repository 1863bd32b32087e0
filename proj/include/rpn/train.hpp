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

#include "rpn/checkpoint.hpp"
#include "rpn/dataset.hpp"
#include "rpn/model.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

namespace rpn {

struct Metrics {
  double mse = 0.0;
  double psnr = std::numeric_limits<double>::infinity();  // +inf when mse == 0
};

// Mean squared error and 20 log10(max(pred) / sqrt(mse)).
Metrics compute_metrics(std::span<const double> predictions, std::span<const double> targets);

struct TrainConfig {
  std::size_t batch_size = 1000;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  // Write the best checkpoint every this many epochs (0: only at the end).
  std::size_t checkpoint_interval = 0;
  // Stop after this many epochs without a validation improvement (0: never).
  std::size_t patience = 20;
  // Transmitter/pattern groups mixed per shuffle window (0: shuffle all).
  std::size_t groups_per_batch = 8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_psnr = 0.0;

  nlohmann::json to_json() const;
};

// Network-ready view of a dataset: the scene context plus queries and
// targets for both splits.
struct PreparedData {
  std::unique_ptr<SceneContext> ctx;
  std::vector<Query> train_queries;
  std::vector<double> train_targets;
  std::vector<std::uint32_t> train_group;  // (tx, pattern) group per train sample
  std::vector<Query> val_queries;
  std::vector<double> val_targets;
};

PreparedData prepare_data(const Dataset& data, const ScenePrep& prep, std::size_t k);

struct TrainResult {
  std::unique_ptr<RayProNet> model;  // best-validation weights, float32-exact
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Metrics best_val;
  CheckpointMeta meta;
};

struct TrainHooks {
  std::optional<std::filesystem::path> history_path;  // JSON lines, rewritten per epoch
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(const Dataset& data, const PreparedData& prepared, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// Validation metrics of a model on the prepared split.
Metrics evaluate(const RayProNet& model, const PreparedData& prepared);

struct AblationResult {
  Metrics full;
  Metrics no_probes;
  std::size_t full_parameters = 0;
  std::size_t no_probes_parameters = 0;
};

AblationResult run_ablation(const Dataset& data, const PreparedData& prepared, ModelConfig model_cfg,
                            const TrainConfig& cfg);

// Plain MLP on (tx xyz, pattern one-hot, rx xyz): 10 -> 64 -> 64 -> 32 -> 64 -> 1
// with leaky ReLU and a logistic output.
class BaselineMlp {
 public:
  static constexpr std::size_t kInputs = 10;

  explicit BaselineMlp(std::uint64_t seed = 0);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  ad::Var forward(ad::Graph& g, std::span<const Query> queries, bool trainable) const;
  std::vector<double> predict(std::span<const Query> queries) const;

 private:
  ad::ParameterSet params_;
};

struct BaselineResult {
  Metrics val;
  std::vector<EpochRecord> history;
};

BaselineResult run_baseline_mlp(const PreparedData& prepared, const TrainConfig& cfg);

}  // namespace rpn

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

// Checkpoint file: "RPNC0001", u32 LE header length, JSON header, then the
// tensors as contiguous LE float32 in header order.

#include "rpn/model.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace rpn {

inline constexpr char kCheckpointMagic[8] = {'R', 'P', 'N', 'C', '0', '0', '0', '1'};

struct CheckpointMeta {
  ScenePrep prep;
  nlohmann::json train_config = nlohmann::json::object();
  double p_min_db = -160.0;
  double p_max_db = -50.0;
  std::string scene_hash;
  std::string scene_json;
  // Free-form training summary (best epoch, validation metrics).
  nlohmann::json summary = nlohmann::json::object();
};

struct Checkpoint {
  CheckpointMeta meta;
  std::unique_ptr<RayProNet> model;
  std::string hash;  // fingerprint of the file bytes

  // Rebuilds the network-side scene the model was trained on.
  SceneContext scene_context() const;
};

std::string checkpoint_bytes(const RayProNet& model, const CheckpointMeta& meta);
void save_checkpoint(const RayProNet& model, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter to float32, the precision checkpoints store.
void quantize_f32(RayProNet& model);
// Copies parameter values between models of identical configuration.
void copy_parameters(const RayProNet& from, RayProNet& to);

}  // namespace rpn

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

#include "rpn/checkpoint.hpp"

#include "rpn/dataset.hpp"
#include "rpn/errors.hpp"
#include "rpn/sh.hpp"

#include <algorithm>

namespace rpn {

using nlohmann::json;

std::string checkpoint_bytes(const RayProNet& model, const CheckpointMeta& meta) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto* p : model.params().all()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += p->value.size() * sizeof(float);
  }
  const json header = {
      {"model_config", model.config().to_json()},
      {"train_config", meta.train_config},
      {"train_config_digest", fnv1a_hex(meta.train_config.dump())},
      {"sh_convention", std::string(sh::kConvention)},
      {"P_min_db", meta.p_min_db},
      {"P_max_db", meta.p_max_db},
      {"scene_hash", meta.scene_hash},
      {"scene", meta.scene_json},
      {"scene_prep", meta.prep.to_json()},
      {"summary", meta.summary},
      {"tensors", tensors},
  };
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto* p : model.params().all()) {
    for (double v : p->value.values()) binio::put_f32(out, static_cast<float>(v));
  }
  return out;
}

void save_checkpoint(const RayProNet& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  binio::write_file(path, checkpoint_bytes(model, meta));
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::string text;
  const auto payload = binio::split_header(bytes, kCheckpointMagic, text, "checkpoint");
  Checkpoint ck;
  json h;
  try {
    h = json::parse(text);
    if (h.at("sh_convention").get<std::string>() != sh::kConvention) {
      throw FormatError("checkpoint: unsupported SH convention '" +
                        h.at("sh_convention").get<std::string>() + "'");
    }
    ModelConfig cfg;
    try {
      cfg = ModelConfig::from_json(h.at("model_config"));
    } catch (const FormatError&) {
      throw;
    } catch (const ValidationError& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
    ck.model = std::make_unique<RayProNet>(cfg);
    ck.meta.train_config = h.at("train_config");
    ck.meta.p_min_db = h.at("P_min_db").get<double>();
    ck.meta.p_max_db = h.at("P_max_db").get<double>();
    ck.meta.scene_hash = h.at("scene_hash").get<std::string>();
    ck.meta.scene_json = h.at("scene").get<std::string>();
    ck.meta.prep = ScenePrep::from_json(h.at("scene_prep"));
    ck.meta.summary = h.value("summary", json::object());

    const auto& tensors = h.at("tensors");
    auto params = ck.model->params().all();
    if (tensors.size() != params.size()) {
      throw FormatError("checkpoint: " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
    }
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + payload;
    const std::size_t available = bytes.size() - payload;
    std::size_t used = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      auto* p = params[i];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<ad::Shape>();
      if (name != p->name || shape != p->value.shape()) {
        throw FormatError("checkpoint: tensor '" + name + "' " + ad::shape_string(shape) +
                          " does not match model tensor '" + p->name + "' " + p->value.shape_string());
      }
      if (t.at("dtype").get<std::string>() != "f32") {
        throw FormatError("checkpoint: tensor '" + name + "' is not f32");
      }
      const auto off = t.at("offset").get<std::size_t>();
      if (off + p->value.size() * sizeof(float) > available) {
        throw FormatError("checkpoint: truncated payload at tensor '" + name + "'");
      }
      for (std::size_t j = 0; j < p->value.size(); ++j) {
        p->value[j] = static_cast<double>(binio::get_f32(base + off + 4 * j));
      }
      used = std::max(used, off + p->value.size() * sizeof(float));
    }
    if (used != available) throw FormatError("checkpoint: trailing bytes after the last tensor");
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  ck.hash = fnv1a_hex(bytes);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(binio::read_file(path));
}

SceneContext Checkpoint::scene_context() const {
  auto scene = parse_scene(meta.scene_json);
  if (!meta.scene_hash.empty() && scene.hash() != meta.scene_hash) {
    throw FormatError("checkpoint: embedded scene does not match its recorded hash");
  }
  return SceneContext(std::move(scene), meta.prep, model->config().k);
}

void quantize_f32(RayProNet& model) {
  for (auto* p : model.params().all()) {
    for (auto& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

void copy_parameters(const RayProNet& from, RayProNet& to) {
  auto src = from.params().all();
  auto dst = to.params().all();
  if (src.size() != dst.size()) throw ValidationError("copy_parameters: models differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || src[i]->value.shape() != dst[i]->value.shape()) {
      throw ValidationError("copy_parameters: tensor '" + src[i]->name + "' differs");
    }
    dst[i]->value = src[i]->value;
  }
}

}  // namespace rpn

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

#include "rpn/dataset.hpp"

#include "rpn/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace rpn {

namespace binio {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

std::size_t split_header(const std::string& bytes, const char (&magic)[8], std::string& header,
                         const char* what) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw FormatError(std::string(what) + ": bad magic");
  }
  const auto len = get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) {
    throw FormatError(std::string(what) + ": truncated header");
  }
  header.assign(bytes.data() + 12, len);
  return 12 + static_cast<std::size_t>(len);
}

}  // namespace binio

using nlohmann::json;

void Dataset::validate() const {
  const auto& h = header;
  if (h.n_tx <= 0 || h.n_patterns <= 0 || rx_count() == 0) {
    throw FormatError("dataset: empty layout");
  }
  const auto expected = static_cast<std::size_t>(h.n_tx) * h.n_patterns * rx_count();
  if (records.size() != expected) {
    throw FormatError("dataset: expected " + std::to_string(expected) + " records, found " +
                      std::to_string(records.size()));
  }
  std::set<int> seen;
  for (int t : h.train_tx) seen.insert(t);
  for (int t : h.val_tx) {
    if (seen.count(t)) {
      throw FormatError("dataset: transmitter " + std::to_string(t) + " in both splits");
    }
    seen.insert(t);
  }
  if (static_cast<int>(seen.size()) != h.n_tx || *seen.begin() < 0 || *seen.rbegin() >= h.n_tx) {
    throw FormatError("dataset: split does not cover every transmitter exactly once");
  }
  if (static_cast<int>(h.pattern_ids.size()) != h.n_patterns) {
    throw FormatError("dataset: pattern_ids does not match n_patterns");
  }
}

std::string dataset_header_json(const DatasetHeader& h) {
  json j = {
      {"scene_hash", h.scene_hash},
      {"frequency_hz", h.frequency_hz},
      {"P_min_db", h.p_min_db},
      {"P_max_db", h.p_max_db},
      {"n_tx", h.n_tx},
      {"n_patterns", h.n_patterns},
      {"rx_dims", h.rx_dims},
      {"split", {{"train_tx_indices", h.train_tx}, {"val_tx_indices", h.val_tx}}},
      {"pattern_ids", h.pattern_ids},
      {"oracle",
       {{"max_reflection_order", h.max_reflection_order},
        {"diffraction_enabled", h.diffraction_enabled},
        {"summation", "incoherent"}}},
      {"rx_grid", {{"region", h.rx_region}, {"heights", h.rx_heights}}},
  };
  if (!h.scene_json.empty()) {
    j["scene"] = json::parse(h.scene_json);
  }
  return j.dump();
}

DatasetHeader parse_dataset_header(const std::string& text) {
  DatasetHeader h;
  try {
    const auto j = json::parse(text);
    h.scene_hash = j.at("scene_hash").get<std::string>();
    h.frequency_hz = j.at("frequency_hz").get<double>();
    h.p_min_db = j.at("P_min_db").get<double>();
    h.p_max_db = j.at("P_max_db").get<double>();
    h.n_tx = j.at("n_tx").get<int>();
    h.n_patterns = j.at("n_patterns").get<int>();
    h.rx_dims = j.at("rx_dims").get<std::array<int, 3>>();
    h.train_tx = j.at("split").at("train_tx_indices").get<std::vector<int>>();
    h.val_tx = j.at("split").at("val_tx_indices").get<std::vector<int>>();
    h.pattern_ids = j.value("pattern_ids", std::vector<int>{});
    if (j.contains("oracle")) {
      h.max_reflection_order = j["oracle"].value("max_reflection_order", 2);
      h.diffraction_enabled = j["oracle"].value("diffraction_enabled", false);
    }
    if (j.contains("rx_grid")) {
      h.rx_region = j["rx_grid"].at("region").get<std::array<double, 4>>();
      h.rx_heights = j["rx_grid"].at("heights").get<std::vector<double>>();
    }
    if (j.contains("scene")) {
      h.scene_json = j["scene"].dump();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
  return h;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  const auto header = dataset_header_json(data.header);
  std::string out(kDatasetMagic, 8);
  binio::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + data.records.size() * sizeof(Record));
  for (const auto& r : data.records) {
    for (float v : {r.tx_x, r.tx_y, r.tx_z, r.pattern_id, r.rx_x, r.rx_y, r.rx_z, r.p_norm}) {
      binio::put_f32(out, v);
    }
  }
  binio::write_file(path, out);
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  std::string header;
  const auto offset = binio::split_header(bytes, kDatasetMagic, header, "dataset");
  Dataset d;
  d.header = parse_dataset_header(header);
  const auto payload = bytes.size() - offset;
  if (payload % sizeof(Record) != 0) {
    throw FormatError("dataset: truncated record payload");
  }
  d.records.resize(payload / sizeof(Record));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  for (auto& r : d.records) {
    float v[8];
    for (int i = 0; i < 8; ++i, p += 4) v[i] = binio::get_f32(p);
    r = {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
  }
  d.validate();
  return d;
}

}  // namespace rpn

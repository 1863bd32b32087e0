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

// Dataset file: "RPND0001", u32 LE header length, JSON header, then records
// of 8 LE float32 (tx xyz, pattern id, rx xyz, p_norm; meters).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rpn {

struct Record {
  float tx_x, tx_y, tx_z;
  float pattern_id;
  float rx_x, rx_y, rx_z;
  float p_norm;
};
static_assert(sizeof(Record) == 8 * sizeof(float));

struct DatasetHeader {
  std::string scene_hash;
  double frequency_hz = 2.14e9;
  double p_min_db = -160.0;
  double p_max_db = -50.0;
  int n_tx = 0;
  int n_patterns = 0;
  std::array<int, 3> rx_dims{0, 0, 0};  // nx, ny, heights
  std::vector<int> train_tx;
  std::vector<int> val_tx;
  // Oracle configuration and layout needed to rebuild model inputs.
  std::vector<int> pattern_ids;
  int max_reflection_order = 2;
  bool diffraction_enabled = false;
  std::array<double, 4> rx_region{0, 0, 0, 0};  // x0, x1, y0, y1
  std::vector<double> rx_heights;
  std::string scene_json;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Record> records;

  std::size_t rx_count() const {
    return static_cast<std::size_t>(header.rx_dims[0]) * header.rx_dims[1] * header.rx_dims[2];
  }
  std::size_t tx_of(std::size_t record) const {
    return record / (rx_count() * static_cast<std::size_t>(header.n_patterns));
  }
  std::size_t pattern_slot_of(std::size_t record) const {
    return (record / rx_count()) % static_cast<std::size_t>(header.n_patterns);
  }
  std::size_t rx_of(std::size_t record) const { return record % rx_count(); }

  // Checks record count and split consistency.
  void validate() const;
};

inline constexpr char kDatasetMagic[8] = {'R', 'P', 'N', 'D', '0', '0', '0', '1'};

std::string dataset_header_json(const DatasetHeader& header);
DatasetHeader parse_dataset_header(const std::string& text);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Shared little-endian helpers for the binary formats.
namespace binio {
void put_u32(std::string& out, std::uint32_t v);
std::uint32_t get_u32(const unsigned char* p);
void put_f32(std::string& out, float v);
float get_f32(const unsigned char* p);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);
// magic + u32 length + header text; returns the payload offset.
std::size_t split_header(const std::string& bytes, const char (&magic)[8], std::string& header,
                         const char* what);
}  // namespace binio

}  // namespace rpn

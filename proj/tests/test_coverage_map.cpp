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

#include "rpn/coverage_map.hpp"
#include "rpn/dataset.hpp"
#include "rpn/errors.hpp"
#include "model_fixture.hpp"

#include <doctest.h>

using namespace rpn;

TEST_CASE("map: cell centers cover the footprint row by row") {
  Aabb b;
  b.min = Vec3(-4, 0, 0);
  b.max = Vec3(4, 2, 3);
  const auto pos = map_positions(b, 1.5, 8);
  REQUIRE(pos.size() == 64);
  CHECK((pos[0] - Vec3(-3.5, 0.125, 1.5)).norm() < 1e-12);
  CHECK((pos[1] - Vec3(-2.5, 0.125, 1.5)).norm() < 1e-12);
  CHECK((pos[8] - Vec3(-3.5, 0.375, 1.5)).norm() < 1e-12);
  CHECK((pos[63] - Vec3(3.5, 1.875, 1.5)).norm() < 1e-12);
}

TEST_CASE("map: request validation names the field") {
  Aabb b;
  b.min = Vec3(-10, -10, 0);
  b.max = Vec3(10, 10, 6);
  CHECK_NOTHROW(validate_map_request(b, {0, 0, 5}, 3, 1.5, 8));
  const auto message = [&](const Vec3& tx, int pid, double h, int res) {
    try {
      validate_map_request(b, tx, pid, h, res);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({0, 0, 5}, 0, 1.5, 7).find("resolution") != std::string::npos);
  CHECK(message({0, 0, 5}, 0, 1.5, 513).find("resolution") != std::string::npos);
  CHECK(message({0, 0, 5}, 4, 1.5, 8).find("pattern_id") != std::string::npos);
  CHECK(message({0, 0, 9}, 0, 1.5, 8).find("tx") != std::string::npos);
  CHECK(message({0, 0, 5}, 0, 7.0, 8).find("height") != std::string::npos);
}

TEST_CASE("map: prediction agrees with point queries and stays in range") {
  test::TempDir dir("map");
  test::write_fixture_checkpoint(dir / "m.rpnc");
  const auto ck = load_checkpoint(dir / "m.rpnc");
  const auto ctx = ck.scene_context();
  const Vec3 tx(3, -4, 5);
  const auto map = predict_map(*ck.model, ctx, tx, 1, 1.5, 16, -160, -50);
  REQUIRE(map.values.size() == 256);
  const auto pos = map_positions(ctx.scene().bounds, 1.5, 16);
  const auto pts = predict_points(*ck.model, ctx, tx, 1, pos);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    CHECK(map.values[i] > 0.0f);
    CHECK(map.values[i] < 1.0f);
    CHECK(std::abs(map.values[i] - static_cast<float>(pts[i])) <= 1e-6f);
  }
  CHECK(map.value_db(0) == doctest::Approx(-160 + map.values[0] * 110.0));
  const auto again = predict_map(*ck.model, ctx, tx, 1, 1.5, 16, -160, -50);
  CHECK(map_bytes(again) == map_bytes(map));
}

TEST_CASE("map: file round trip, PGM and oracle map") {
  test::TempDir dir("mapio");
  const auto scene = parse_scene(test::ground_scene_json(10, 6, 2, 3));
  const auto map = oracle_map(scene, {0, -6, 4}, 0, 1.5, 8, TraceConfig{});
  REQUIRE(map.values.size() == 64);
  // Receivers inside the box get no power.
  const auto pos = map_positions(scene.bounds, 1.5, 8);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const bool inside = std::abs(pos[i].x()) < 2 && std::abs(pos[i].y()) < 2;
    if (inside) CHECK(map.values[i] == 0.0f);
    CHECK(map.values[i] >= 0.0f);
    CHECK(map.values[i] <= 1.0f);
  }
  write_map(map, dir / "o.rpnm");
  const auto back = read_map(dir / "o.rpnm");
  CHECK(back.values == map.values);
  CHECK(back.resolution == 8);
  CHECK(back.bounds.max == map.bounds.max);

  write_pgm(map, dir / "o.pgm");
  const auto pgm = binio::read_file(dir / "o.pgm");
  CHECK(pgm.rfind("P5\n8 8\n255\n", 0) == 0);
  CHECK(pgm.size() == 11 + 64);

  auto bytes = binio::read_file(dir / "o.rpnm");
  binio::write_file(dir / "t.rpnm", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_map(dir / "t.rpnm"), FormatError);
  CHECK_THROWS_AS(read_map(dir / "none.rpnm"), IoError);
  CHECK_THROWS_AS(oracle_map(scene, {0, -6, 4}, 0, 1.5, 4, TraceConfig{}), ValidationError);
}

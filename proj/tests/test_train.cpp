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
#include "rpn/oracle.hpp"
#include "rpn/train.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace rpn;

namespace {

ModelConfig tiny_model() {
  auto c = ModelConfig::micro();
  c.n = 3;
  c.k = 3;
  return c;
}

ScenePrep tiny_prep() {
  ScenePrep p;
  p.point_density = 0.3;
  p.seed = 2;
  p.probe_spacing_m = 5.0;
  return p;
}

const Dataset& tiny_dataset() {
  static const Dataset d = [] {
    const auto scene = parse_scene(test::ground_scene_json(10, 6, 2, 3));
    const auto tx = sample_transmitters(scene, 6, 2.0, 5.0, 3);
    const std::vector<int> patterns{0, 1};
    const auto grid = RxGrid::over_bounds(scene.bounds, 5, 5, {1.5});
    return generate_dataset(scene, tx, patterns, grid, TraceConfig{});
  }();
  return d;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 40;
  c.learning_rate = 3e-3;
  c.seed = 5;
  c.groups_per_batch = 2;
  return c;
}

}  // namespace

TEST_CASE("metrics: hand-computed values") {
  const std::vector<double> p{0.5, 1.0, 0.25, 0.0};
  const std::vector<double> t{0.5, 0.8, 0.25, 0.2};
  const auto m = compute_metrics(p, t);
  CHECK(m.mse == doctest::Approx(0.02).epsilon(1e-14));
  CHECK(m.psnr == doctest::Approx(20.0 * std::log10(1.0 / std::sqrt(0.02))).epsilon(1e-14));

  // mse 3e-4 with a unit peak.
  const std::vector<double> ones(100, 1.0);
  std::vector<double> off(100);
  for (std::size_t i = 0; i < off.size(); ++i) off[i] = 1.0 + (i % 2 ? 1 : -1) * std::sqrt(3e-4);
  std::vector<double> pred = ones;
  // Peak of the prediction must stay 1: perturb the target instead.
  const auto q = compute_metrics(pred, off);
  CHECK(q.mse == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(std::abs(q.psnr - 35.23) < 0.05);

  const auto exact = compute_metrics(t, t);
  CHECK(exact.mse == 0.0);
  CHECK(std::isinf(exact.psnr));
  CHECK(exact.psnr > 0);
  CHECK_THROWS_AS(compute_metrics({}, {}), ValidationError);
  CHECK_THROWS_AS(compute_metrics(p, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("train config: validation and json") {
  auto c = tiny_train();
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_train();
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_train();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("prepare: split keeps transmitters apart") {
  const auto& d = tiny_dataset();
  const auto p = prepare_data(d, tiny_prep(), 3);
  CHECK(p.train_queries.size() + p.val_queries.size() == d.records.size());
  CHECK(p.val_queries.size() == d.header.val_tx.size() * 2 * 25);
  const auto key = [](const Query& q) { return std::make_tuple(q.tx.x(), q.tx.y(), q.tx.z()); };
  std::set<std::tuple<double, double, double>> train_tx, val_tx;
  for (const auto& q : p.train_queries) train_tx.insert(key(q));
  for (const auto& q : p.val_queries) val_tx.insert(key(q));
  CHECK(train_tx.size() == d.header.train_tx.size());
  CHECK(val_tx.size() == d.header.val_tx.size());
  for (const auto& t : val_tx) CHECK(train_tx.count(t) == 0);
  std::set<std::uint32_t> groups(p.train_group.begin(), p.train_group.end());
  CHECK(groups.size() == d.header.train_tx.size() * 2);

  auto broken = d;
  broken.header.scene_json = test::ground_scene_json(11, 6);
  CHECK_THROWS_AS(prepare_data(broken, tiny_prep(), 3), FormatError);
}

TEST_CASE("train: same seed gives identical checkpoints; loss decreases") {
  test::TempDir dir("train");
  const auto& d = tiny_dataset();
  const auto p = prepare_data(d, tiny_prep(), 3);
  TrainHooks ha, hb;
  ha.checkpoint_path = dir / "a.rpnc";
  ha.history_path = dir / "a.jsonl";
  hb.checkpoint_path = dir / "b.rpnc";
  const auto a = train(d, p, tiny_model(), tiny_train(), ha);
  const auto b = train(d, p, tiny_model(), tiny_train(), hb);
  CHECK(binio::read_file(dir / "a.rpnc") == binio::read_file(dir / "b.rpnc"));
  REQUIRE(a.history.size() == 3);
  CHECK(a.history.back().train_mse < a.history.front().train_mse);

  // History file has one JSON object per epoch.
  std::ifstream in(dir / "a.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == lines);
    ++lines;
  }
  CHECK(lines == 3);

  // The best epoch's metrics reproduce from the saved weights.
  const auto ck = load_checkpoint(dir / "a.rpnc");
  const auto m = evaluate(*ck.model, p);
  CHECK(std::abs(m.mse - a.history[a.best_epoch].val_mse) <= 1e-9);
  CHECK(std::abs(m.mse - a.best_val.mse) <= 1e-12);

  auto other = tiny_train();
  other.seed = 6;
  const auto c = train(d, p, tiny_model(), other);
  CHECK(c.history.front().train_mse != a.history.front().train_mse);
}

TEST_CASE("checkpoint: round trip and corruption") {
  test::TempDir dir("ckpt");
  const auto& d = tiny_dataset();
  const auto p = prepare_data(d, tiny_prep(), 3);
  RayProNet model(tiny_model(), 8);
  quantize_f32(model);
  CheckpointMeta meta;
  meta.prep = tiny_prep();
  meta.scene_hash = d.header.scene_hash;
  meta.scene_json = d.header.scene_json;
  meta.summary = {{"note", "x"}};
  save_checkpoint(model, meta, dir / "m.rpnc");
  const auto back = load_checkpoint(dir / "m.rpnc");
  CHECK(back.meta.scene_hash == meta.scene_hash);
  CHECK(back.meta.summary == meta.summary);
  CHECK(back.model->config().to_json() == model.config().to_json());
  for (const auto* q : model.params().all()) {
    const auto a = q->value.values();
    const auto b = back.model->params().get(q->name).value.values();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK(std::abs(evaluate(*back.model, p).mse - evaluate(model, p).mse) < 1e-12);
  CHECK(checkpoint_bytes(*back.model, back.meta) == binio::read_file(dir / "m.rpnc"));
  const auto ctx = back.scene_context();
  CHECK(ctx.points().size() == p.ctx->points().size());

  auto bytes = binio::read_file(dir / "m.rpnc");
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(parse_checkpoint("RPNC0001"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.rpnc"), IoError);
}

TEST_CASE("checkpoint: quantize rounds to float32") {
  RayProNet m(tiny_model(), 1);
  m.params().get("rx_attn.bo").value.values()[0] = 0.1;
  quantize_f32(m);
  CHECK(m.params().get("rx_attn.bo").value.values()[0] == static_cast<double>(0.1f));
  RayProNet other(tiny_model(), 2);
  copy_parameters(m, other);
  CHECK(other.params().get("rx_attn.bo").value.values()[0] == static_cast<double>(0.1f));
  RayProNet wrong(ModelConfig::micro(), 2);
  CHECK_THROWS_AS(copy_parameters(m, wrong), ValidationError);
}

TEST_CASE("baseline: deterministic and learns") {
  const auto& d = tiny_dataset();
  const auto p = prepare_data(d, tiny_prep(), 3);
  auto cfg = tiny_train();
  cfg.epochs = 5;
  cfg.groups_per_batch = 0;
  const auto a = run_baseline_mlp(p, cfg);
  const auto b = run_baseline_mlp(p, cfg);
  CHECK(a.val.mse == b.val.mse);
  REQUIRE(a.history.size() == 5);
  CHECK(a.history.back().train_mse < a.history.front().train_mse);
  const BaselineMlp mlp(3);
  const auto out = mlp.predict(p.val_queries);
  for (double v : out) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("ablation: reports both variants") {
  const auto& d = tiny_dataset();
  const auto p = prepare_data(d, tiny_prep(), 3);
  auto cfg = tiny_train();
  cfg.epochs = 1;
  const auto r = run_ablation(d, p, tiny_model(), cfg);
  CHECK(r.full_parameters > r.no_probes_parameters);
  CHECK(std::isfinite(r.full.mse));
  CHECK(std::isfinite(r.no_probes.mse));
}

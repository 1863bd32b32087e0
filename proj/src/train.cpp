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

#include "rpn/train.hpp"

#include "rpn/antenna.hpp"
#include "rpn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace rpn {

using ad::Shape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

Metrics compute_metrics(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ValidationError("compute_metrics: need equal, non-empty prediction and target vectors (got " +
                          std::to_string(predictions.size()) + " and " + std::to_string(targets.size()) + ")");
  }
  double sum = 0.0;
  double peak = predictions[0];
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    sum += d * d;
    peak = std::max(peak, predictions[i]);
  }
  Metrics m;
  m.mse = sum / static_cast<double>(predictions.size());
  m.psnr = m.mse > 0.0 ? 20.0 * std::log10(peak / std::sqrt(m.mse)) : std::numeric_limits<double>::infinity();
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train config: learning_rate must be > 0");
  }
  if (epochs == 0) throw ValidationError("train config: epochs must be >= 1");
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},   {"learning_rate", learning_rate},
          {"epochs", epochs},           {"seed", seed},
          {"checkpoint_interval", checkpoint_interval},
          {"patience", patience},       {"groups_per_batch", groups_per_batch}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.patience = j.value("patience", c.patience);
  c.groups_per_batch = j.value("groups_per_batch", c.groups_per_batch);
  c.validate();
  return c;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_mse", train_mse}, {"val_mse", val_mse}, {"val_psnr", val_psnr}};
}

// ---------------------------------------------------------------------------
// Data

PreparedData prepare_data(const Dataset& data, const ScenePrep& prep, std::size_t k) {
  data.validate();
  if (data.header.scene_json.empty()) {
    throw ValidationError("dataset header carries no scene description");
  }
  if (data.header.train_tx.empty() || data.header.val_tx.empty()) {
    throw ValidationError("dataset needs both training and validation transmitters");
  }
  auto scene = parse_scene(data.header.scene_json);
  if (scene.hash() != data.header.scene_hash) {
    throw FormatError("dataset: embedded scene does not match scene_hash");
  }
  PreparedData out;
  out.ctx = std::make_unique<SceneContext>(std::move(scene), prep, k);
  const auto& xf = out.ctx->transform();

  std::vector<char> is_val(static_cast<std::size_t>(data.header.n_tx), 0);
  for (int t : data.header.val_tx) is_val[static_cast<std::size_t>(t)] = 1;
  std::map<std::size_t, std::uint32_t> group_ids;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    const int pattern = static_cast<int>(r.pattern_id);
    if (static_cast<float>(pattern) != r.pattern_id || pattern < 0 || pattern >= AntennaPattern::kCount) {
      throw FormatError("dataset: record " + std::to_string(i) + " has an invalid pattern id");
    }
    Query q{xf.to_normalized(Vec3(r.tx_x, r.tx_y, r.tx_z)), pattern,
            xf.to_normalized(Vec3(r.rx_x, r.rx_y, r.rx_z))};
    const auto tx = data.tx_of(i);
    if (is_val[tx]) {
      out.val_queries.push_back(q);
      out.val_targets.push_back(r.p_norm);
    } else {
      const auto key = tx * static_cast<std::size_t>(data.header.n_patterns) + data.pattern_slot_of(i);
      auto [it, fresh] = group_ids.emplace(key, static_cast<std::uint32_t>(group_ids.size()));
      out.train_queries.push_back(q);
      out.train_targets.push_back(r.p_norm);
      out.train_group.push_back(it->second);
    }
  }
  return out;
}

Metrics evaluate(const RayProNet& model, const PreparedData& prepared) {
  return compute_metrics(model.predict(*prepared.ctx, prepared.val_queries), prepared.val_targets);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Sample order for one epoch. Groups are shuffled, then taken
// `groups_per_batch` at a time and their samples shuffled together, so a
// batch spans few (tx, pattern) groups and shares probe work.
std::vector<std::uint32_t> epoch_order(std::mt19937_64& rng, std::span<const std::uint32_t> group,
                                       std::size_t groups_per_batch) {
  std::vector<std::uint32_t> order(group.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  if (groups_per_batch == 0) {
    shuffle(rng, std::span<std::uint32_t>(order));
    return order;
  }
  const std::uint32_t n_groups = group.empty() ? 0 : *std::max_element(group.begin(), group.end()) + 1;
  std::vector<std::vector<std::uint32_t>> members(n_groups);
  for (std::size_t i = 0; i < group.size(); ++i) members[group[i]].push_back(static_cast<std::uint32_t>(i));
  std::vector<std::uint32_t> gorder(n_groups);
  for (std::uint32_t g = 0; g < n_groups; ++g) gorder[g] = g;
  shuffle(rng, std::span<std::uint32_t>(gorder));
  order.clear();
  for (std::size_t w = 0; w < n_groups; w += groups_per_batch) {
    const auto begin = order.size();
    for (std::size_t g = w; g < std::min<std::size_t>(n_groups, w + groups_per_batch); ++g) {
      order.insert(order.end(), members[gorder[g]].begin(), members[gorder[g]].end());
    }
    shuffle(rng, std::span<std::uint32_t>(order.data() + begin, order.size() - begin));
  }
  return order;
}

Var mse_loss(ad::Graph& g, Var pred, std::span<const double> targets) {
  Tensor t({targets.size(), 1}, std::vector<double>(targets.begin(), targets.end()));
  Var d = g.sub(pred, g.constant(std::move(t)));
  return g.mean_all(g.mul(d, d));
}

// Model-agnostic epoch loop. `snapshot` returns a float32-exact copy of the
// current weights and its validation metrics; the best one is kept.
template <class Model>
struct Loop {
  std::unique_ptr<Model> best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Metrics best_val{std::numeric_limits<double>::infinity(), 0.0};
};

template <class Model, class Forward, class Snapshot, class OnEpoch>
Loop<Model> run_loop(ad::ParameterSet& params, const PreparedData& d, const TrainConfig& cfg, Forward forward,
                     Snapshot snapshot, OnEpoch on_epoch) {
  cfg.validate();
  if (d.train_queries.empty()) throw ValidationError("train: no training samples");
  ad::Adam adam(params.all(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(mix_seed(cfg.seed, 2));
  Loop<Model> loop;
  std::size_t stale = 0;
  std::vector<Query> bq;
  std::vector<double> bt;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(rng, d.train_group, cfg.groups_per_batch);
    double sq_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      bq.clear();
      bt.clear();
      for (std::size_t i = begin; i < end; ++i) {
        bq.push_back(d.train_queries[order[i]]);
        bt.push_back(d.train_targets[order[i]]);
      }
      ad::Graph g;
      Var loss = mse_loss(g, forward(g, bq), bt);
      const double value = g.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      params.zero_grad();
      g.backward(loss);
      try {
        adam.step();
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      sq_sum += value * static_cast<double>(end - begin);
    }
    auto [snap, val] = snapshot();
    EpochRecord rec{epoch, sq_sum / static_cast<double>(order.size()), val.mse, val.psnr};
    loop.history.push_back(rec);
    const bool improved = val.mse < loop.best_val.mse || !loop.best;
    if (improved) {
      loop.best = std::move(snap);
      loop.best_val = val;
      loop.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    on_epoch(rec, loop);
    if (cfg.patience > 0 && stale >= cfg.patience) break;
  }
  return loop;
}

std::string history_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) out += r.to_json().dump() + "\n";
  return out;
}

}  // namespace

TrainResult train(const Dataset& data, const PreparedData& prepared, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  model_cfg.validate();
  RayProNet model(model_cfg, mix_seed(cfg.seed, 1));
  const auto& ctx = *prepared.ctx;

  TrainResult result;
  result.meta.prep = ctx.prep();
  result.meta.train_config = cfg.to_json();
  result.meta.p_min_db = data.header.p_min_db;
  result.meta.p_max_db = data.header.p_max_db;
  result.meta.scene_hash = data.header.scene_hash;
  result.meta.scene_json = data.header.scene_json;

  const auto write_best = [&](const Loop<RayProNet>& loop) {
    if (!hooks.checkpoint_path || !loop.best) return;
    auto meta = result.meta;
    meta.summary = {{"best_epoch", loop.best_epoch}, {"val_mse", loop.best_val.mse},
                    {"val_psnr", loop.best_val.psnr}};
    save_checkpoint(*loop.best, meta, *hooks.checkpoint_path);
  };
  if (hooks.history_path) binio::write_file(*hooks.history_path, "");

  auto loop = run_loop<RayProNet>(
      model.params(), prepared, cfg,
      [&](ad::Graph& g, std::span<const Query> q) {
        ModelGraph mg(g, model, true);
        return mg.forward(ctx, q);
      },
      [&]() {
        auto snap = std::make_unique<RayProNet>(model_cfg);
        copy_parameters(model, *snap);
        quantize_f32(*snap);
        const auto m = evaluate(*snap, prepared);
        return std::make_pair(std::move(snap), m);
      },
      [&](const EpochRecord& rec, const Loop<RayProNet>& loop) {
        if (hooks.history_path) binio::write_file(*hooks.history_path, history_jsonl(loop.history));
        if (cfg.checkpoint_interval > 0 && (rec.epoch + 1) % cfg.checkpoint_interval == 0) write_best(loop);
        if (hooks.on_epoch) hooks.on_epoch(rec);
      });
  write_best(loop);

  result.model = std::move(loop.best);
  result.history = std::move(loop.history);
  result.best_epoch = loop.best_epoch;
  result.best_val = loop.best_val;
  result.meta.summary = {{"best_epoch", result.best_epoch}, {"val_mse", result.best_val.mse},
                         {"val_psnr", result.best_val.psnr}};
  return result;
}

AblationResult run_ablation(const Dataset& data, const PreparedData& prepared, ModelConfig model_cfg,
                            const TrainConfig& cfg) {
  AblationResult r;
  model_cfg.variant = ModelVariant::kFull;
  auto full = train(data, prepared, model_cfg, cfg);
  r.full = full.best_val;
  r.full_parameters = full.model->parameter_count();
  model_cfg.variant = ModelVariant::kNoProbes;
  auto ablated = train(data, prepared, model_cfg, cfg);
  r.no_probes = ablated.best_val;
  r.no_probes_parameters = ablated.model->parameter_count();
  return r;
}

// ---------------------------------------------------------------------------
// Baseline

BaselineMlp::BaselineMlp(std::uint64_t seed) {
  params_.reseed(seed);
  const std::size_t widths[] = {kInputs, 64, 64, 32, 64, 1};
  for (std::size_t i = 0; i + 1 < std::size(widths); ++i) {
    const auto l = "mlp.l" + std::to_string(i);
    params_.add(l + ".w", {widths[i], widths[i + 1]}, widths[i]);
    params_.add(l + ".b", {1, widths[i + 1]}, widths[i]);
  }
}

Var BaselineMlp::forward(ad::Graph& g, std::span<const Query> queries, bool trainable) const {
  Tensor x({queries.size(), kInputs});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    double* row = x.data() + i * kInputs;
    for (int a = 0; a < 3; ++a) row[a] = q.tx[a];
    row[3 + q.pattern] = 1.0;
    for (int a = 0; a < 3; ++a) row[7 + a] = q.rx[a];
  }
  const auto P = [&](const std::string& name) {
    const auto& p = params_.get(name);
    return trainable ? g.parameter(const_cast<ad::Parameter&>(p)) : g.constant(p.value);
  };
  Var h = g.constant(std::move(x));
  constexpr std::size_t kLayers = 5;
  for (std::size_t i = 0; i < kLayers; ++i) {
    const auto l = "mlp.l" + std::to_string(i);
    h = g.linear(h, P(l + ".w"), P(l + ".b"));
    if (i + 1 < kLayers) h = g.leaky_relu(h, 0.01);
  }
  return g.sigmoid(h);
}

std::vector<double> BaselineMlp::predict(std::span<const Query> queries) const {
  std::vector<double> out;
  out.reserve(queries.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t b = 0; b < queries.size(); b += kChunk) {
    ad::Graph g;
    const auto v = g.value(forward(g, queries.subspan(b, std::min(kChunk, queries.size() - b)), false));
    out.insert(out.end(), v.values().begin(), v.values().end());
  }
  return out;
}

BaselineResult run_baseline_mlp(const PreparedData& prepared, const TrainConfig& cfg) {
  BaselineMlp mlp(mix_seed(cfg.seed, 1));
  auto base_cfg = cfg;
  base_cfg.groups_per_batch = 0;
  auto loop = run_loop<BaselineMlp>(
      mlp.params(), prepared, base_cfg,
      [&](ad::Graph& g, std::span<const Query> q) { return mlp.forward(g, q, true); },
      [&]() {
        auto snap = std::make_unique<BaselineMlp>();
        auto src = mlp.params().all();
        auto dst = snap->params().all();
        for (std::size_t i = 0; i < src.size(); ++i) {
          dst[i]->value = src[i]->value;
          for (auto& v : dst[i]->value.values()) v = static_cast<double>(static_cast<float>(v));
        }
        const auto m = compute_metrics(snap->predict(prepared.val_queries), prepared.val_targets);
        return std::make_pair(std::move(snap), m);
      },
      [](const EpochRecord&, const Loop<BaselineMlp>&) {});
  return {loop.best_val, std::move(loop.history)};
}

}  // namespace rpn

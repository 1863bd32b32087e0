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

// rpn: dataset generation, training, evaluation, prediction and serving.
//
// Exit codes: 0 ok, 2 invalid input, 3 I/O failure, 4 numerical failure.

#include "rpn/coverage_map.hpp"
#include "rpn/errors.hpp"
#include "rpn/gradcheck.hpp"
#include "rpn/oracle.hpp"
#include "rpn/server.hpp"
#include "rpn/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <sstream>

namespace {

using nlohmann::json;
using rpn::Vec3;

constexpr const char* kVersion = "0.1.0";

// JSON config files. Top-level keys apply to the active subcommand; an
// object keyed by a subcommand name applies to that subcommand only.
class JsonConfig : public CLI::Config {
 public:
  std::string active;

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k2, v2] : value.items()) items.push_back(item({key}, k2, v2));
      } else if (!active.empty()) {
        items.push_back(item({active}, key, value));
      } else {
        items.push_back(item({}, key, value));
      }
    }
    return items;
  }

 private:
  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name, const json& v) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = name;
    const auto text = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
    if (v.is_array()) {
      std::string joined;
      for (const auto& x : v) joined += (joined.empty() ? "" : ",") + text(x);
      it.inputs = {joined};
    } else if (v.is_boolean()) {
      it.inputs = {v.get<bool>() ? "true" : "false"};
    } else {
      it.inputs = {text(v)};
    }
    return it;
  }
};

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw rpn::ValidationError(what + ": cannot parse '" + tok + "' as a number");
    }
  }
  return out;
}

Vec3 parse_vec3(const std::string& s, const std::string& what) {
  const auto v = parse_list(s, what);
  if (v.size() != 3) throw rpn::ValidationError(what + " must be x,y,z");
  return {v[0], v[1], v[2]};
}

std::array<int, 3> parse_grid(const std::string& s) {
  std::array<int, 3> dims{0, 0, 1};
  int parsed = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, 'x')) {
    if (parsed >= 3) throw rpn::ValidationError("--rx-grid must be NXxNY or NXxNYxNH");
    try {
      dims[parsed++] = std::stoi(tok);
    } catch (const std::exception&) {
      throw rpn::ValidationError("--rx-grid: cannot parse '" + tok + "'");
    }
  }
  if (parsed < 2 || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
    throw rpn::ValidationError("--rx-grid must be NXxNY or NXxNYxNH with positive sizes");
  }
  return dims;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RPN_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw rpn::ValidationError("RPN_SEED must be an unsigned integer");
    }
  }
  return 0;
}

std::string utc_now() {
  const auto t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Every option of the subcommand with its resolved value.
json resolved_options(const CLI::App* sub) {
  json opts = json::object();
  for (const auto* o : sub->get_options()) {
    const auto name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& r = o->results();
    if (r.empty()) {
      if (!o->get_default_str().empty()) opts[name] = o->get_default_str();
      continue;
    }
    opts[name] = r.size() == 1 ? json(r[0]) : json(r);
  }
  return opts;
}

struct Manifest {
  std::string command;
  json options;
  json inputs = json::object();
  json outputs = json::object();
  std::uint64_t seed = 0;
  json extra = json::object();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::string started = utc_now();

  void write(const std::filesystem::path& path) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j = {{"command", command},
              {"options", options},
              {"config_digest", rpn::fnv1a_hex(options.dump())},
              {"inputs", inputs},
              {"outputs", outputs},
              {"seed", seed},
              {"tool_version", kVersion},
              {"timings", {{"started_utc", started}, {"wall_seconds", secs}}}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    rpn::binio::write_file(path, j.dump(2) + "\n");
  }
};

std::filesystem::path manifest_for(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".manifest.json");
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

json metrics_json(const rpn::Metrics& m) {
  return {{"mse", m.mse}, {"psnr", std::isfinite(m.psnr) ? json(m.psnr) : json("inf")}};
}

struct ModelFlags {
  std::size_t n = 8, k = 8;
  std::string variant = "full";
  double density = 0.3;
  std::uint64_t point_seed = 0;
  double probe_spacing = 0.0;

  void add(CLI::App* app) {
    app->add_option("--n", n, "Probes per receiver")->capture_default_str();
    app->add_option("--k", k, "Points per probe")->capture_default_str();
    app->add_option("--variant", variant, "full or no_probes")->capture_default_str();
    app->add_option("--point-density", density, "Sampled points per square meter")->capture_default_str();
    app->add_option("--point-seed", point_seed, "Point sampling seed")->capture_default_str();
    app->add_option("--probe-spacing", probe_spacing, "Probe grid spacing in meters (0: automatic)")
        ->capture_default_str();
  }
  rpn::ModelConfig model() const {
    rpn::ModelConfig c;
    c.n = n;
    c.k = k;
    c.variant = rpn::parse_variant(variant);
    c.validate();
    return c;
  }
  rpn::ScenePrep prep() const { return {density, point_seed, probe_spacing}; }
};

struct TrainFlags {
  std::size_t epochs = 100;
  std::size_t batch_size = 1000;
  double lr = 1e-4;
  std::size_t patience = 20;
  std::size_t groups = 8;
  std::size_t interval = 0;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--patience", patience, "Early-stop patience in epochs (0: off)")->capture_default_str();
    app->add_option("--groups-per-batch", groups, "Transmitter/pattern groups per shuffle window (0: all)")
        ->capture_default_str();
    app->add_option("--checkpoint-interval", interval, "Write the best checkpoint every N epochs")
        ->capture_default_str();
    app->add_option("--seed", seed, "Seed (falls back to RPN_SEED, then 0)");
  }
  rpn::TrainConfig config() const {
    rpn::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.patience = patience;
    c.groups_per_batch = groups;
    c.checkpoint_interval = interval;
    c.seed = resolve_seed(seed);
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural point-field radio coverage toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  auto config = std::make_shared<JsonConfig>();
  app.config_formatter(config);
  app.set_config("--config", "", "JSON file supplying option values; flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::ignore);
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (!a.empty() && a[0] != '-') {
      config->active = a;
      break;
    }
    if (a == "--config") ++i;
  }

  // dataset --------------------------------------------------------------
  auto* ds = app.add_subcommand("dataset", "Trace a dataset with the ray-tracing oracle");
  std::string ds_scene, ds_out, ds_grid = "32x32x1", ds_heights = "1.5", ds_patterns = "0,1";
  std::size_t ds_tx = 48;
  double ds_zmin = 2.0, ds_zmax = 18.0, ds_freq = 2.14e9, ds_pmin = -160.0, ds_pmax = -50.0;
  int ds_order = 2;
  bool ds_diffraction = false;
  std::optional<std::uint64_t> ds_seed;
  ds->add_option("--scene", ds_scene, "Scene JSON")->required();
  ds->add_option("--out", ds_out, "Output dataset file")->required();
  ds->add_option("--tx-count", ds_tx)->capture_default_str();
  ds->add_option("--tx-z-min", ds_zmin)->capture_default_str();
  ds->add_option("--tx-z-max", ds_zmax)->capture_default_str();
  ds->add_option("--rx-grid", ds_grid, "NXxNY[xNH]")->capture_default_str();
  ds->add_option("--rx-heights", ds_heights, "Comma-separated receiver heights (m)")->capture_default_str();
  ds->add_option("--patterns", ds_patterns, "Comma-separated antenna pattern ids")->capture_default_str();
  ds->add_option("--freq", ds_freq, "Carrier frequency (Hz)")->capture_default_str();
  ds->add_option("--max-order", ds_order, "Maximum reflection order (0-2)")->capture_default_str();
  ds->add_flag("--diffraction", ds_diffraction, "Enable knife-edge diffraction");
  ds->add_option("--p-min", ds_pmin, "Normalization floor (dB)")->capture_default_str();
  ds->add_option("--p-max", ds_pmax, "Normalization ceiling (dB)")->capture_default_str();
  ds->add_option("--seed", ds_seed, "Transmitter placement seed");

  // train ----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  std::string tr_data, tr_out, tr_history;
  ModelFlags tr_model;
  TrainFlags tr_flags;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--history", tr_history, "Metric history (default: <out>.history.jsonl)");
  tr_model.add(tr);
  tr_flags.add(tr);

  // eval -----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Validation metrics of a checkpoint");
  std::string ev_model, ev_data, ev_out;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--out", ev_out, "Report JSON (default: <model>.eval.json)");

  // ablate ---------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "Train the full and probe-free models with one budget");
  std::string ab_data, ab_out = "ablation.json";
  ModelFlags ab_model;
  TrainFlags ab_flags;
  ab->add_option("--data", ab_data)->required();
  ab->add_option("--out", ab_out, "Report JSON")->capture_default_str();
  ab_model.add(ab);
  ab_flags.add(ab);

  // baseline -------------------------------------------------------------
  auto* bl = app.add_subcommand("baseline", "Train the plain MLP baseline");
  std::string bl_data, bl_out = "baseline.json";
  ModelFlags bl_model;
  TrainFlags bl_flags;
  bl->add_option("--data", bl_data)->required();
  bl->add_option("--out", bl_out, "Report JSON")->capture_default_str();
  bl_model.add(bl);
  bl_flags.add(bl);

  // predict --------------------------------------------------------------
  auto* pr = app.add_subcommand("predict", "Predict a coverage map");
  std::string pr_model, pr_tx, pr_out, pr_pgm;
  int pr_pattern = 0, pr_res = 64;
  double pr_height = 1.5;
  pr->add_option("--model", pr_model)->required();
  pr->add_option("--tx", pr_tx, "Transmitter x,y,z (m)")->required();
  pr->add_option("--pattern", pr_pattern)->capture_default_str();
  pr->add_option("--height", pr_height, "Receiver height (m)")->capture_default_str();
  pr->add_option("--res", pr_res, "Map resolution")->capture_default_str();
  pr->add_option("--out", pr_out, "Map file (default: map.rpnm)");
  pr->add_option("--pgm", pr_pgm, "Also write a PGM image");

  // gradcheck ------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the micro model");
  std::optional<std::uint64_t> gc_seed;
  std::string gc_variant = "full", gc_out = "gradcheck.json";
  gc->add_option("--seed", gc_seed);
  gc->add_option("--variant", gc_variant)->capture_default_str();
  gc->add_option("--out", gc_out, "Report JSON")->capture_default_str();

  // serve ----------------------------------------------------------------
  auto* sv = app.add_subcommand("serve", "HTTP prediction service");
  std::string sv_model, sv_addr = "127.0.0.1", sv_manifest = "serve.manifest.json";
  int sv_port = 8080;
  sv->add_option("--model", sv_model)->required();
  sv->add_option("--addr", sv_addr)->capture_default_str();
  sv->add_option("--port", sv_port)->capture_default_str();
  sv->add_option("--manifest", sv_manifest)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ds) {
      Manifest m{"dataset", resolved_options(ds)};
      const auto scene = rpn::load_scene(ds_scene);
      rpn::TraceConfig tc;
      tc.frequency_hz = ds_freq;
      tc.max_reflection_order = ds_order;
      tc.diffraction_enabled = ds_diffraction;
      tc.p_min_db = ds_pmin;
      tc.p_max_db = ds_pmax;
      tc.validate();
      const auto dims = parse_grid(ds_grid);
      auto heights = parse_list(ds_heights, "--rx-heights");
      if (static_cast<int>(heights.size()) != dims[2]) {
        throw rpn::ValidationError("--rx-heights must list " + std::to_string(dims[2]) + " height(s)");
      }
      std::vector<int> patterns;
      for (double p : parse_list(ds_patterns, "--patterns")) {
        if (p != static_cast<int>(p) || p < 0 || p > 3) throw rpn::ValidationError("--patterns ids must be in [0, 3]");
        patterns.push_back(static_cast<int>(p));
      }
      m.seed = resolve_seed(ds_seed);
      const auto txs = rpn::sample_transmitters(scene, ds_tx, ds_zmin, ds_zmax, m.seed);
      const auto grid = rpn::RxGrid::over_bounds(scene.bounds, dims[0], dims[1], heights);
      const auto data = rpn::generate_dataset(scene, txs, patterns, grid, tc);
      rpn::write_dataset(data, ds_out);
      m.inputs = {{"scene", ds_scene}};
      m.outputs = {{"dataset", ds_out}};
      m.extra = {{"records", data.records.size()}, {"scene_hash", data.header.scene_hash}};
      m.write(manifest_for(ds_out));
      print_json({{"records", data.records.size()}, {"out", ds_out}});
    } else if (*tr) {
      Manifest m{"train", resolved_options(tr)};
      const auto cfg = tr_flags.config();
      const auto model_cfg = tr_model.model();
      m.seed = cfg.seed;
      const auto data = rpn::read_dataset(tr_data);
      const auto prepared = rpn::prepare_data(data, tr_model.prep(), model_cfg.k);
      rpn::TrainHooks hooks;
      if (tr_history.empty()) tr_history = tr_out + ".history.jsonl";
      hooks.history_path = tr_history;
      hooks.checkpoint_path = tr_out;
      hooks.on_epoch = [](const rpn::EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " train_mse " << r.train_mse << " val_mse " << r.val_mse
                  << " val_psnr " << r.val_psnr << "\n";
      };
      const auto result = rpn::train(data, prepared, model_cfg, cfg, hooks);
      m.inputs = {{"data", tr_data}};
      m.outputs = {{"checkpoint", tr_out}, {"history", tr_history}};
      m.extra = {{"best_epoch", result.best_epoch}, {"val", metrics_json(result.best_val)}};
      m.write(manifest_for(tr_out));
      print_json({{"best_epoch", result.best_epoch}, {"val", metrics_json(result.best_val)}});
    } else if (*ev) {
      Manifest m{"eval", resolved_options(ev)};
      const auto ck = rpn::load_checkpoint(ev_model);
      const auto data = rpn::read_dataset(ev_data);
      if (data.header.scene_hash != ck.meta.scene_hash) {
        throw rpn::ValidationError("dataset scene does not match the checkpoint's scene");
      }
      const auto prepared = rpn::prepare_data(data, ck.meta.prep, ck.model->config().k);
      const auto metrics = rpn::evaluate(*ck.model, prepared);
      if (ev_out.empty()) ev_out = ev_model + ".eval.json";
      const json report = {{"val", metrics_json(metrics)}, {"model_hash", ck.hash}};
      rpn::binio::write_file(ev_out, report.dump(2) + "\n");
      m.inputs = {{"model", ev_model}, {"data", ev_data}};
      m.outputs = {{"report", ev_out}};
      m.write(manifest_for(ev_out));
      std::cout.precision(17);
      print_json(report);
    } else if (*ab) {
      Manifest m{"ablate", resolved_options(ab)};
      const auto cfg = ab_flags.config();
      m.seed = cfg.seed;
      const auto data = rpn::read_dataset(ab_data);
      const auto model_cfg = ab_model.model();
      const auto prepared = rpn::prepare_data(data, ab_model.prep(), model_cfg.k);
      const auto r = rpn::run_ablation(data, prepared, model_cfg, cfg);
      const json report = {{"full", metrics_json(r.full)},
                           {"no_probes", metrics_json(r.no_probes)},
                           {"full_parameters", r.full_parameters},
                           {"no_probes_parameters", r.no_probes_parameters}};
      rpn::binio::write_file(ab_out, report.dump(2) + "\n");
      m.inputs = {{"data", ab_data}};
      m.outputs = {{"report", ab_out}};
      m.write(manifest_for(ab_out));
      print_json(report);
    } else if (*bl) {
      Manifest m{"baseline", resolved_options(bl)};
      const auto cfg = bl_flags.config();
      m.seed = cfg.seed;
      const auto data = rpn::read_dataset(bl_data);
      const auto prepared = rpn::prepare_data(data, bl_model.prep(), bl_model.model().k);
      const auto r = rpn::run_baseline_mlp(prepared, cfg);
      const json report = {{"val", metrics_json(r.val)}, {"epochs_run", r.history.size()}};
      rpn::binio::write_file(bl_out, report.dump(2) + "\n");
      m.inputs = {{"data", bl_data}};
      m.outputs = {{"report", bl_out}};
      m.write(manifest_for(bl_out));
      print_json(report);
    } else if (*pr) {
      Manifest m{"predict", resolved_options(pr)};
      const auto ck = rpn::load_checkpoint(pr_model);
      const auto ctx = ck.scene_context();
      const auto tx = parse_vec3(pr_tx, "--tx");
      const auto map = rpn::predict_map(*ck.model, ctx, tx, pr_pattern, pr_height, pr_res, ck.meta.p_min_db,
                                        ck.meta.p_max_db);
      if (pr_out.empty()) pr_out = "map.rpnm";
      rpn::write_map(map, pr_out);
      m.inputs = {{"model", pr_model}};
      m.outputs = {{"map", pr_out}};
      if (!pr_pgm.empty()) {
        rpn::write_pgm(map, pr_pgm);
        m.outputs["pgm"] = pr_pgm;
      }
      m.extra = {{"model_hash", ck.hash}};
      m.write(manifest_for(pr_out));
      print_json({{"out", pr_out}, {"resolution", pr_res}});
    } else if (*gc) {
      Manifest m{"gradcheck", resolved_options(gc)};
      m.seed = resolve_seed(gc_seed);
      const auto r = rpn::gradcheck_micro(m.seed, rpn::parse_variant(gc_variant));
      json failures = json::array();
      for (const auto& f : r.failures) {
        failures.push_back({{"parameter", f.parameter},
                            {"index", f.index},
                            {"analytic", f.analytic},
                            {"numeric", f.numeric},
                            {"rel_error", f.rel_error}});
      }
      const json report = {{"checked", r.checked},
                           {"max_rel_error", r.max_rel_error},
                           {"worst", r.worst_parameter},
                           {"failures", failures},
                           {"passed", r.passed()}};
      rpn::binio::write_file(gc_out, report.dump(2) + "\n");
      m.outputs = {{"report", gc_out}};
      m.write(manifest_for(gc_out));
      print_json(report);
      if (!r.passed()) return 4;
    } else if (*sv) {
      Manifest m{"serve", resolved_options(sv)};
      rpn::PredictServer server(sv_model);
      m.inputs = {{"model", sv_model}};
      m.write(sv_manifest);
      std::cerr << "listening on " << sv_addr << ":" << sv_port << "\n";
      if (!server.listen(sv_addr, sv_port)) {
        throw rpn::IoError("cannot listen on " + sv_addr + ":" + std::to_string(sv_port));
      }
    }
  } catch (const rpn::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const rpn::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rpn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

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

#include "rpn/server.hpp"

#include "rpn/coverage_map.hpp"
#include "rpn/errors.hpp"

#include <httplib.h>

#include <chrono>

namespace rpn {

using nlohmann::json;

namespace {

HttpReply reply(int status, const json& body) { return {status, body.dump()}; }

HttpReply bad_request(const std::string& field, const std::string& message) {
  return reply(400, {{"error", message}, {"field", field}});
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json bounds_json(const Aabb& b) { return {{"min", vec_json(b.min)}, {"max", vec_json(b.max)}}; }

// Reads [x, y, z]; throws a field-tagged error.
struct FieldError {
  std::string field;
  std::string message;
};

Vec3 read_vec3(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3) throw FieldError{field, field + " must be [x, y, z]"};
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw FieldError{field, field + " must hold numbers"};
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  if (!v.allFinite()) throw FieldError{field, field + " must be finite"};
  return v;
}

}  // namespace

PredictService::PredictService(const std::filesystem::path& checkpoint) : snapshot_(load(checkpoint)) {}

std::shared_ptr<const PredictService::Snapshot> PredictService::load(const std::filesystem::path& path) {
  auto snap = std::make_shared<Snapshot>();
  snap->checkpoint = load_checkpoint(path);
  snap->ctx = std::make_unique<SceneContext>(snap->checkpoint.scene_context());
  return snap;
}

std::shared_ptr<const PredictService::Snapshot> PredictService::current() const {
  std::lock_guard lock(mu_);
  return swapping_ ? nullptr : snapshot_;
}

HttpReply PredictService::health() const {
  std::shared_ptr<const Snapshot> snap;
  bool swapping = false;
  {
    std::lock_guard lock(mu_);
    snap = snapshot_;
    swapping = swapping_;
  }
  return reply(200, {{"status", swapping ? "reloading" : "ok"},
                     {"model_hash", snap->checkpoint.hash},
                     {"scene_hash", snap->checkpoint.meta.scene_hash}});
}

HttpReply PredictService::scene() const {
  const auto snap = current();
  if (!snap) return reply(503, {{"error", "model swap in progress"}});
  const auto& sc = snap->ctx->scene();
  json footprints = json::array();
  json surfaces = json::array();
  for (const auto& prim : sc.primitives) {
    if (const auto* b = std::get_if<Box>(&prim)) {
      footprints.push_back({{"polygon",
                             {{b->min.x(), b->min.y()},
                              {b->max.x(), b->min.y()},
                              {b->max.x(), b->max.y()},
                              {b->min.x(), b->max.y()}}},
                            {"z_min", b->min.z()},
                            {"z_max", b->max.z()}});
    } else {
      const auto& t = std::get<Triangle>(prim);
      surfaces.push_back({{"vertices", {vec_json(t.v[0]), vec_json(t.v[1]), vec_json(t.v[2])}}});
    }
  }
  json probes = json::array();
  for (const auto& p : snap->ctx->probes()) probes.push_back(vec_json(snap->ctx->transform().to_world(p)));
  return reply(200, {{"bounds", bounds_json(sc.bounds)},
                     {"footprints", footprints},
                     {"surfaces", surfaces},
                     {"probes", probes}});
}

HttpReply PredictService::predict(const std::string& body) const {
  const auto t0 = std::chrono::steady_clock::now();
  const auto snap = current();
  if (!snap) return reply(503, {{"error", "model swap in progress"}});
  const auto& bounds = snap->ctx->scene().bounds;
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception&) {
    return bad_request("body", "request body is not valid JSON");
  }
  if (!req.is_object()) return bad_request("body", "request body must be a JSON object");

  Vec3 tx;
  int pattern = 0;
  int resolution = 0;
  double height = 0.0;
  std::vector<Vec3> points;
  try {
    if (!req.contains("tx")) throw FieldError{"tx", "tx is required"};
    tx = read_vec3(req["tx"], "tx");
    if (!bounds.contains(tx)) throw FieldError{"tx", "tx must lie inside the scene bounds"};
    if (!req.contains("pattern_id") || !req["pattern_id"].is_number_integer()) {
      throw FieldError{"pattern_id", "pattern_id must be an integer in [0, 3]"};
    }
    const auto pid = req["pattern_id"].get<long long>();
    if (pid < 0 || pid > 3) throw FieldError{"pattern_id", "pattern_id must be in [0, 3]"};
    pattern = static_cast<int>(pid);
    if (!req.contains("height") || !req["height"].is_number()) {
      throw FieldError{"height", "height must be a number"};
    }
    height = req["height"].get<double>();
    if (!std::isfinite(height) || height < bounds.min.z() || height > bounds.max.z()) {
      throw FieldError{"height", "height must lie inside the scene bounds"};
    }
    if (!req.contains("resolution") || !req["resolution"].is_number_integer()) {
      throw FieldError{"resolution", "resolution must be an integer in [8, 512]"};
    }
    const auto res = req["resolution"].get<long long>();
    if (res < 8 || res > 512) throw FieldError{"resolution", "resolution must be in [8, 512]"};
    resolution = static_cast<int>(res);
    if (req.contains("point_queries") && !req["point_queries"].is_null()) {
      const auto& pq = req["point_queries"];
      if (!pq.is_array()) throw FieldError{"point_queries", "point_queries must be a list of [x, y, z]"};
      for (const auto& p : pq) {
        points.push_back(read_vec3(p, "point_queries"));
        if (!bounds.contains(points.back())) {
          throw FieldError{"point_queries", "point_queries must lie inside the scene bounds"};
        }
      }
    }
  } catch (const FieldError& e) {
    return bad_request(e.field, e.message);
  }

  const auto& ck = snap->checkpoint;
  const auto map = predict_map(*ck.model, *snap->ctx, tx, pattern, height, resolution, ck.meta.p_min_db,
                               ck.meta.p_max_db);
  json results = json::array();
  if (!points.empty()) {
    const auto vals = predict_points(*ck.model, *snap->ctx, tx, pattern, points);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double pn = static_cast<float>(vals[i]);
      results.push_back({{"position", vec_json(points[i])},
                         {"p_norm", pn},
                         {"p_db", ck.meta.p_min_db + pn * (ck.meta.p_max_db - ck.meta.p_min_db)}});
    }
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return reply(200, {{"bounds", bounds_json(map.bounds)},
                     {"height", map.height},
                     {"resolution", map.resolution},
                     {"P_min_db", map.p_min_db},
                     {"P_max_db", map.p_max_db},
                     {"values_norm", map.values},
                     {"point_results", results},
                     {"model_hash", ck.hash},
                     {"elapsed_ms", ms}});
}

HttpReply PredictService::reload(const std::string& body) {
  std::string path;
  try {
    const auto req = json::parse(body);
    path = req.at("checkpoint").get<std::string>();
  } catch (const json::exception&) {
    return bad_request("checkpoint", "expected {\"checkpoint\": path}");
  }
  std::lock_guard serial(reload_mu_);
  {
    std::lock_guard lock(mu_);
    swapping_ = true;
  }
  std::shared_ptr<const Snapshot> next;
  HttpReply failure;
  try {
    next = load(path);
  } catch (const IoError& e) {
    failure = reply(404, {{"error", e.what()}, {"field", "checkpoint"}});
  } catch (const std::exception& e) {
    failure = reply(400, {{"error", e.what()}, {"field", "checkpoint"}});
  }
  std::lock_guard lock(mu_);
  swapping_ = false;
  if (!next) return failure;
  snapshot_ = std::move(next);
  return reply(200, {{"status", "ok"}, {"model_hash", snapshot_->checkpoint.hash}});
}

// ---------------------------------------------------------------------------

PredictServer::PredictServer(const std::filesystem::path& checkpoint)
    : service_(checkpoint), http_(std::make_unique<httplib::Server>()) {
  routes();
}

PredictServer::~PredictServer() { stop(); }

void PredictServer::routes() {
  const auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  http_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.health());
  });
  http_->Get("/scene", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.scene());
  });
  http_->Post("/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.predict(req.body));
  });
  http_->Post("/admin/reload", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.reload(req.body));
  });
  http_->set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const ValidationError& e) {
      send(res, reply(400, {{"error", e.what()}}));
    } catch (const std::exception& e) {
      send(res, reply(500, {{"error", e.what()}}));
    }
  });
}

bool PredictServer::listen(const std::string& addr, int port) { return http_->listen(addr, port); }

int PredictServer::bind_any(const std::string& addr) { return http_->bind_to_any_port(addr); }

bool PredictServer::serve_bound() { return http_->listen_after_bind(); }

void PredictServer::wait_until_ready() const { http_->wait_until_ready(); }

void PredictServer::stop() {
  if (http_ && http_->is_running()) http_->stop();
}

}  // namespace rpn

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

// HTTP front end over an immutable model snapshot.
//
//   GET  /health         {status, model_hash, scene_hash}
//   GET  /scene          bounds, box footprints, surfaces, probe positions
//   POST /predict        coverage map plus optional point queries
//   POST /admin/reload   {"checkpoint": path}; swaps the snapshot

#include "rpn/checkpoint.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

namespace httplib {
class Server;
}

namespace rpn {

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

class PredictService {
 public:
  explicit PredictService(const std::filesystem::path& checkpoint);

  HttpReply health() const;
  HttpReply scene() const;
  HttpReply predict(const std::string& body) const;
  // Loads a new checkpoint and swaps it in. Requests arriving while the
  // load runs get 503; in-flight requests finish on the old snapshot.
  HttpReply reload(const std::string& body);

 private:
  struct Snapshot {
    Checkpoint checkpoint;
    std::unique_ptr<SceneContext> ctx;
  };
  static std::shared_ptr<const Snapshot> load(const std::filesystem::path& path);
  std::shared_ptr<const Snapshot> current() const;

  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> snapshot_;
  bool swapping_ = false;
  std::mutex reload_mu_;
};

class PredictServer {
 public:
  explicit PredictServer(const std::filesystem::path& checkpoint);
  ~PredictServer();

  PredictService& service() { return service_; }
  // Binds and serves until stop(); returns false if binding fails.
  bool listen(const std::string& addr, int port);
  // Binds to an ephemeral port and returns it (or -1).
  int bind_any(const std::string& addr);
  bool serve_bound();
  void wait_until_ready() const;
  void stop();

 private:
  void routes();

  PredictService service_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace rpn

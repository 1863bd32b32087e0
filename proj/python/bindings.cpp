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
#include "rpn/coverage_map.hpp"
#include "rpn/errors.hpp"
#include "rpn/gradcheck.hpp"
#include "rpn/oracle.hpp"
#include "rpn/sh.hpp"
#include "rpn/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

namespace py = pybind11;
using namespace rpn;

namespace {

Vec3 vec3(const std::vector<double>& v, const char* what) {
  if (v.size() != 3) throw ValidationError(std::string(what) + " must have 3 components");
  return {v[0], v[1], v[2]};
}

py::array_t<float> as_grid(const CoverageMap& m) {
  py::array_t<float> out({m.resolution, m.resolution});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

// Loaded checkpoint plus its rebuilt scene.
struct PyCheckpoint {
  Checkpoint ck;
  std::unique_ptr<SceneContext> ctx;

  explicit PyCheckpoint(const std::filesystem::path& path)
      : ck(load_checkpoint(path)), ctx(std::make_unique<SceneContext>(ck.scene_context())) {}
};

}  // namespace

PYBIND11_MODULE(_rpn, m) {
  m.doc() = "Neural point-field radio coverage: inference, oracle and metrics";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", validation.ptr());
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "sh_eval",
      [](const std::vector<double>& direction, int degree) {
        std::vector<double> out(sh::basis_count(degree));
        sh::eval(vec3(direction, "direction"), degree, out);
        return out;
      },
      py::arg("direction"), py::arg("degree"), "Real orthonormal spherical harmonics up to `degree`.");

  m.def("friis_gain_db", &friis_gain_db, py::arg("distance_m"), py::arg("frequency_hz"));
  m.def("knife_edge_loss", &knife_edge_loss, py::arg("nu"));

  m.def(
      "compute_metrics",
      [](const std::vector<double>& pred, const std::vector<double>& target) {
        const auto r = compute_metrics(pred, target);
        return py::dict(py::arg("mse") = r.mse, py::arg("psnr") = r.psnr);
      },
      py::arg("predictions"), py::arg("targets"));

  m.def(
      "scene_hash", [](const std::filesystem::path& path) { return load_scene(path).hash(); }, py::arg("path"));

  m.def(
      "oracle_map",
      [](const std::filesystem::path& scene_path, const std::vector<double>& tx, int pattern_id, double height,
         int resolution, int max_reflection_order, bool diffraction) {
        TraceConfig cfg;
        cfg.max_reflection_order = max_reflection_order;
        cfg.diffraction_enabled = diffraction;
        cfg.validate();
        const auto scene = load_scene(scene_path);
        CoverageMap map;
        {
          py::gil_scoped_release release;
          map = oracle_map(scene, vec3(tx, "tx"), pattern_id, height, resolution, cfg);
        }
        return as_grid(map);
      },
      py::arg("scene"), py::arg("tx"), py::arg("pattern_id") = 0, py::arg("height") = 1.5,
      py::arg("resolution") = 64, py::arg("max_reflection_order") = 2, py::arg("diffraction") = false,
      "Normalized received power from the ray tracer, shape (resolution, resolution), row = y.");

  m.def(
      "gradcheck_micro",
      [](std::uint64_t seed, const std::string& variant) {
        const auto r = gradcheck_micro(seed, parse_variant(variant));
        return py::dict(py::arg("checked") = r.checked, py::arg("max_rel_error") = r.max_rel_error,
                        py::arg("worst_parameter") = r.worst_parameter, py::arg("passed") = r.passed());
      },
      py::arg("seed") = 0, py::arg("variant") = "full");

  m.def(
      "read_dataset",
      [](const std::filesystem::path& path) {
        const auto d = read_dataset(path);
        py::array_t<float> rec({d.records.size(), std::size_t{8}});
        std::memcpy(rec.mutable_data(), d.records.data(), d.records.size() * sizeof(Record));
        py::dict header;
        header["scene_hash"] = d.header.scene_hash;
        header["n_tx"] = d.header.n_tx;
        header["n_patterns"] = d.header.n_patterns;
        header["rx_dims"] = d.header.rx_dims;
        header["train_tx"] = d.header.train_tx;
        header["val_tx"] = d.header.val_tx;
        header["P_min_db"] = d.header.p_min_db;
        header["P_max_db"] = d.header.p_max_db;
        return py::make_tuple(header, rec);
      },
      py::arg("path"), "Header dict and an (N, 8) array: tx xyz, pattern, rx xyz, p_norm.");

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("hash", [](const PyCheckpoint& c) { return c.ck.hash; })
      .def_property_readonly("scene_hash", [](const PyCheckpoint& c) { return c.ck.meta.scene_hash; })
      .def_property_readonly("parameter_count", [](const PyCheckpoint& c) { return c.ck.model->parameter_count(); })
      .def_property_readonly("config", [](const PyCheckpoint& c) { return c.ck.model->config().to_json().dump(); })
      .def_property_readonly("bounds",
                             [](const PyCheckpoint& c) {
                               const auto& b = c.ctx->scene().bounds;
                               return py::make_tuple(std::vector<double>{b.min.x(), b.min.y(), b.min.z()},
                                                     std::vector<double>{b.max.x(), b.max.y(), b.max.z()});
                             })
      .def(
          "predict_map",
          [](const PyCheckpoint& c, const std::vector<double>& tx, int pattern_id, double height, int resolution) {
            CoverageMap map;
            {
              py::gil_scoped_release release;
              map = predict_map(*c.ck.model, *c.ctx, vec3(tx, "tx"), pattern_id, height, resolution,
                                c.ck.meta.p_min_db, c.ck.meta.p_max_db);
            }
            return as_grid(map);
          },
          py::arg("tx"), py::arg("pattern_id") = 0, py::arg("height") = 1.5, py::arg("resolution") = 64)
      .def(
          "predict_points",
          [](const PyCheckpoint& c, const std::vector<double>& tx, int pattern_id,
             const std::vector<std::vector<double>>& points) {
            std::vector<Vec3> pts;
            pts.reserve(points.size());
            for (const auto& p : points) pts.push_back(vec3(p, "point"));
            validate_map_request(c.ctx->scene().bounds, vec3(tx, "tx"), pattern_id, c.ctx->scene().bounds.min.z(), 8);
            py::gil_scoped_release release;
            return predict_points(*c.ck.model, *c.ctx, vec3(tx, "tx"), pattern_id, pts);
          },
          py::arg("tx"), py::arg("pattern_id"), py::arg("points"));
}

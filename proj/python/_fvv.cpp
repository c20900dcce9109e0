#include "fvv/bench.hpp"
#include "fvv/depth_codec.hpp"
#include "fvv/edge_server.hpp"
#include "fvv/image.hpp"
#include "fvv/scene_sim.hpp"
#include "fvv/selection.hpp"
#include "fvv/synthesis.hpp"
#include "fvv/transport.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace fvv;

namespace {

using CodeArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

py::bytes as_bytes(std::span<const std::uint8_t> b) {
  return py::bytes(reinterpret_cast<const char *>(b.data()), b.size());
}

std::span<const std::uint8_t> view_bytes(const py::bytes &b) {
  const std::string_view sv = b;
  return {reinterpret_cast<const std::uint8_t *>(sv.data()), sv.size()};
}

DepthMap depth_from_array(const CodeArray &a) {
  if (a.ndim() != 2) {
    throw py::value_error("depth codes must be a 2-D array");
  }
  DepthMap d(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy_n(a.data(), d.codes.size(), d.codes.begin());
  return d;
}

py::array_t<std::uint16_t> depth_to_array(const DepthMap &d) {
  py::array_t<std::uint16_t> out({d.height, d.width});
  std::copy(d.codes.begin(), d.codes.end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> plane(std::span<const std::uint8_t> p, int w, int h) {
  py::array_t<std::uint8_t> out({h, w});
  std::copy(p.begin(), p.end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> rgb_array(const I420Frame &f) {
  const auto rgb = i420_to_rgb(f);
  py::array_t<std::uint8_t> out({f.height, f.width, 3});
  std::copy(rgb.begin(), rgb.end(), out.mutable_data());
  return out;
}

} // namespace

PYBIND11_MODULE(_fvv, m) {
  m.doc() = "FVV Live core bindings";

  py::register_exception<DepthCodecError>(m, "DepthCodecError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_ValueError);
  py::register_exception<ServerError>(m, "ServerError", PyExc_RuntimeError);

  m.attr("MEDIA_HEADER_SIZE") = kMediaHeaderSize;
  m.attr("DEPTH_FILE_HEADER_SIZE") = kDepthFileHeaderSize;
  m.attr("VIRTUAL_CAMERA_ID") = kVirtualCameraId;
  m.attr("FLAG_DEFLATE") = kFlagDeflate;

  // Geometry
  py::class_<DepthQuantizer>(m, "DepthQuantizer")
      .def(py::init<>())
      .def(py::init<double, double>(), py::arg("z_near"), py::arg("z_far"))
      .def_property_readonly("z_near", &DepthQuantizer::z_near)
      .def_property_readonly("z_far", &DepthQuantizer::z_far)
      .def("quantize", &DepthQuantizer::quantize)
      .def("dequantize", &DepthQuantizer::dequantize)
      .def("step_at", &DepthQuantizer::step_at);

  py::class_<CameraModel>(m, "CameraModel")
      .def(py::init<>())
      .def_readwrite("id", &CameraModel::id)
      .def_property(
          "intrinsics",
          [](const CameraModel &c) {
            const auto &k = c.intrinsics;
            return py::make_tuple(k.fx, k.fy, k.cx, k.cy, k.width, k.height);
          },
          [](CameraModel &c, const std::tuple<double, double, double, double, int, int> &k) {
            c.intrinsics = {std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), std::get<4>(k),
                            std::get<5>(k)};
          })
      .def_property(
          "rotation", [](const CameraModel &c) { return c.pose.rotation; },
          [](CameraModel &c, const Mat3 &r) { c.pose.rotation = r; })
      .def_property(
          "translation", [](const CameraModel &c) { return c.pose.translation; },
          [](CameraModel &c, const Vec3 &t) { c.pose.translation = t; })
      .def_property_readonly("center", [](const CameraModel &c) { return c.pose.center(); })
      .def_property_readonly("optical_axis", [](const CameraModel &c) { return c.pose.optical_axis(); })
      .def_static(
          "look_at",
          [](const Vec3 &center, const Vec3 &target, const CameraModel &like) {
            CameraModel c = like;
            c.pose = CameraPose::look_at(center, target);
            return c;
          },
          py::arg("center"), py::arg("target"), py::arg("intrinsics_from"))
      .def("__repr__", [](const CameraModel &c) { return "<CameraModel " + std::to_string(c.id) + ">"; });

  m.def(
      "project",
      [](const Vec3 &p, const CameraModel &c) {
        const auto r = project(p, c);
        return py::make_tuple(r.u, r.v, r.z);
      },
      "World point to (u, v, z).");
  m.def("unproject", &unproject, py::arg("u"), py::arg("v"), py::arg("z"), py::arg("camera"));

  m.def(
      "default_calibration",
      [](int w, int h) { return default_calibration(w, h).cameras; }, py::arg("width") = 640,
      py::arg("height") = 360);
  m.def("load_calibration", [](const std::filesystem::path &p) {
    return load_calibration(p).cameras;
  });

  // Depth transport
  m.def(
      "pack_depth", [](const CodeArray &codes) { return as_bytes(pack_depth(depth_from_array(codes)).to_i420()); },
      "HxW uint16 codes to I420 bytes.");
  m.def(
      "unpack_depth",
      [](const py::bytes &i420, int w, int h) {
        return depth_to_array(unpack_depth(PackedDepthFrame::from_i420(view_bytes(i420), w, h)));
      },
      py::arg("i420"), py::arg("width"), py::arg("height"));
  m.def(
      "write_depth_file",
      [](const std::filesystem::path &p, const CodeArray &codes, std::uint32_t frame_index) {
        write_file(p, serialize_packed_depth(pack_depth(depth_from_array(codes)), frame_index));
      },
      py::arg("path"), py::arg("codes"), py::arg("frame_index") = 0);
  m.def("read_depth_file", [](const std::filesystem::path &p) {
    std::uint32_t index = 0;
    const auto d = unpack_depth(parse_packed_depth(read_file(p), &index));
    return py::make_tuple(depth_to_array(d), index);
  });

  // Wire formats
  py::enum_<MediaType>(m, "MediaType")
      .value("color", MediaType::color)
      .value("packed_depth", MediaType::packed_depth)
      .value("mask", MediaType::mask)
      .value("png", MediaType::png);

  py::class_<MediaMessage>(m, "MediaMessage")
      .def(py::init<>())
      .def_readwrite("type", &MediaMessage::type)
      .def_readwrite("camera_id", &MediaMessage::camera_id)
      .def_readwrite("capture_ts", &MediaMessage::capture_ts)
      .def_readwrite("width", &MediaMessage::width)
      .def_readwrite("height", &MediaMessage::height)
      .def_readwrite("flags", &MediaMessage::flags)
      .def_property(
          "payload", [](const MediaMessage &msg) { return as_bytes(msg.payload); },
          [](MediaMessage &msg, const py::bytes &b) {
            const auto s = view_bytes(b);
            msg.payload.assign(s.begin(), s.end());
          })
      .def("encode", [](const MediaMessage &msg) { return as_bytes(encode_media(msg)); })
      .def_static("decode", [](const py::bytes &b) { return decode_media(view_bytes(b)); })
      .def(py::self == py::self);

  m.def(
      "encode_control",
      [](const std::string &json_text) { return as_bytes(encode_control(control_from_json(json_text))); },
      "Validate a control message and frame it (u32 LE length + JSON).");
  m.def(
      "decode_control",
      [](const py::bytes &framed) {
        ControlStreamParser parser;
        parser.feed(view_bytes(framed));
        auto msg = parser.next();
        if (!msg) {
          throw py::value_error("incomplete control message");
        }
        return control_to_json(*msg);
      },
      "Framed control bytes to canonical JSON text.");

  // Selection
  py::class_<ViewState>(m, "ViewState")
      .def_readonly("active", &ViewState::active)
      .def_readonly("active_distances", &ViewState::active_distances)
      .def_readonly("subscribed", &ViewState::subscribed);

  m.def(
      "select_cameras",
      [](const CameraModel &virt, const std::vector<CameraModel> &rig, const std::optional<ViewState> &prev,
         double lambda, double hysteresis) {
        return select_cameras(virt, rig, prev, SelectionParams{lambda, hysteresis});
      },
      py::arg("virtual_camera"), py::arg("rig"), py::arg("previous") = std::nullopt, py::arg("lambda_") = 1.0,
      py::arg("hysteresis") = 0.1);
  m.def("camera_distance", &camera_distance, py::arg("virtual_camera"), py::arg("camera"), py::arg("lambda_") = 1.0);
  m.def(
      "arc_viewpoint",
      [](const std::vector<CameraModel> &rig, double s) { return arc_viewpoint(rig, s, kStageTarget); },
      py::arg("rig"), py::arg("s"));

  // Simulation and synthesis
  m.def("scene_names", &scene_names);
  m.def(
      "render",
      [](const std::string &scene, const CameraModel &cam, Timestamp t) {
        const auto r = render(make_scene(scene), cam, DepthQuantizer{}, t);
        const int w = r.color.width, h = r.color.height;
        py::dict out;
        out["y"] = plane(r.color.y(), w, h);
        out["u"] = plane(r.color.u(), w / 2, h / 2);
        out["v"] = plane(r.color.v(), w / 2, h / 2);
        out["rgb"] = rgb_array(r.color);
        out["depth"] = depth_to_array(r.depth);
        return out;
      },
      py::arg("scene"), py::arg("camera"), py::arg("t_us") = 0);

  m.def(
      "synthesize_view",
      [](const std::string &scene, int width, int height, const CameraModel &virt, const std::vector<CameraId> &exclude,
         Timestamp t) {
        const auto calib = default_calibration(width, height);
        const auto sc = make_scene(scene);
        const auto bg = build_background_model(calib, make_scene("empty"));
        std::vector<CameraModel> rig;
        for (const auto &c : calib.cameras) {
          if (std::find(exclude.begin(), exclude.end(), c.id) == exclude.end()) {
            rig.push_back(c);
          }
        }
        const auto view = select_cameras(virt, rig, std::nullopt);
        FrameSet set;
        set.tick_ts = t;
        for (auto id : view.active) {
          set.frames[id] = {
              std::make_shared<const TimedFrame>(make_timed_frame(id, t, render(sc, calib.at(id), calib.quantizer, t))),
              0};
        }
        const auto out = synthesize(set, view, bg);
        std::size_t covered = 0;
        for (auto b : out.covered.bits) {
          covered += b != 0 ? 1 : 0;
        }
        py::dict d;
        d["rgb"] = rgb_array(out.final);
        d["y"] = plane(out.final.y(), width, height);
        d["active"] = view.active;
        d["coverage"] = static_cast<double>(covered) / static_cast<double>(out.covered.bits.size());
        return d;
      },
      py::arg("scene"), py::arg("width"), py::arg("height"), py::arg("virtual_camera"),
      py::arg("exclude") = std::vector<CameraId>{}, py::arg("t_us") = 0);

  m.def(
      "bench",
      [](int width, int height, int ticks) {
        BenchOptions o;
        o.width = width;
        o.height = height;
        o.ticks = ticks;
        const auto r = run_bench(o);
        const auto mean = r.stats.mean();
        py::dict d;
        d["fps"] = r.fps();
        d["frames"] = r.stats.frames_synthesized;
        d["assembly_ms"] = mean.assembly_us / 1000;
        d["warp_ms"] = mean.warp_us / 1000;
        d["blend_ms"] = mean.blend_us / 1000;
        d["composite_ms"] = mean.composite_us / 1000;
        d["encode_ms"] = mean.encode_us / 1000;
        d["table"] = format_bench_table(r);
        return d;
      },
      py::arg("width") = 640, py::arg("height") = 360, py::arg("ticks") = 30);

  // Edge server on loopback, for driving the wire protocol from Python.
  py::class_<Server>(m, "Server")
      .def(py::init([](int width, int height, int media_port, int control_port, int ws_port, bool enable_ws) {
             ServerConfig c;
             c.media_port = static_cast<std::uint16_t>(media_port);
             c.control_port = static_cast<std::uint16_t>(control_port);
             c.ws_port = static_cast<std::uint16_t>(ws_port);
             c.enable_ws = enable_ws;
             return std::make_unique<Server>(simulated_background(width, height), c);
           }),
           py::arg("width") = 160, py::arg("height") = 90, py::arg("media_port") = 0, py::arg("control_port") = 0,
           py::arg("ws_port") = 0, py::arg("enable_ws") = false)
      .def("start", &Server::start, py::call_guard<py::gil_scoped_release>())
      .def("stop", &Server::stop, py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("running", &Server::running)
      .def_property_readonly("media_port", &Server::media_port)
      .def_property_readonly("control_port", &Server::control_port)
      .def("__enter__",
           [](Server &s) -> Server & {
             py::gil_scoped_release release;
             s.start();
             return s;
           })
      .def("__exit__", [](Server &s, py::args) {
        py::gil_scoped_release release;
        s.stop();
      });
}

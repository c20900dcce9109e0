#include "fvv/calibration.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace fvv {

using nlohmann::json;

const CameraModel *Calibration::find(CameraId id) const {
  for (const auto &c : cameras) {
    if (c.id == id) {
      return &c;
    }
  }
  return nullptr;
}

const CameraModel &Calibration::at(CameraId id) const {
  const auto *c = find(id);
  if (c == nullptr) {
    throw CalibrationError("camera " + std::to_string(id) + " not in calibration");
  }
  return *c;
}

namespace {

double number_field(const json &obj, const char *key, const std::string &where) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw CalibrationError(where + ": missing field '" + key + "'");
  }
  if (!it->is_number()) {
    throw CalibrationError(where + ": field '" + key + "' must be a number");
  }
  return it->get<double>();
}

int int_field(const json &obj, const char *key, const std::string &where) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw CalibrationError(where + ": missing field '" + key + "'");
  }
  if (!it->is_number_integer()) {
    throw CalibrationError(where + ": field '" + key + "' must be an integer");
  }
  return it->get<int>();
}

const json &object_field(const json &obj, const char *key, const std::string &where) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_object()) {
    throw CalibrationError(where + ": missing object '" + key + "'");
  }
  return *it;
}

std::vector<double> array_field(const json &obj, const char *key, std::size_t n, const std::string &where) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_array() || it->size() != n) {
    throw CalibrationError(where + ": field '" + key + "' must be an array of " + std::to_string(n) +
                           " numbers");
  }
  std::vector<double> out;
  for (const auto &v : *it) {
    if (!v.is_number()) {
      throw CalibrationError(where + ": field '" + key + "' must contain only numbers");
    }
    out.push_back(v.get<double>());
  }
  return out;
}

CameraModel parse_camera(const json &j, std::size_t index) {
  if (!j.is_object()) {
    throw CalibrationError("camera entry " + std::to_string(index) + " is not an object");
  }
  const auto id_it = j.find("id");
  if (id_it == j.end() || !id_it->is_number_integer() || id_it->get<int>() < 0 ||
      id_it->get<int>() > 0xFFFE) {
    throw CalibrationError("camera entry " + std::to_string(index) + ": missing or invalid 'id'");
  }
  CameraModel cam;
  cam.id = static_cast<CameraId>(id_it->get<int>());
  const std::string where = "camera " + std::to_string(cam.id);

  const auto &k = object_field(j, "intrinsics", where);
  cam.intrinsics.fx = number_field(k, "fx", where);
  cam.intrinsics.fy = number_field(k, "fy", where);
  cam.intrinsics.cx = number_field(k, "cx", where);
  cam.intrinsics.cy = number_field(k, "cy", where);
  cam.intrinsics.width = int_field(k, "width", where);
  cam.intrinsics.height = int_field(k, "height", where);

  const auto &p = object_field(j, "pose", where);
  const auto r = array_field(p, "rotation", 9, where);
  const auto t = array_field(p, "translation", 3, where);
  for (int i = 0; i < 9; ++i) {
    cam.pose.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
  }
  cam.pose.translation = Vec3(t[0], t[1], t[2]);

  try {
    cam.intrinsics.validate();
    cam.pose.validate();
  } catch (const GeometryError &e) {
    throw CalibrationError(where + ": " + e.what());
  }
  return cam;
}

} // namespace

Calibration parse_calibration(const std::string &json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw CalibrationError(std::string("calibration is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw CalibrationError("calibration root must be an object");
  }
  Calibration calib;
  const auto &depth = object_field(doc, "depth", "calibration");
  try {
    calib.quantizer = DepthQuantizer(number_field(depth, "z_near", "depth"), number_field(depth, "z_far", "depth"));
  } catch (const GeometryError &e) {
    throw CalibrationError(std::string("depth: ") + e.what());
  }

  const auto it = doc.find("cameras");
  if (it == doc.end() || !it->is_array() || it->empty()) {
    throw CalibrationError("calibration: 'cameras' must be a non-empty array");
  }
  std::set<CameraId> seen;
  for (std::size_t i = 0; i < it->size(); ++i) {
    auto cam = parse_camera((*it)[i], i);
    if (!seen.insert(cam.id).second) {
      throw CalibrationError("camera " + std::to_string(cam.id) + ": duplicate id");
    }
    calib.cameras.push_back(std::move(cam));
  }
  return calib;
}

std::string calibration_to_json(const Calibration &calib) {
  json doc;
  doc["depth"] = {{"z_near", calib.quantizer.z_near()}, {"z_far", calib.quantizer.z_far()}};
  doc["cameras"] = json::array();
  for (const auto &c : calib.cameras) {
    json rot = json::array();
    for (int i = 0; i < 9; ++i) {
      rot.push_back(c.pose.rotation(i / 3, i % 3));
    }
    const auto &t = c.pose.translation;
    doc["cameras"].push_back({
        {"id", c.id},
        {"intrinsics",
         {{"fx", c.intrinsics.fx},
          {"fy", c.intrinsics.fy},
          {"cx", c.intrinsics.cx},
          {"cy", c.intrinsics.cy},
          {"width", c.intrinsics.width},
          {"height", c.intrinsics.height}}},
        {"pose", {{"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}}},
    });
  }
  return doc.dump(2);
}

Calibration load_calibration(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw CalibrationError("cannot open calibration file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_calibration(ss.str());
}

void save_calibration(const Calibration &calib, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw CalibrationError("cannot write calibration file " + path.string());
  }
  out << calibration_to_json(calib) << "\n";
}

} // namespace fvv

#include "b2w/scene_io.hpp"

#include <algorithm>

#include "b2w/error.hpp"

namespace b2w {
namespace {

using nlohmann::json;

constexpr const char* kModule = "scene_io";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

double get_number(const json& j, std::string_view key, std::string_view where) {
  const json& v = j.at(std::string(key));
  if (!v.is_number()) fail(Errc::parse_error, std::string(where) + "." + std::string(key) + " must be a number");
  return v.get<double>();
}

int get_int(const json& j, std::string_view key, std::string_view where) {
  const json& v = j.at(std::string(key));
  if (!v.is_number_integer()) fail(Errc::parse_error, std::string(where) + "." + std::string(key) + " must be an integer");
  return v.get<int>();
}

Vec3 get_vec3(const json& v, std::string_view where) {
  if (!v.is_array() || v.size() != 3) fail(Errc::parse_error, std::string(where) + " must be an array of 3 numbers");
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) fail(Errc::parse_error, std::string(where) + " must contain numbers");
    out(i) = v[static_cast<std::size_t>(i)].get<double>();
  }
  return out;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

namespace json_util {

void expect_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> required,
                 std::initializer_list<std::string_view> optional, const char* module) {
  if (!obj.is_object()) throw Error(module, Errc::parse_error, std::string(where) + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw Error(module, Errc::unknown_field, "unknown field '" + key + "' in " + std::string(where));
  }
  for (std::string_view key : required) {
    if (!obj.contains(std::string(key))) {
      throw Error(module, Errc::missing_field, "missing field '" + std::string(key) + "' in " + std::string(where));
    }
  }
}

json parse(std::string_view text, const char* module) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    // Includes out_of_range for numbers that overflow on parse.
    throw Error(module, Errc::parse_error, e.what());
  }
}

}  // namespace json_util

std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

json pose_to_json(const Pose& pose) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(json::array({pose.rotation(r, 0), pose.rotation(r, 1), pose.rotation(r, 2)}));
  return json{{"rotation", rot}, {"translation", vec3_json(pose.translation)}};
}

Pose pose_from_json(const json& j) {
  json_util::expect_keys(j, "pose", {"rotation", "translation"}, {}, kModule);
  const json& rot = j.at("rotation");
  if (!rot.is_array() || rot.size() != 3) fail(Errc::parse_error, "pose.rotation must be a 3x3 row-major array");
  Pose pose;
  for (int r = 0; r < 3; ++r) pose.rotation.row(r) = get_vec3(rot[static_cast<std::size_t>(r)], "pose.rotation").transpose();
  pose.translation = get_vec3(j.at("translation"), "pose.translation");
  validate_pose(pose);
  return pose;
}

json camera_to_json(const Camera& c) {
  return json{{"fx", c.fx()}, {"fy", c.fy()}, {"cx", c.cx()}, {"cy", c.cy()}, {"width", c.width()},
              {"height", c.height()}, {"pose", pose_to_json(c.pose())}};
}

Camera camera_from_json(const json& j) {
  json_util::expect_keys(j, "camera", {"fx", "fy", "cx", "cy", "width", "height", "pose"}, {}, kModule);
  return Camera::create(get_number(j, "fx", "camera"), get_number(j, "fy", "camera"), get_number(j, "cx", "camera"),
                        get_number(j, "cy", "camera"), get_int(j, "width", "camera"), get_int(j, "height", "camera"),
                        pose_from_json(j.at("pose")));
}

Camera parse_camera_config(std::string_view text, int default_width, int default_height) {
  const json j = json_util::parse(text, kModule);
  json_util::expect_keys(j, "camera config", {}, {"fx", "fy", "cx", "cy", "width", "height", "pose"}, kModule);
  const int w = j.contains("width") ? get_int(j, "width", "camera config") : default_width;
  const int h = j.contains("height") ? get_int(j, "height", "camera config") : default_height;
  const Pose pose = j.contains("pose") ? pose_from_json(j.at("pose")) : Pose{};
  const Camera defaults = Camera::with_default_intrinsics(w, h, pose);
  return Camera::create(j.contains("fx") ? get_number(j, "fx", "camera config") : defaults.fx(),
                        j.contains("fy") ? get_number(j, "fy", "camera config") : defaults.fy(),
                        j.contains("cx") ? get_number(j, "cx", "camera config") : defaults.cx(),
                        j.contains("cy") ? get_number(j, "cy", "camera config") : defaults.cy(), w, h, pose);
}

json primitive_to_json(const ConvexPrimitive& p) {
  json hs = json::array();
  for (const Halfspace& h : p.halfspaces()) hs.push_back(json{{"normal", vec3_json(h.normal)}, {"offset", h.offset}});
  json j{{"id", p.id()}, {"halfspaces", hs}};
  if (p.label()) j["label"] = *p.label();
  return j;
}

ConvexPrimitive primitive_from_json(const json& j) {
  json_util::expect_keys(j, "primitive", {"id", "halfspaces"}, {"label"}, kModule);
  if (!j.at("id").is_string()) fail(Errc::parse_error, "primitive.id must be a string");
  const std::string id = j.at("id").get<std::string>();
  const json& arr = j.at("halfspaces");
  if (!arr.is_array()) fail(Errc::parse_error, "primitive '" + id + "' halfspaces must be an array");
  std::vector<Halfspace> hs;
  hs.reserve(arr.size());
  for (const json& h : arr) {
    json_util::expect_keys(h, "halfspace of '" + id + "'", {"normal", "offset"}, {}, kModule);
    hs.push_back(Halfspace::make(get_vec3(h.at("normal"), "halfspace.normal"), get_number(h, "offset", "halfspace")));
  }
  std::optional<std::string> label;
  if (j.contains("label")) {
    if (!j.at("label").is_string()) fail(Errc::parse_error, "primitive '" + id + "' label must be a string");
    label = j.at("label").get<std::string>();
  }
  return ConvexPrimitive::create(id, std::move(hs), std::move(label));
}

json scene_to_json(const Scene& scene) {
  json prims = json::array();
  for (const ConvexPrimitive& p : scene.primitives()) prims.push_back(primitive_to_json(p));
  return json{{"version", kFormatVersion},
              {"camera", camera_to_json(scene.camera())},
              {"primitives", prims},
              {"prompt", scene.prompt()},
              {"seed", scene.seed()}};
}

Scene scene_from_json(const json& doc, std::size_t budget) {
  if (!doc.is_object()) fail(Errc::parse_error, "scene document must be a JSON object");
  if (!doc.contains("version")) fail(Errc::missing_field, "scene document has no 'version' tag");
  if (!doc.at("version").is_string() || doc.at("version").get<std::string>() != kFormatVersion) {
    fail(Errc::version_mismatch, "unsupported scene version " + doc.at("version").dump() + "; expected \"" +
                                     std::string(kFormatVersion) + "\"");
  }
  json_util::expect_keys(doc, "scene", {"version", "camera", "primitives", "prompt", "seed"}, {}, kModule);
  if (!doc.at("prompt").is_string()) fail(Errc::parse_error, "scene.prompt must be a string");
  if (!doc.at("seed").is_number_unsigned() && !(doc.at("seed").is_number_integer() && doc.at("seed").get<long long>() >= 0)) {
    fail(Errc::parse_error, "scene.seed must be an unsigned integer");
  }
  const json& arr = doc.at("primitives");
  if (!arr.is_array()) fail(Errc::parse_error, "scene.primitives must be an array");
  std::vector<ConvexPrimitive> prims;
  prims.reserve(arr.size());
  for (const json& p : arr) prims.push_back(primitive_from_json(p));
  return Scene::create(std::move(prims), camera_from_json(doc.at("camera")), doc.at("prompt").get<std::string>(),
                       doc.at("seed").get<std::uint64_t>(), budget);
}

std::string serialize_scene(const Scene& scene) { return canonical_dump(scene_to_json(scene)); }

Scene parse_scene(std::string_view text, std::size_t budget) {
  return scene_from_json(json_util::parse(text, kModule), budget);
}

}  // namespace b2w

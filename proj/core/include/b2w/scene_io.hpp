#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "b2w/scene.hpp"

namespace b2w {

inline constexpr std::string_view kFormatVersion = "b2w/1";

// Canonical scene document: sorted keys, shortest round-trip decimals,
// two-space indentation and a trailing newline. Serializing a parsed
// canonical document reproduces it byte for byte.
std::string serialize_scene(const Scene& scene);
Scene parse_scene(std::string_view text, std::size_t budget = kDefaultBudget);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& doc, std::size_t budget = kDefaultBudget);

nlohmann::json primitive_to_json(const ConvexPrimitive& p);
ConvexPrimitive primitive_from_json(const nlohmann::json& j);

nlohmann::json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);

nlohmann::json camera_to_json(const Camera& camera);
Camera camera_from_json(const nlohmann::json& j);

// Camera config file: {"width", "height"} plus optional "fx", "fy", "cx",
// "cy" and "pose". Missing intrinsics fall back to the default calibration;
// missing width/height fall back to the given raster size.
Camera parse_camera_config(std::string_view text, int default_width, int default_height);

std::string canonical_dump(const nlohmann::json& j);

namespace json_util {

// Throws unknown_field / missing_field errors tagged with `module`.
void expect_keys(const nlohmann::json& obj, std::string_view where, std::initializer_list<std::string_view> required,
                 std::initializer_list<std::string_view> optional, const char* module);
nlohmann::json parse(std::string_view text, const char* module);

}  // namespace json_util

}  // namespace b2w

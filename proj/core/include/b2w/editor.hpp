#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "b2w/raster.hpp"
#include "b2w/raytracer.hpp"
#include "b2w/scene.hpp"

namespace b2w {

struct TranslatePrimitive {
  std::string id;
  Vec3 delta = Vec3::Zero();
};
struct AddPrimitive {
  ConvexPrimitive primitive;
};
struct DeletePrimitive {
  std::string id;
};
struct SetCameraPose {
  Pose pose;
};
struct SetPrompt {
  std::string prompt;
};
struct SetSeed {
  std::uint64_t seed = 0;
};

using EditOp = std::variant<TranslatePrimitive, AddPrimitive, DeletePrimitive, SetCameraPose, SetPrompt, SetSeed>;

// Returns a new scene; the input is untouched. Translation shifts every face
// offset by normal.delta.
Scene apply_edit(const Scene& scene, const EditOp& op);
Scene apply_edits(const Scene& scene, const std::vector<EditOp>& ops);

// JSON form used by the HTTP API, e.g. {"op": "translate", "id": "p1", "delta": [1, 0, 0]}.
nlohmann::json edit_to_json(const EditOp& op);
EditOp edit_from_json(const nlohmann::json& j);

// Rotates the camera about `pivot` (yaw about the camera's y axis, then pitch
// about its x axis) and moves it `dolly` metres along the new view direction.
Scene orbit_camera(const Scene& scene, const Vec3& pivot, double yaw, double pitch, double dolly);

// Edit script: one command per line, '#' starts a comment.
//   translate <id> <dx> <dy> <dz>
//   add <primitive JSON on one line>
//   delete <id>
//   pose <r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz>
//   prompt <text to end of line>
//   seed <unsigned integer>
//   orbit <px> <py> <pz> <yaw> <pitch> <dolly>
std::string format_edit_line(const EditOp& op);
Scene replay_script(const Scene& scene, std::string_view script);

struct TextureBadge {
  Image image;  // source pixels, unmodified
  Mask mask;    // 1 = removed, to be inpainted

  // The badge as sent to a renderer: masked pixels set to black.
  Image blacked_out() const;
};

TextureBadge make_badge(Image image, Mask mask);

inline constexpr int kDefaultBadgeMargin = 4;

// Mask = union of the moved primitives' silhouettes before and after, dilated
// by `margin` pixels. An id may be missing from one side (add or delete) but
// not from both.
TextureBadge move_badge(const Scene& before, const Scene& after, const std::vector<std::string>& moved_ids,
                        const Image& image, int margin = kDefaultBadgeMargin, const RenderOptions& options = {});

// Selects each primitive independently with probability `fraction`.
TextureBadge random_badge(const Scene& scene, const Image& image, double fraction, std::uint64_t seed,
                          const RenderOptions& options = {});

}  // namespace b2w

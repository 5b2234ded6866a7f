#include "b2w/editor.hpp"

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "b2w/decomposer.hpp"
#include "b2w/error.hpp"
#include "b2w/scene_io.hpp"

namespace b2w {
namespace {

using nlohmann::json;

constexpr const char* kModule = "editor";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Vec3 vec3_from(const json& v, const char* where) {
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
    fail(Errc::parse_error, std::string(where) + " must be an array of 3 numbers");
  }
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    fail(Errc::parse_error, "line " + std::to_string(line_no) + ": '" + tok + "' is not a finite number");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& tok, std::size_t line_no) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    fail(Errc::parse_error, "line " + std::to_string(line_no) + ": '" + tok + "' is not an unsigned integer");
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

Mat3 axis_rotation(int axis, double angle) {
  return Eigen::AngleAxisd(angle, Vec3::Unit(axis)).toRotationMatrix();
}

// Re-orthonormalises a rotation that drifted by rounding.
Mat3 nearest_rotation(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

}  // namespace

Scene apply_edit(const Scene& scene, const EditOp& op) {
  return std::visit(
      Overloaded{
          [&](const TranslatePrimitive& t) {
            const auto idx = scene.index_of(t.id);
            if (!idx) fail(Errc::unknown_id, "translate of unknown primitive '" + t.id + "'");
            if (!t.delta.allFinite()) fail(Errc::invalid_argument, "translation delta must be finite");
            std::vector<ConvexPrimitive> prims = scene.primitives();
            prims[*idx] = prims[*idx].translated(t.delta);
            return scene.with_primitives(std::move(prims));
          },
          [&](const AddPrimitive& a) {
            if (scene.find(a.primitive.id())) {
              fail(Errc::duplicate_id, "add of primitive '" + a.primitive.id() + "' which already exists");
            }
            if (scene.primitives().size() + 1 > scene.budget()) {
              fail(Errc::budget_exceeded, "adding '" + a.primitive.id() + "' would exceed the budget of " +
                                              std::to_string(scene.budget()) + " primitives");
            }
            std::vector<ConvexPrimitive> prims = scene.primitives();
            prims.push_back(a.primitive);
            return scene.with_primitives(std::move(prims));
          },
          [&](const DeletePrimitive& d) {
            const auto idx = scene.index_of(d.id);
            if (!idx) fail(Errc::unknown_id, "delete of unknown primitive '" + d.id + "'");
            std::vector<ConvexPrimitive> prims = scene.primitives();
            prims.erase(prims.begin() + static_cast<std::ptrdiff_t>(*idx));
            return scene.with_primitives(std::move(prims));
          },
          [&](const SetCameraPose& p) { return scene.with_camera(scene.camera().with_pose(p.pose)); },
          [&](const SetPrompt& p) { return scene.with_prompt(p.prompt); },
          [&](const SetSeed& s) { return scene.with_seed(s.seed); },
      },
      op);
}

Scene apply_edits(const Scene& scene, const std::vector<EditOp>& ops) {
  Scene current = scene;
  for (const EditOp& op : ops) current = apply_edit(current, op);
  return current;
}

json edit_to_json(const EditOp& op) {
  return std::visit(
      Overloaded{
          [](const TranslatePrimitive& t) {
            return json{{"op", "translate"}, {"id", t.id}, {"delta", json::array({t.delta.x(), t.delta.y(), t.delta.z()})}};
          },
          [](const AddPrimitive& a) { return json{{"op", "add"}, {"primitive", primitive_to_json(a.primitive)}}; },
          [](const DeletePrimitive& d) { return json{{"op", "delete"}, {"id", d.id}}; },
          [](const SetCameraPose& p) { return json{{"op", "set_pose"}, {"pose", pose_to_json(p.pose)}}; },
          [](const SetPrompt& p) { return json{{"op", "set_prompt"}, {"prompt", p.prompt}}; },
          [](const SetSeed& s) { return json{{"op", "set_seed"}, {"seed", s.seed}}; },
      },
      op);
}

EditOp edit_from_json(const json& j) {
  if (!j.is_object() || !j.contains("op") || !j.at("op").is_string()) fail(Errc::parse_error, "edit op must be an object with an 'op' string");
  const std::string kind = j.at("op").get<std::string>();
  auto string_field = [&](const char* key) {
    if (!j.at(key).is_string()) fail(Errc::parse_error, std::string("edit field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  if (kind == "translate") {
    json_util::expect_keys(j, "translate op", {"op", "id", "delta"}, {}, kModule);
    return TranslatePrimitive{string_field("id"), vec3_from(j.at("delta"), "translate.delta")};
  }
  if (kind == "add") {
    json_util::expect_keys(j, "add op", {"op", "primitive"}, {}, kModule);
    return AddPrimitive{primitive_from_json(j.at("primitive"))};
  }
  if (kind == "delete") {
    json_util::expect_keys(j, "delete op", {"op", "id"}, {}, kModule);
    return DeletePrimitive{string_field("id")};
  }
  if (kind == "set_pose") {
    json_util::expect_keys(j, "set_pose op", {"op", "pose"}, {}, kModule);
    return SetCameraPose{pose_from_json(j.at("pose"))};
  }
  if (kind == "set_prompt") {
    json_util::expect_keys(j, "set_prompt op", {"op", "prompt"}, {}, kModule);
    return SetPrompt{string_field("prompt")};
  }
  if (kind == "set_seed") {
    json_util::expect_keys(j, "set_seed op", {"op", "seed"}, {}, kModule);
    const json& seed = j.at("seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) fail(Errc::parse_error, "set_seed.seed must be an unsigned integer");
    return SetSeed{j.at("seed").get<std::uint64_t>()};
  }
  fail(Errc::parse_error, "unknown edit op '" + kind + "'");
}

Scene orbit_camera(const Scene& scene, const Vec3& pivot, double yaw, double pitch, double dolly) {
  if (!pivot.allFinite() || !std::isfinite(yaw) || !std::isfinite(pitch) || !std::isfinite(dolly)) {
    fail(Errc::invalid_argument, "orbit parameters must be finite");
  }
  const Pose& pose = scene.camera().pose();
  const Mat3 local = axis_rotation(1, yaw) * axis_rotation(0, pitch);
  const Mat3 world = pose.rotation * local * pose.rotation.transpose();
  Pose next;
  next.rotation = nearest_rotation(world * pose.rotation);
  next.translation = pivot + world * (pose.translation - pivot);
  next.translation += dolly * next.rotation.col(2);
  return scene.with_camera(scene.camera().with_pose(next));
}

std::string format_edit_line(const EditOp& op) {
  return std::visit(
      Overloaded{
          [](const TranslatePrimitive& t) {
            return "translate " + t.id + " " + format_double(t.delta.x()) + " " + format_double(t.delta.y()) + " " +
                   format_double(t.delta.z());
          },
          [](const AddPrimitive& a) { return "add " + primitive_to_json(a.primitive).dump(); },
          [](const DeletePrimitive& d) { return "delete " + d.id; },
          [](const SetCameraPose& p) {
            std::string s = "pose";
            for (int r = 0; r < 3; ++r) {
              for (int c = 0; c < 3; ++c) s += " " + format_double(p.pose.rotation(r, c));
            }
            for (int i = 0; i < 3; ++i) s += " " + format_double(p.pose.translation(i));
            return s;
          },
          [](const SetPrompt& p) { return "prompt " + p.prompt; },
          [](const SetSeed& s) { return "seed " + std::to_string(s.seed); },
      },
      op);
}

Scene replay_script(const Scene& scene, std::string_view script) {
  Scene current = scene;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= script.size()) {
    const std::size_t nl = script.find('\n', pos);
    const std::string_view raw = script.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? script.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t sp = line.find_first_of(" \t");
    const std::string cmd(line.substr(0, sp));
    const std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));
    const std::vector<std::string> args = split_ws(rest);
    auto expect_args = [&](std::size_t n) {
      if (args.size() != n) {
        fail(Errc::parse_error, "line " + std::to_string(line_no) + ": '" + cmd + "' takes " + std::to_string(n) +
                                    " arguments, got " + std::to_string(args.size()));
      }
    };
    try {
      if (cmd == "translate") {
        expect_args(4);
        current = apply_edit(current, TranslatePrimitive{args[0], Vec3(parse_double(args[1], line_no), parse_double(args[2], line_no),
                                                                       parse_double(args[3], line_no))});
      } else if (cmd == "add") {
        current = apply_edit(current, AddPrimitive{primitive_from_json(json_util::parse(rest, kModule))});
      } else if (cmd == "delete") {
        expect_args(1);
        current = apply_edit(current, DeletePrimitive{args[0]});
      } else if (cmd == "pose") {
        expect_args(12);
        Pose p;
        for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = parse_double(args[static_cast<std::size_t>(i)], line_no);
        for (int i = 0; i < 3; ++i) p.translation(i) = parse_double(args[static_cast<std::size_t>(9 + i)], line_no);
        current = apply_edit(current, SetCameraPose{p});
      } else if (cmd == "prompt") {
        current = apply_edit(current, SetPrompt{std::string(rest)});
      } else if (cmd == "seed") {
        expect_args(1);
        current = apply_edit(current, SetSeed{parse_u64(args[0], line_no)});
      } else if (cmd == "orbit") {
        expect_args(6);
        double v[6];
        for (int i = 0; i < 6; ++i) v[i] = parse_double(args[static_cast<std::size_t>(i)], line_no);
        current = orbit_camera(current, Vec3(v[0], v[1], v[2]), v[3], v[4], v[5]);
      } else {
        fail(Errc::parse_error, "line " + std::to_string(line_no) + ": unknown command '" + cmd + "'");
      }
    } catch (const Error& e) {
      if (e.module() == kModule && e.code() == Errc::parse_error) throw;
      throw Error(e.module(), e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return current;
}

Image TextureBadge::blacked_out() const {
  Image out = image;
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (mask.at(u, v)) {
        std::uint8_t* px = out.pixel(u, v);
        px[0] = px[1] = px[2] = 0;
      }
    }
  }
  return out;
}

TextureBadge make_badge(Image image, Mask mask) {
  if (image.width != mask.width || image.height != mask.height) {
    fail(Errc::dimension_mismatch, "badge image and mask dimensions differ");
  }
  return TextureBadge{std::move(image), std::move(mask)};
}

TextureBadge move_badge(const Scene& before, const Scene& after, const std::vector<std::string>& moved_ids,
                        const Image& image, int margin, const RenderOptions& options) {
  const Camera& cb = before.camera();
  const Camera& ca = after.camera();
  if (cb.width() != ca.width() || cb.height() != ca.height() || image.width != cb.width() || image.height != cb.height()) {
    fail(Errc::dimension_mismatch, "badge scenes and image must share one raster size");
  }
  std::vector<std::string> in_before;
  std::vector<std::string> in_after;
  for (const std::string& id : moved_ids) {
    const bool b = before.find(id) != nullptr;
    const bool a = after.find(id) != nullptr;
    if (!a && !b) fail(Errc::unknown_id, "moved primitive '" + id + "' is in neither scene");
    if (b) in_before.push_back(id);
    if (a) in_after.push_back(id);
  }
  Mask mask = mask_union(silhouette(before, in_before, options), silhouette(after, in_after, options));
  return make_badge(image, dilate(mask, margin));
}

TextureBadge random_badge(const Scene& scene, const Image& image, double fraction, std::uint64_t seed,
                          const RenderOptions& options) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) fail(Errc::invalid_argument, "badge fraction must lie in [0, 1]");
  if (image.width != scene.camera().width() || image.height != scene.camera().height()) {
    fail(Errc::dimension_mismatch, "badge image and scene raster sizes differ");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::string> chosen;
  for (const ConvexPrimitive& p : scene.primitives()) {
    if (uniform01(rng) < fraction) chosen.push_back(p.id());
  }
  return make_badge(image, silhouette(scene, chosen, options));
}

}  // namespace b2w

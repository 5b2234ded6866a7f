#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "b2w/render_bridge.hpp"
#include "b2w/scene.hpp"

namespace b2w::app {

namespace fs = std::filesystem;

struct DecomposeArgs {
  fs::path depth;
  std::optional<fs::path> camera;
  std::optional<fs::path> fit_config;
  fs::path out_scene;
  std::optional<fs::path> report;
  std::string prompt;
  std::optional<std::size_t> budget;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};
void run_decompose(const DecomposeArgs& a);

struct RenderDepthArgs {
  fs::path scene;
  fs::path out_depth;  // ".png": 16-bit millimetres; anything else: B2WD
  std::optional<fs::path> out_ids;
  unsigned threads = 0;
};
void run_render_depth(const RenderDepthArgs& a);

struct EditArgs {
  fs::path scene;
  fs::path script;
  fs::path out_scene;
};
void run_edit(const EditArgs& a);

struct BadgeArgs {
  fs::path before;
  std::optional<fs::path> after;  // move mode
  std::vector<std::string> ids;
  bool random = false;  // random mode: primitives of `before` picked with probability `fraction`
  double fraction = 0.5;
  fs::path image;
  fs::path out_image;
  fs::path out_mask;
  int margin = 4;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};
void run_badge(const BadgeArgs& a);

struct RenderArgs {
  fs::path scene;
  fs::path out_image;
  bool stub = false;
  std::optional<std::string> endpoint;  // falls back to B2W_RENDERER_URL
  std::optional<fs::path> badge_image;
  std::optional<fs::path> badge_mask;
  std::optional<std::string> prompt;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> hints;  // JSON object
  RemoteOptions remote;
  unsigned threads = 0;
};
void run_render(const RenderArgs& a);

struct EvalArgs {
  fs::path manifest;
  fs::path out_report;
  std::optional<fs::path> classes;  // one label per line
  bool align = true;
  double trim = 0.0;
  bool with_reference = false;
  unsigned threads = 0;
};
// Returns the human-readable table.
std::string run_eval(const EvalArgs& a);

// Builds the render request for a scene at full resolution.
RenderRequest make_render_request(const Scene& scene, unsigned threads);

}  // namespace b2w::app

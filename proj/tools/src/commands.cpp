#include "commands.hpp"

#include <fstream>
#include <sstream>

#include "b2w/decomposer.hpp"
#include "b2w/editor.hpp"
#include "b2w/error.hpp"
#include "b2w/metrics.hpp"
#include "b2w/raster_io.hpp"
#include "b2w/raytracer.hpp"
#include "b2w/scene_io.hpp"

namespace b2w::app {
namespace {

constexpr const char* kModule = "cli";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

Scene load_scene(const fs::path& path, std::size_t budget = kDefaultBudget) { return parse_scene(read_file(path), budget); }

bool is_png(const fs::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png";
}

}  // namespace

void run_decompose(const DecomposeArgs& a) {
  const DepthMap depth = read_depth_file(a.depth);
  const Camera camera = a.camera ? parse_camera_config(read_file(*a.camera), depth.width, depth.height)
                                 : Camera::with_default_intrinsics(depth.width, depth.height);
  if (camera.width() != depth.width || camera.height() != depth.height) {
    fail(Errc::dimension_mismatch, "camera is " + std::to_string(camera.width()) + "x" + std::to_string(camera.height()) +
                                       " but depth is " + std::to_string(depth.width) + "x" + std::to_string(depth.height));
  }
  FitConfig cfg;
  if (a.fit_config) cfg = fit_config_from_json(json_util::parse(read_file(*a.fit_config), kModule));
  if (a.budget) cfg.budget = *a.budget;
  cfg.threads = a.threads;
  cfg.validate();

  Decomposition d = decompose(depth, camera, cfg, a.seed);
  const Scene scene = d.scene.with_prompt(a.prompt);
  write_file_atomic(a.out_scene, serialize_scene(scene));
  if (a.report) write_file_atomic(*a.report, canonical_dump(fit_report_to_json(d.report)));
}

void run_render_depth(const RenderDepthArgs& a) {
  const Scene scene = load_scene(a.scene);
  const DepthRender r = render_depth(scene, RenderOptions{a.threads});
  write_file_atomic(a.out_depth, is_png(a.out_depth) ? encode_png_gray16(depth_to_millimeters(r.depth))
                                                     : encode_depth_binary(r.depth));
  if (a.out_ids) write_file_atomic(*a.out_ids, encode_png_gray16(ids_to_gray16(r.ids)));
}

void run_edit(const EditArgs& a) {
  const Scene scene = load_scene(a.scene);
  write_file_atomic(a.out_scene, serialize_scene(replay_script(scene, read_file(a.script))));
}

void run_badge(const BadgeArgs& a) {
  const Image image = decode_png_rgb(read_file(a.image));
  const Scene before = load_scene(a.before);
  TextureBadge badge;
  if (a.random) {
    if (a.after) fail(Errc::invalid_argument, "--random takes a single scene; drop --after");
    badge = random_badge(before, image, a.fraction, a.seed, RenderOptions{a.threads});
  } else {
    if (!a.after) fail(Errc::invalid_argument, "move badges need --after (or use --random)");
    if (a.ids.empty()) fail(Errc::invalid_argument, "move badges need at least one --id");
    badge = move_badge(before, load_scene(*a.after), a.ids, image, a.margin, RenderOptions{a.threads});
  }
  write_file_atomic(a.out_image, encode_png_rgb(badge.blacked_out()));
  write_file_atomic(a.out_mask, encode_png_mask(badge.mask));
}

RenderRequest make_render_request(const Scene& scene, unsigned threads) {
  RenderRequest req;
  req.prompt = scene.prompt();
  req.seed = scene.seed();
  req.width = scene.camera().width();
  req.height = scene.camera().height();
  req.depth = render_depth(scene, RenderOptions{threads}).depth;
  return req;
}

void run_render(const RenderArgs& a) {
  const Scene scene = load_scene(a.scene);
  RenderRequest req = make_render_request(scene, a.threads);
  if (a.prompt) req.prompt = *a.prompt;
  if (a.seed) req.seed = *a.seed;
  if (a.badge_image.has_value() != a.badge_mask.has_value()) {
    fail(Errc::invalid_argument, "--badge-image and --badge-mask must be given together");
  }
  if (a.badge_image) {
    req.badge = RenderBadge{decode_png_rgb(read_file(*a.badge_image)), decode_png_mask(read_file(*a.badge_mask))};
  }
  if (a.hints) {
    req.hints = json_util::parse(*a.hints, kModule);
    if (!req.hints.is_object()) fail(Errc::invalid_argument, "--hints must be a JSON object");
  }

  RenderResult result;
  if (a.stub) {
    if (a.endpoint) fail(Errc::invalid_argument, "--stub and --endpoint are mutually exclusive");
    result = stub_render(req);
  } else {
    const std::optional<std::string> endpoint = a.endpoint ? a.endpoint : renderer_url_from_env();
    if (!endpoint) fail(Errc::invalid_argument, "no renderer: pass --stub, --endpoint or set B2W_RENDERER_URL");
    result = render_remote(*endpoint, req, a.remote);
  }
  write_file_atomic(a.out_image, encode_png_rgb(result.image));
}

std::string run_eval(const EvalArgs& a) {
  const std::vector<ManifestItem> items = parse_manifest(read_file(a.manifest), a.manifest.parent_path());
  BatchOptions options;
  options.depth = DepthErrorOptions{a.align, a.trim};
  options.threads = a.threads;
  if (a.classes) {
    options.classes.clear();
    std::istringstream in(read_file(*a.classes));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] != '#') options.classes.push_back(line);
    }
  }
  const BatchReport report = evaluate_batch(items, options);
  write_file_atomic(a.out_report, canonical_dump(batch_report_to_json(report)));
  return format_depth_table(report, a.with_reference);
}

}  // namespace b2w::app

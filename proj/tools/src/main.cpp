#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "b2w/error.hpp"
#include "b2w/render_bridge.hpp"
#include "commands.hpp"
#include "service.hpp"

namespace {

using namespace b2w;
using namespace b2w::app;

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool stub = false;
  std::optional<std::string> renderer;
  std::string scene_dir = "scenes";
  std::size_t budget = kDefaultBudget;
  unsigned threads = 0;
  long timeout_ms = 30000;
  int retries = 2;
};

int run_serve(const ServeArgs& a) {
  ServiceConfig cfg;
  cfg.scene_dir = a.scene_dir;
  cfg.stub = a.stub;
  cfg.renderer_endpoint = a.renderer ? a.renderer : renderer_url_from_env();
  if (a.stub && a.renderer) throw Error("cli", Errc::invalid_argument, "--stub and --renderer are mutually exclusive");
  if (!a.stub && !cfg.renderer_endpoint) {
    throw Error("cli", Errc::invalid_argument, "no renderer: pass --stub, --renderer or set B2W_RENDERER_URL");
  }
  cfg.remote.timeout = std::chrono::milliseconds(a.timeout_ms);
  cfg.remote.retries = a.retries;
  cfg.budget = a.budget;
  cfg.threads = a.threads;

  // Signals go to a dedicated thread so shutdown runs outside a signal handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  SceneService scenes(cfg);
  HttpService http(scenes, a.stub);
  const int port = http.bind(a.host, a.port);
  std::printf("listening on http://%s:%d\n", a.host.c_str(), port);
  std::fflush(stdout);

  std::atomic<bool> signalled{false};
  std::thread waiter([&http, &signalled, set] {
    int sig = 0;
    sigwait(&set, &sig);
    signalled = true;
    http.stop();
  });
  http.run();
  // run() also returns if the listener fails; wake the waiter in that case.
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"b2w: editable convex-primitive scenes for depth-conditioned rendering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "b2w 0.1.0");

  DecomposeArgs dec;
  std::string dec_depth, dec_out;
  std::optional<std::string> dec_camera, dec_cfg, dec_report;
  auto* c_dec = app.add_subcommand("decompose", "Fit convex primitives to a depth map and write a scene");
  c_dec->add_option("depth", dec_depth, "Depth file (B2WD or 16-bit millimetre PNG)")->required()->check(CLI::ExistingFile);
  c_dec->add_option("--camera", dec_camera, "Camera config JSON (default intrinsics if omitted)");
  c_dec->add_option("--fit-config", dec_cfg, "Fit parameters JSON");
  c_dec->add_option("-o,--out", dec_out, "Output scene document")->required();
  c_dec->add_option("--report", dec_report, "Write the fit report JSON here");
  c_dec->add_option("--prompt", dec.prompt, "Prompt stored in the scene");
  c_dec->add_option("--budget", dec.budget, "Maximum number of primitives");
  c_dec->add_option("--seed", dec.seed, "Random seed")->capture_default_str();
  c_dec->add_option("--threads", dec.threads, "Worker threads (0 = hardware)")->capture_default_str();

  RenderDepthArgs rd;
  std::string rd_scene, rd_depth;
  std::optional<std::string> rd_ids;
  auto* c_rd = app.add_subcommand("render-depth", "Ray-trace a scene to a depth map and id buffer");
  c_rd->add_option("scene", rd_scene, "Scene document")->required()->check(CLI::ExistingFile);
  c_rd->add_option("--out-depth", rd_depth, "Depth output (.png: 16-bit mm, otherwise B2WD)")->required();
  c_rd->add_option("--out-ids", rd_ids, "Id buffer output (16-bit PNG, 0 = none, index + 1)");
  c_rd->add_option("--threads", rd.threads, "Worker threads (0 = hardware)")->capture_default_str();

  EditArgs ed;
  std::string ed_scene, ed_script, ed_out;
  auto* c_ed = app.add_subcommand("edit", "Apply an edit script to a scene");
  c_ed->add_option("scene", ed_scene, "Scene document")->required()->check(CLI::ExistingFile);
  c_ed->add_option("--script", ed_script, "Edit script")->required()->check(CLI::ExistingFile);
  c_ed->add_option("-o,--out", ed_out, "Output scene document")->required();

  BadgeArgs bd;
  std::string bd_before, bd_image, bd_out_image, bd_out_mask;
  std::optional<std::string> bd_after;
  auto* c_bd = app.add_subcommand("badge", "Build a texture badge (blacked-out image + mask)");
  c_bd->add_option("--before", bd_before, "Scene before the edit (or the only scene with --random)")->required();
  c_bd->add_option("--after", bd_after, "Scene after the edit");
  c_bd->add_option("--id", bd.ids, "Moved primitive id (repeatable)");
  c_bd->add_flag("--random", bd.random, "Mask randomly selected primitives instead");
  c_bd->add_option("--fraction", bd.fraction, "Selection probability for --random")->capture_default_str();
  c_bd->add_option("--image", bd_image, "Rendered image (PNG)")->required()->check(CLI::ExistingFile);
  c_bd->add_option("--out-image", bd_out_image, "Badge image output (PNG)")->required();
  c_bd->add_option("--out-mask", bd_out_mask, "Badge mask output (1-bit PNG)")->required();
  c_bd->add_option("--margin", bd.margin, "Mask dilation in pixels")->capture_default_str();
  c_bd->add_option("--seed", bd.seed, "Random seed")->capture_default_str();
  c_bd->add_option("--threads", bd.threads, "Worker threads (0 = hardware)")->capture_default_str();

  RenderArgs rn;
  std::string rn_scene, rn_out;
  std::optional<std::string> rn_badge_image, rn_badge_mask;
  long rn_timeout = 30000;
  auto* c_rn = app.add_subcommand("render", "Render a scene image through a renderer");
  c_rn->add_option("scene", rn_scene, "Scene document")->required()->check(CLI::ExistingFile);
  c_rn->add_option("-o,--out", rn_out, "Output image (PNG)")->required();
  c_rn->add_flag("--stub", rn.stub, "Use the built-in deterministic stub renderer");
  c_rn->add_option("--endpoint", rn.endpoint, "Renderer URL (default: $B2W_RENDERER_URL)");
  c_rn->add_option("--badge-image", rn_badge_image, "Badge image (PNG)");
  c_rn->add_option("--badge-mask", rn_badge_mask, "Badge mask (PNG)");
  c_rn->add_option("--prompt", rn.prompt, "Override the scene prompt");
  c_rn->add_option("--seed", rn.seed, "Override the scene seed");
  c_rn->add_option("--hints", rn.hints, "Renderer hints as a JSON object");
  c_rn->add_option("--timeout-ms", rn_timeout, "Request timeout")->capture_default_str();
  c_rn->add_option("--retries", rn.remote.retries, "Retries after transport failures")->capture_default_str();
  c_rn->add_option("--threads", rn.threads, "Worker threads (0 = hardware)")->capture_default_str();

  EvalArgs ev;
  std::string ev_manifest, ev_out;
  std::optional<std::string> ev_classes;
  bool ev_no_align = false;
  auto* c_ev = app.add_subcommand("eval", "Evaluate depth consistency and label accuracy over a manifest");
  c_ev->add_option("manifest", ev_manifest, "Tab-separated manifest")->required()->check(CLI::ExistingFile);
  c_ev->add_option("-o,--out", ev_out, "Report JSON output")->required();
  c_ev->add_option("--classes", ev_classes, "Class list file, one label per line");
  c_ev->add_flag("--no-align", ev_no_align, "Skip least-squares scale/shift alignment");
  c_ev->add_option("--trim", ev.trim, "Fraction of largest residuals dropped before refitting")->capture_default_str();
  c_ev->add_flag("--with-reference", ev.with_reference, "Print published reference figures under the table");
  c_ev->add_option("--threads", ev.threads, "Worker threads (0 = hardware)")->capture_default_str();

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Serve the scene HTTP API");
  c_sv->add_option("--host", sv.host, "Bind address")->capture_default_str();
  c_sv->add_option("--port", sv.port, "Port (0 picks a free one)")->capture_default_str();
  c_sv->add_flag("--stub", sv.stub, "Render with the built-in stub (also serves POST /v1/render)");
  c_sv->add_option("--renderer", sv.renderer, "Renderer URL (default: $B2W_RENDERER_URL)");
  c_sv->add_option("--scene-dir", sv.scene_dir, "Directory holding scene state")->capture_default_str();
  c_sv->add_option("--budget", sv.budget, "Maximum primitives per scene")->capture_default_str();
  c_sv->add_option("--timeout-ms", sv.timeout_ms, "Renderer request timeout")->capture_default_str();
  c_sv->add_option("--retries", sv.retries, "Renderer retries after transport failures")->capture_default_str();
  c_sv->add_option("--threads", sv.threads, "Worker threads per render (0 = hardware)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_dec) {
      dec.depth = dec_depth;
      dec.out_scene = dec_out;
      if (dec_camera) dec.camera = *dec_camera;
      if (dec_cfg) dec.fit_config = *dec_cfg;
      if (dec_report) dec.report = *dec_report;
      run_decompose(dec);
    } else if (*c_rd) {
      rd.scene = rd_scene;
      rd.out_depth = rd_depth;
      if (rd_ids) rd.out_ids = *rd_ids;
      run_render_depth(rd);
    } else if (*c_ed) {
      ed.scene = ed_scene;
      ed.script = ed_script;
      ed.out_scene = ed_out;
      run_edit(ed);
    } else if (*c_bd) {
      bd.before = bd_before;
      if (bd_after) bd.after = *bd_after;
      bd.image = bd_image;
      bd.out_image = bd_out_image;
      bd.out_mask = bd_out_mask;
      run_badge(bd);
    } else if (*c_rn) {
      rn.scene = rn_scene;
      rn.out_image = rn_out;
      if (rn_badge_image) rn.badge_image = *rn_badge_image;
      if (rn_badge_mask) rn.badge_mask = *rn_badge_mask;
      rn.remote.timeout = std::chrono::milliseconds(rn_timeout);
      run_render(rn);
    } else if (*c_ev) {
      ev.manifest = ev_manifest;
      ev.out_report = ev_out;
      if (ev_classes) ev.classes = *ev_classes;
      ev.align = !ev_no_align;
      std::cout << run_eval(ev);
    } else if (*c_sv) {
      return run_serve(sv);
    }
  } catch (const Error& e) {
    std::cerr << encode_error(e.qualified_code(), e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << encode_error("cli.internal", e.what()) << "\n";
    return 1;
  }
  return 0;
}

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "b2w/decomposer.hpp"
#include "b2w/editor.hpp"
#include "b2w/error.hpp"
#include "b2w/metrics.hpp"
#include "b2w/raster_io.hpp"
#include "b2w/raytracer.hpp"
#include "b2w/render_bridge.hpp"
#include "b2w/scene_io.hpp"
#include "support.hpp"

#include <httplib.h>  // after Eigen: <resolv.h> defines _res

using namespace b2w;
using namespace b2w::testing;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr int kRayPairs = 1000;
constexpr double kRayStep = 1e-4;
constexpr double kRayTolerance = 2e-4;
constexpr double kRaySeconds = 10;

constexpr int kGradientInstances = 50;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientSeconds = 30;

constexpr int kRecoveryTrials = 10;
constexpr int kRecoveryRequired = 9;
constexpr double kRecoveryPerturbation = 0.10;
constexpr double kRecoveryAbsRel = 0.05;
constexpr double kRecoverySeconds = 300;

constexpr double kExactTolerance = 1e-12;
constexpr double kAlignedTolerance = 1e-9;
constexpr int kGridInstances = 100;
constexpr int kGridSide = 200;
constexpr int kFuzzRequests = 1000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome ray_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  int hits = 0;
  int disagreements = 0;
  for (int trial = 0; trial < kRayPairs; ++trial) {
    const auto p = random_polytope(rng, "p");
    const Vec3 center = 0.5 * (p.bounds().lo + p.bounds().hi);
    const Vec3 origin = trial % 5 == 0 ? center : center + random_unit(rng) * uniform(rng, 1.5, 3.0);
    const Vec3 dir = (center + uniform_vec(rng, -0.8, 0.8) - origin).normalized();
    const auto slab = intersect_convex(Ray::make(origin, dir), p);
    const MarchResult march = ray_march(origin, dir, p.halfspaces(), (origin - center).norm() + 4.0, kRayStep);
    if (!march.hit) {
      // A miss by the march is only allowed to be a graze thinner than the step.
      if (slab && slab->t_far - slab->t_near >= kRayTolerance) ++disagreements;
      continue;
    }
    ++hits;
    if (!slab) {
      ++disagreements;
      continue;
    }
    worst = std::max({worst, std::abs(slab->t_near - march.t_near), std::abs(slab->t_far - march.t_far)});
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = disagreements == 0 && worst <= kRayTolerance && secs < kRaySeconds && hits >= kRayPairs / 2;
  o.detail = std::to_string(kRayPairs) + " pairs, " + std::to_string(hits) + " hits, max |dt| " + fmt("%.2e", worst) +
             " m (tol 2e-4), " + std::to_string(disagreements) + " hit/miss disagreements, " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(202);
  FitConfig cfg;  // production sharpness and gain
  cfg.overlap_weight = 0.1;
  cfg.volume_weight = 0.05;
  cfg.threads = 1;
  double worst = 0.0;
  double worst_norm = 0.0;
  for (int i = 0; i < kGradientInstances; ++i) {
    const auto shapes = random_shapes(rng, 1 + i % 3);
    const auto samples = random_samples(rng, 50 + static_cast<std::size_t>(rng() % 151), 1.0);
    const GradientCheck g = check_fit_gradient(shapes, samples, cfg, 1e-6, 1e-8);
    worst = std::max(worst, g.max_component_error);
    worst_norm = std::max(worst_norm, g.normwise_error);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < kGradientTolerance && secs < kGradientSeconds;
  o.detail = std::to_string(kGradientInstances) + " instances, max relative error " + fmt("%.2e", worst) +
             " per component (normwise " + fmt("%.2e", worst_norm) + "), " + fmt("%.2f", secs) + " s";
  return o;
}

FitConfig recovery_config() {
  FitConfig cfg;
  cfg.budget = 3;
  cfg.near_surface_samples = 8000;
  cfg.volume_samples = 8000;
  cfg.iterations = 400;
  cfg.step_size = 5e-3;
  return cfg;
}

Outcome decomposition_recovery() {
  const auto t0 = Clock::now();
  const Scene truth = three_box_scene();
  const DepthMap gt = render_depth(truth).depth;
  const FitConfig cfg = recovery_config();
  int passed = 0;
  int holdout_regressions = 0;
  std::ostringstream per;
  for (int trial = 0; trial < kRecoveryTrials; ++trial) {
    Rng rng(300 + trial);
    const auto seeds = three_boxes(&rng, kRecoveryPerturbation);
    const auto samples = sample_labels(gt, truth.camera(), cfg, 1000 + trial);
    const PolishResult r = polish(seeds, samples, cfg, trial);
    double abs_rel = INFINITY;
    std::size_t missing = 0;
    if (!r.primitives.empty()) {
      const DepthMap fit = render_depth(truth.with_primitives(r.primitives)).depth;
      for (std::size_t i = 0; i < gt.size(); ++i) missing += std::isfinite(gt.data[i]) && !std::isfinite(fit.data[i]);
      abs_rel = depth_errors(fit, gt, false).abs_rel;
    }
    const bool ok = missing == 0 && abs_rel < kRecoveryAbsRel;
    passed += ok;
    // Held-out classification error may not grow by more than 1% of its entry value.
    const double entry_err = 1.0 - r.report.entry_holdout_accuracy;
    const double exit_err = 1.0 - r.report.holdout_accuracy;
    holdout_regressions += exit_err > 1.01 * entry_err + 1e-12;
    per << (trial ? " " : "") << fmt("%.4f", abs_rel) << (missing ? "(miss)" : "");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = passed >= kRecoveryRequired && secs < kRecoverySeconds && holdout_regressions == 0;
  o.detail = std::to_string(passed) + "/" + std::to_string(kRecoveryTrials) + " trials AbsRel < 0.05 [" + per.str() +
             "], held-out error regressions " + std::to_string(holdout_regressions) + ", " + fmt("%.1f", secs) + " s";
  return o;
}

DepthMap random_depth(Rng& rng, int w, int h) {
  DepthMap d(w, h);
  for (double& x : d.data) x = uniform(rng, 0.5, 8.0);
  return d;
}

Outcome metrics_exactness() {
  Rng rng(404);
  double worst_exact = 0.0;
  double worst_aligned = 0.0;
  for (int i = 0; i < 100; ++i) {
    const DepthMap ref = random_depth(rng, 20, 15);
    DepthMap pred = ref;
    for (double& x : pred.data) x *= 1.1;
    const DepthErrorReport e = depth_errors(pred, ref, false);
    worst_exact = std::max({worst_exact, std::abs(e.abs_rel - 0.1), std::abs(e.rmsle - std::log(1.1))});

    const double s = uniform(rng, 0.05, 20.0);
    const double t = uniform(rng, -5.0, 5.0);
    DepthMap affine = ref;
    for (double& x : affine.data) x = s * x + t;
    const DepthErrorReport a = depth_errors(affine, ref, true);
    worst_aligned = std::max({worst_aligned, a.abs_rel, a.rmse, a.rmsle});
  }
  Outcome o;
  o.pass = worst_exact <= kExactTolerance && worst_aligned < kAlignedTolerance;
  o.detail = "1.1x: max deviation " + fmt("%.2e", worst_exact) + " (tol 1e-12); aligned affine: max metric " +
             fmt("%.2e", worst_aligned) + " (tol 1e-9)";
  return o;
}

double sse(const DepthMap& p, const DepthMap& r, double s, double t) {
  double e = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) e += (s * p.data[i] + t - r.data[i]) * (s * p.data[i] + t - r.data[i]);
  return e;
}

Outcome scale_shift_optimality() {
  Rng rng(505);
  int violations = 0;
  double margin = INFINITY;
  for (int i = 0; i < kGridInstances; ++i) {
    const DepthMap ref = random_depth(rng, 10, 8);
    DepthMap pred = random_depth(rng, 10, 8);
    const double s = uniform(rng, -2.0, 2.0);
    for (std::size_t k = 0; k < pred.size(); ++k) pred.data[k] = 0.3 * pred.data[k] + s * ref.data[k];
    const ScaleShift fit = fit_scale_shift(pred, ref);
    const double closed = sse(pred, ref, fit.scale, fit.shift);
    // Fixed grid independent of the solution: scale in [-3, 3], shift in [-10, 10].
    double best = INFINITY;
    for (int a = 0; a < kGridSide; ++a) {
      for (int b = 0; b < kGridSide; ++b) {
        best = std::min(best, sse(pred, ref, -3.0 + 6.0 * a / (kGridSide - 1), -10.0 + 20.0 * b / (kGridSide - 1)));
      }
    }
    violations += closed > best * (1 + 1e-12);
    margin = std::min(margin, best - closed);
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = std::to_string(kGridInstances) + " instances, 200x200 grid; violations " + std::to_string(violations) +
             ", smallest grid-minus-closed-form residual " + fmt("%.3e", margin);
  return o;
}

Outcome balanced_accuracy() {
  const std::vector<std::string> two = {"a", "b"};
  const std::vector<LabelPair> hand = {{"a", "a"}, {"a", "a"}, {"b", "b"}, {"b", "a"}};
  const double bacc = confusion_and_bacc(hand, two).balanced_accuracy;
  const std::vector<LabelPair> all_right = {{"a", "a"}, {"b", "b"}, {"b", "b"}};
  const double perfect = confusion_and_bacc(all_right, two).balanced_accuracy;

  Rng rng(606);
  const auto& classes = default_scene_classes();
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<LabelPair> pairs;
    const int n = 1 + static_cast<int>(rng() % 80);
    for (int i = 0; i < n; ++i) pairs.emplace_back(classes[rng() % 6], classes[rng() % 6]);
    double sum = 0.0;
    int present = 0;
    for (const auto& c : classes) {
      int req = 0;
      int hit = 0;
      for (const auto& [r, p] : pairs) {
        req += r == c;
        hit += r == c && p == c;
      }
      if (req) {
        sum += static_cast<double>(hit) / req;
        ++present;
      }
    }
    worst = std::max(worst, std::abs(confusion_and_bacc(pairs, classes).balanced_accuracy - 100.0 * sum / present));
  }
  Outcome o;
  o.pass = bacc == 75.0 && perfect == 100.0 && worst <= kExactTolerance;
  o.detail = "recalls 1.0/0.5 -> " + fmt("%.6f", bacc) + ", all correct -> " + fmt("%.1f", perfect) +
             ", 1000 random cases max deviation from counting oracle " + fmt("%.1e", worst);
  return o;
}

Outcome edit_locality() {
  StubRenderServer server;
  server.start();
  Rng rng(707);
  int trials = 0;
  std::size_t changed_outside = 0;
  std::size_t kept_pixels = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Scene before = three_box_scene().with_seed(rng());
    const std::string id = before.primitives()[rng() % 3].id();
    const Scene after = apply_edit(before, TranslatePrimitive{id, uniform_vec(rng, -0.5, 0.5)});
    RenderRequest req{before.prompt(), before.seed(), 64, 64, render_depth(before).depth, std::nullopt, nullptr};
    const Image original = render_remote(server.endpoint(), req).image;
    const TextureBadge badge = move_badge(before, after, {id}, original, static_cast<int>(rng() % 3));
    req.depth = render_depth(after).depth;
    req.badge = to_render_badge(badge);
    const Image edited = render_remote(server.endpoint(), req).image;
    for (std::size_t i = 0; i < badge.mask.size(); ++i) {
      if (badge.mask.data[i]) continue;
      ++kept_pixels;
      for (int c = 0; c < 3; ++c) changed_outside += edited.rgb[3 * i + c] != original.rgb[3 * i + c];
    }
    ++trials;
  }
  Outcome o;
  o.pass = changed_outside == 0 && kept_pixels > 0;
  o.detail = std::to_string(trials) + " moves over HTTP to the stub; " + std::to_string(kept_pixels) +
             " unmasked pixels checked, " + std::to_string(changed_outside) + " channels differ";
  return o;
}

#ifdef B2W_CLI_PATH
const std::string kCli = B2W_CLI_PATH;

bool cli_ok(std::vector<std::string> args, std::string& why) {
  args.insert(args.begin(), kCli);
  const CommandResult r = run_command(args);
  if (r.exit_code != 0) why = args[1] + " exited " + std::to_string(r.exit_code) + ": " + r.err;
  return r.exit_code == 0;
}

Outcome determinism() {
  TempDir d;
  const auto p = [&](const std::string& name) { return (d.path / name).string(); };
  write_file(d.path / "depth.b2wd", encode_depth_binary(render_depth(three_box_scene()).depth));
  write_file(d.path / "camera.json", R"({"fx": 60, "fy": 60, "cx": 31.5, "cy": 31.5})");
  write_file(d.path / "fit.json", R"({"near_surface_samples": 4000, "volume_samples": 4000, "iterations": 150})");
  write_file(d.path / "manifest.tsv", "depth.b2wd\tdepth.b2wd\tkitchen\tkitchen\nrun-1-scene-depth.b2wd\tdepth.b2wd\toffice\tbedroom\n");
  std::string why;
  std::vector<std::string> mismatched;
  auto same = [&](const std::string& what, const std::vector<std::string>& files) {
    for (const auto& f : files) {
      if (read_file(f) != read_file(files.front())) {
        mismatched.push_back(what);
        return;
      }
    }
  };
  std::vector<std::string> scenes, depths, images, reports;
  int run = 0;
  for (const char* threads : {"1", "4", "1"}) {
    const std::string tag = "run-" + std::to_string(run++) + "-";
    if (!cli_ok({"decompose", p("depth.b2wd"), "--camera", p("camera.json"), "--fit-config", p("fit.json"), "--seed", "9",
                 "--threads", threads, "-o", p(tag + "scene.json")},
                why) ||
        !cli_ok({"render-depth", p(tag + "scene.json"), "--out-depth", p(tag + "scene-depth.b2wd"), "--threads", threads},
                why) ||
        !cli_ok({"render", p(tag + "scene.json"), "--stub", "-o", p(tag + "image.png"), "--threads", threads}, why)) {
      return {false, why};
    }
    scenes.push_back(p(tag + "scene.json"));
    depths.push_back(p(tag + "scene-depth.b2wd"));
    images.push_back(p(tag + "image.png"));
  }
  for (const char* threads : {"1", "4", "1"}) {
    const std::string out = p("report-" + std::to_string(reports.size()) + ".json");
    if (!cli_ok({"eval", p("manifest.tsv"), "-o", out, "--threads", threads}, why)) return {false, why};
    reports.push_back(out);
  }
  same("decompose", scenes);
  same("render-depth", depths);
  same("render --stub", images);
  same("eval", reports);
  Outcome o;
  o.pass = mismatched.empty();
  o.detail = "decompose, render-depth, render --stub, eval each run 3x with threads 1/4/1: ";
  if (mismatched.empty()) {
    o.detail += "all byte-identical";
  } else {
    for (const auto& m : mismatched) o.detail += m + " differs; ";
  }
  return o;
}

Outcome service_integrity() {
  std::ostringstream detail;
  bool ok = true;
  for (int kill_after : {50, 200, 500}) {
    TempDir d;
    const KillRestartResult r = kill_restart_check(kCli, d.path, kill_after);
    detail << "kill@" << kill_after << "ms acked " << r.acked << " recovered " << r.recovered
           << (r.ok ? "" : " (" + r.detail + ")") << "; ";
    ok = ok && r.ok && r.acked > 1;
  }

  TempDir d;
  ChildProcess server({kCli, "serve", "--stub", "--port", "0", "--threads", "1", "--scene-dir", d.path.string()});
  const int port = wait_for_listening(server, 10000);
  if (port < 0) return {false, "server did not start"};
  httplib::Client client("127.0.0.1", port);
  client.Put("/v1/scene/room", serialize_scene(three_box_scene()), "application/json");
  int rounds_ok = 0;
  constexpr int kRounds = 20;
  for (std::uint64_t rev = 1; rev <= kRounds; ++rev) {
    std::vector<int> status(2, 0);
    std::vector<std::thread> threads;
    for (int t = 0; t < 2; ++t) {
      threads.emplace_back([&, t] {
        httplib::Client c("127.0.0.1", port);
        const json body{{"revision", rev}, {"ops", {edit_to_json(SetSeed{rev * 10 + t})}}};
        const auto res = c.Post("/v1/scene/room/edit", body.dump(), "application/json");
        status[t] = res ? res->status : -1;
      });
    }
    for (auto& t : threads) t.join();
    std::sort(status.begin(), status.end());
    rounds_ok += status == std::vector<int>{200, 409};
  }
  server.signal(SIGTERM);
  server.wait();
  detail << rounds_ok << "/" << kRounds << " concurrent edit pairs gave exactly one 409";
  return {ok && rounds_ok == kRounds, detail.str()};
}
#else
Outcome determinism() { return {false, "CLI not built (configure with B2W_BUILD_TOOLS=ON)"}; }
Outcome service_integrity() { return {false, "CLI not built (configure with B2W_BUILD_TOOLS=ON)"}; }
#endif

Outcome protocol_fuzz() {
  Rng rng(909);
  int lossless = 0;
  for (int i = 0; i < kFuzzRequests; ++i) {
    const RenderRequest req = random_render_request(rng);
    const std::string bytes = encode_request(req);
    const RenderRequest back = decode_request(bytes);
    lossless += back == req && encode_request(back) == bytes;
  }
  // Malformed envelopes: each must raise b2w::Error with the expected code.
  const json good = json::parse(encode_request(random_render_request(rng)));
  auto edited = [&](auto f) {
    json j = good;
    f(j);
    return j.dump();
  };
  const std::vector<std::pair<std::string, b2w::Errc>> malformed = {
      {"{", Errc::parse_error},
      {"[]", Errc::parse_error},
      {edited([](json& j) { j["version"] = "b2w/0"; }), Errc::version_mismatch},
      {edited([](json& j) { j.erase("depth_b64"); }), Errc::missing_field},
      {edited([](json& j) { j["extra"] = true; }), Errc::unknown_field},
      {edited([](json& j) { j["width"] = j["width"].get<int>() + 1; }), Errc::dimension_mismatch},
      {edited([](json& j) { j["depth_b64"] = "!!"; }), Errc::parse_error},
      {edited([](json& j) { j["depth_b64"] = base64_encode("B2WD\x01"); }), Errc::truncated},
      {edited([](json& j) { j["seed"] = "7"; }), Errc::parse_error},
      {edited([](json& j) { j["badge_image_b64"] = "AAAA"; j.erase("badge_mask_b64"); }), Errc::missing_field},
  };
  int typed = 0;
  for (const auto& [bytes, code] : malformed) {
    try {
      decode_request(bytes);
    } catch (const Error& e) {
      typed += e.code() == code;
    } catch (...) {
    }
  }
  // Random corruption: never anything but b2w::Error.
  int untyped = 0;
  for (int i = 0; i < kFuzzRequests; ++i) {
    std::string bytes = encode_request(random_render_request(rng, 8));
    bytes[rng() % bytes.size()] = static_cast<char>(rng() & 0xff);
    if (i % 2) bytes.resize(rng() % bytes.size());
    try {
      decode_request(bytes);
    } catch (const Error&) {
    } catch (...) {
      ++untyped;
    }
  }
  Outcome o;
  o.pass = lossless == kFuzzRequests && typed == static_cast<int>(malformed.size()) && untyped == 0;
  o.detail = std::to_string(lossless) + "/" + std::to_string(kFuzzRequests) + " round trips lossless; " +
             std::to_string(typed) + "/" + std::to_string(malformed.size()) + " malformed envelopes gave the expected code; " +
             std::to_string(untyped) + " untyped failures in " + std::to_string(kFuzzRequests) + " corrupted requests";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"ray-intersection oracle", ray_oracle},
      {"gradient check", gradient_check},
      {"decomposition recovery", decomposition_recovery},
      {"metrics exactness", metrics_exactness},
      {"scale-shift optimality", scale_shift_optimality},
      {"bAcc arithmetic", balanced_accuracy},
      {"edit locality", edit_locality},
      {"determinism", determinism},
      {"protocol fuzz", protocol_fuzz},
      {"service integrity", service_integrity},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

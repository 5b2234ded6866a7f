#include <benchmark/benchmark.h>

#include <random>

#include "b2w/decomposer.hpp"
#include "b2w/metrics.hpp"
#include "b2w/raytracer.hpp"
#include "b2w/render_bridge.hpp"
#include "b2w/scene.hpp"

using namespace b2w;

namespace {

Scene room(int size) {
  const double f = 60.0 * size / 64.0;
  const double c = (size - 1) / 2.0;
  const Camera cam = Camera::create(f, f, c, c, size, size, Pose{});
  return Scene::create({make_box("wall", Vec3(0, 0, 4.2), Vec3(3, 3, 0.2)),
                        make_box("floor", Vec3(0, 1.2, 2.6), Vec3(2, 0.2, 1.4)),
                        make_box("cube", Vec3(-0.3, 0.4, 2.4), Vec3(0.4, 0.4, 0.4))},
                       cam, "bench", 1);
}

void BM_RenderDepth(benchmark::State& state) {
  const Scene s = room(static_cast<int>(state.range(0)));
  const RenderOptions opt{static_cast<unsigned>(state.range(1))};
  for (auto _ : state) benchmark::DoNotOptimize(render_depth(s, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_RenderDepth)->Args({64, 1})->Args({256, 1})->Args({256, 4})->Unit(benchmark::kMillisecond);

void BM_FitLoss(benchmark::State& state) {
  const Scene s = room(64);
  FitConfig cfg;
  cfg.near_surface_samples = static_cast<std::size_t>(state.range(0)) / 2;
  cfg.volume_samples = static_cast<std::size_t>(state.range(0)) / 2;
  cfg.threads = 1;
  const auto samples = sample_labels(render_depth(s).depth, s.camera(), cfg, 1);
  for (auto _ : state) benchmark::DoNotOptimize(fit_loss(s.primitives(), samples, cfg, true));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(samples.size()));
}
BENCHMARK(BM_FitLoss)->Arg(4000)->Arg(40000)->Unit(benchmark::kMillisecond);

void BM_IntersectConvex(benchmark::State& state) {
  const ConvexPrimitive box = make_box("b", Vec3(0, 0, 3), Vec3(0.5, 0.7, 0.4));
  std::mt19937_64 rng(1);
  std::vector<Ray> rays;
  for (int i = 0; i < 1024; ++i) {
    rays.push_back(Ray::make(Vec3::Zero(), Vec3(uniform01(rng) - 0.5, uniform01(rng) - 0.5, 1.0).normalized()));
  }
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(intersect_convex(rays[i++ & 1023], box));
}
BENCHMARK(BM_IntersectConvex);

void BM_EncodeDecodeRequest(benchmark::State& state) {
  const Scene s = room(static_cast<int>(state.range(0)));
  RenderRequest req{"bench", 1, s.camera().width(), s.camera().height(), render_depth(s).depth, std::nullopt, nullptr};
  for (auto _ : state) benchmark::DoNotOptimize(decode_request(encode_request(req)));
}
BENCHMARK(BM_EncodeDecodeRequest)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_DepthErrorsAligned(benchmark::State& state) {
  const Scene s = room(256);
  const DepthMap ref = render_depth(s).depth;
  DepthMap pred = ref;
  for (double& x : pred.data) x = 0.8 * x + 0.1;
  for (auto _ : state) benchmark::DoNotOptimize(depth_errors(pred, ref, true));
}
BENCHMARK(BM_DepthErrorsAligned)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

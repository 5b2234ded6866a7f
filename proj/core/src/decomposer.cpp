#include "b2w/decomposer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "b2w/error.hpp"
#include "b2w/scene_io.hpp"

namespace b2w {
namespace {

using nlohmann::json;

constexpr const char* kModule = "decomposer";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

// Flat [nx, ny, nz, d] view of a convex set, the layout the optimiser works in.
std::vector<double> flatten(std::span<const Faces> shapes) {
  std::vector<double> out;
  for (const Faces& f : shapes) {
    for (const Halfspace& h : f) {
      out.insert(out.end(), {h.normal.x(), h.normal.y(), h.normal.z(), h.offset});
    }
  }
  return out;
}

void unflatten(std::span<const double> flat, std::vector<Faces>& shapes) {
  std::size_t i = 0;
  for (Faces& f : shapes) {
    for (Halfspace& h : f) {
      h.normal = Vec3(flat[i], flat[i + 1], flat[i + 2]);
      h.offset = flat[i + 3];
      i += 4;
    }
  }
}

void project_unit_normals(std::vector<Faces>& shapes) {
  for (Faces& f : shapes) {
    for (Halfspace& h : f) {
      const double len = h.normal.norm();
      if (len > 0.0 && std::isfinite(len)) {
        h.normal /= len;
        h.offset /= len;
      }
    }
  }
}

double accuracy_of(std::span<const Faces> shapes, std::span<const LabeledSample> samples, const FitConfig& cfg) {
  if (samples.empty()) return 1.0;
  std::size_t correct = 0;
  for (const LabeledSample& s : samples) {
    const double u = shapes.empty() ? 0.0 : union_occupancy(shapes, s.position, cfg.sharpness, cfg.gain);
    if ((u > 0.5) == (s.label == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double squared_distance(const Vec3& a, const Vec3& b) { return (a - b).squaredNorm(); }

}  // namespace

void FitConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(Errc::invalid_argument, std::string("fit config: ") + name + " must be positive");
  };
  if (budget < 1) fail(Errc::invalid_argument, "fit config: budget must be at least 1");
  positive(sharpness, "sharpness");
  positive(gain, "gain");
  positive(surface_band, "surface_band");
  positive(step_size, "step_size");
  positive(adam_epsilon, "adam_epsilon");
  positive(prune_threshold, "prune_threshold");
  positive(back_margin, "back_margin");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    fail(Errc::invalid_argument, "fit config: beta1 and beta2 must lie in (0, 1)");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    fail(Errc::invalid_argument, "fit config: holdout_fraction must lie in [0, 1)");
  }
  if (!(overlap_weight >= 0.0) || !(volume_weight >= 0.0)) {
    fail(Errc::invalid_argument, "fit config: loss weights must be non-negative");
  }
  if (near_surface_samples + volume_samples == 0) fail(Errc::invalid_argument, "fit config: sample counts are both zero");
}

json fit_config_to_json(const FitConfig& c) {
  return json{{"budget", c.budget},
              {"sharpness", c.sharpness},
              {"gain", c.gain},
              {"surface_band", c.surface_band},
              {"near_surface_samples", c.near_surface_samples},
              {"volume_samples", c.volume_samples},
              {"step_size", c.step_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_epsilon", c.adam_epsilon},
              {"iterations", c.iterations},
              {"prune_threshold", c.prune_threshold},
              {"overlap_weight", c.overlap_weight},
              {"volume_weight", c.volume_weight},
              {"back_margin", c.back_margin},
              {"holdout_fraction", c.holdout_fraction},
              {"threads", c.threads}};
}

FitConfig fit_config_from_json(const json& j) {
  json_util::expect_keys(j, "fit config", {},
                         {"budget", "sharpness", "gain", "surface_band", "near_surface_samples", "volume_samples",
                          "step_size", "beta1", "beta2", "adam_epsilon", "iterations", "prune_threshold",
                          "overlap_weight", "volume_weight", "back_margin", "holdout_fraction", "threads"},
                         kModule);
  FitConfig c;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(Errc::parse_error, std::string("fit config: ") + key + " must be a number");
    } else {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) fail(Errc::parse_error, std::string("fit config: ") + key + " must be a non-negative integer");
    }
    field = v.get<T>();
  };
  read("budget", c.budget);
  read("sharpness", c.sharpness);
  read("gain", c.gain);
  read("surface_band", c.surface_band);
  read("near_surface_samples", c.near_surface_samples);
  read("volume_samples", c.volume_samples);
  read("step_size", c.step_size);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("adam_epsilon", c.adam_epsilon);
  read("iterations", c.iterations);
  read("prune_threshold", c.prune_threshold);
  read("overlap_weight", c.overlap_weight);
  read("volume_weight", c.volume_weight);
  read("back_margin", c.back_margin);
  read("holdout_fraction", c.holdout_fraction);
  read("threads", c.threads);
  c.validate();
  return c;
}

double back_plane_depth(const DepthMap& depth, const FitConfig& cfg) {
  double deepest = 0.0;
  bool any = false;
  for (double d : depth.data) {
    if (std::isfinite(d)) {
      deepest = std::max(deepest, d);
      any = true;
    }
  }
  if (!any) fail(Errc::invalid_argument, "depth map has no finite pixels");
  return deepest + cfg.back_margin;
}

std::uint8_t volume_label(const DepthMap& depth, const Camera& camera, double back_plane, const Vec3& world) {
  const Vec3 p = camera.pose().inverse_apply(world);
  if (!(p.z() > 0.0)) return 0;
  const double a = camera.fx() * p.x() / p.z() + camera.cx();
  const double b = camera.fy() * p.y() / p.z() + camera.cy();
  if (!(a >= 0.0 && a < depth.width && b >= 0.0 && b < depth.height)) return 0;
  const double surface = depth.at(static_cast<int>(a), static_cast<int>(b));
  if (!std::isfinite(surface)) return 0;
  return (p.z() >= surface && p.z() <= back_plane) ? 1 : 0;
}

std::vector<LabeledSample> sample_labels(const DepthMap& depth, const Camera& camera, const FitConfig& cfg,
                                         std::uint64_t seed) {
  cfg.validate();
  validate_depth(depth);
  if (!depth.same_shape(camera.width(), camera.height())) {
    fail(Errc::dimension_mismatch, "depth map and camera raster sizes differ");
  }
  const double back = back_plane_depth(depth, cfg);
  std::vector<std::size_t> finite;
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (std::isfinite(depth.data[i])) {
      finite.push_back(i);
      nearest = std::min(nearest, depth.data[i]);
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<LabeledSample> samples;
  samples.reserve(cfg.near_surface_samples + cfg.volume_samples);
  auto emit = [&](double a, double b, double z) {
    const Vec3 cam((a - camera.cx()) / camera.fx() * z, (b - camera.cy()) / camera.fy() * z, z);
    const Vec3 world = camera.pose().apply(cam);
    samples.push_back(LabeledSample{world, volume_label(depth, camera, back, world)});
  };

  for (std::size_t s = 0; s < cfg.near_surface_samples; ++s) {
    const std::size_t idx = finite[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(finite.size()))];
    const int u = static_cast<int>(idx % static_cast<std::size_t>(depth.width));
    const int v = static_cast<int>(idx / static_cast<std::size_t>(depth.width));
    const double a = u + uniform01(rng);
    const double b = v + uniform01(rng);
    const double sign = (rng() & 1u) ? 1.0 : -1.0;
    emit(a, b, depth.data[idx] + sign * cfg.surface_band);
  }

  // Uniform over a frustum box slightly wider than the image and reaching past
  // the back plane, so the lateral and back boundaries are sampled as outside.
  const double z_lo = 0.5 * nearest;
  const double z_hi = back + cfg.back_margin;
  const double pad_u = 0.1 * depth.width;
  const double pad_v = 0.1 * depth.height;
  for (std::size_t s = 0; s < cfg.volume_samples; ++s) {
    const double a = -pad_u + uniform01(rng) * (depth.width + 2 * pad_u);
    const double b = -pad_v + uniform01(rng) * (depth.height + 2 * pad_v);
    const double z = z_lo + uniform01(rng) * (z_hi - z_lo);
    emit(a, b, z);
  }
  return samples;
}

SeedResult seed_primitives(std::span<const LabeledSample> samples, std::size_t budget, std::uint64_t seed,
                           double min_half_extent) {
  if (budget < 1) fail(Errc::invalid_argument, "seed budget must be at least 1");
  std::vector<Vec3> pts;
  for (const LabeledSample& s : samples) {
    if (s.label == 1) pts.push_back(s.position);
  }
  if (pts.empty()) fail(Errc::invalid_argument, "no inside-labelled samples to seed from");

  SeedResult result;
  std::size_t k = budget;
  if (pts.size() < budget) {
    k = pts.size();
    result.warnings.push_back("only " + std::to_string(pts.size()) + " inside samples; seeding " + std::to_string(k) +
                              " convexes instead of " + std::to_string(budget));
  }

  // k-means++ initialisation.
  std::mt19937_64 rng(seed);
  std::vector<Vec3> centers;
  centers.push_back(pts[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pts.size()))]);
  std::vector<double> nearest(pts.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(pts[i], centers.back()));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = uniform01(rng) * total;
      double cum = 0.0;
      pick = pts.size() - 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        cum += nearest[i];
        if (cum > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = centers.size() % pts.size();
    }
    centers.push_back(pts[pick]);
  }

  // Lloyd iterations.
  std::vector<std::size_t> assign(pts.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(pts[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(pts[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vec3> sum(k, Vec3::Zero());
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[assign[i]] += pts[i];
      ++count[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers[c] = sum[c] / static_cast<double>(count[c]);
        continue;
      }
      // Empty cluster: move it to the point farthest from its own centre.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = squared_distance(pts[i], centers[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers[c] = pts[far];
      assign[far] = c;
    }
  }

  std::vector<Vec3> mean(k, Vec3::Zero());
  std::vector<Vec3> sq(k, Vec3::Zero());
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    mean[assign[i]] += pts[i];
    ++count[assign[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] > 0) mean[c] /= static_cast<double>(count[c]);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) sq[assign[i]] += (pts[i] - mean[assign[i]]).cwiseAbs2();
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0) {
      mean[c] = centers[c];
      continue;
    }
    const Vec3 stddev = (sq[c] / static_cast<double>(count[c])).cwiseSqrt();
    const Vec3 half = (1.5 * stddev).cwiseMax(min_half_extent);
    result.primitives.push_back(make_box("p" + std::to_string(result.primitives.size()), mean[c], half));
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0) {
      result.primitives.push_back(
          make_box("p" + std::to_string(result.primitives.size()), mean[c], Vec3::Constant(min_half_extent)));
    }
  }
  return result;
}

double classification_accuracy(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                               const FitConfig& cfg) {
  std::vector<Faces> shapes;
  for (const ConvexPrimitive& p : primitives) shapes.push_back(p.halfspaces());
  return accuracy_of(shapes, samples, cfg);
}

PolishResult polish(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                    const FitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (samples.empty()) fail(Errc::invalid_argument, "polish needs at least one sample");

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
  }
  std::size_t n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(samples.size())));
  if (n_hold >= samples.size()) n_hold = 0;
  std::vector<LabeledSample> holdout;
  std::vector<LabeledSample> train;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? holdout : train).push_back(samples[order[i]]);
  const std::vector<LabeledSample>& eval_set = holdout.empty() ? train : holdout;

  std::vector<Faces> shapes;
  for (const ConvexPrimitive& p : primitives) shapes.push_back(p.halfspaces());

  PolishResult result;
  FitReport& report = result.report;
  report.train_samples = train.size();
  report.holdout_samples = holdout.size();
  report.entry_holdout_accuracy = accuracy_of(shapes, eval_set, cfg);

  std::vector<double> theta = flatten(shapes);
  std::vector<double> best_theta = theta;
  std::vector<double> m1(theta.size(), 0.0);
  std::vector<double> m2(theta.size(), 0.0);
  double best_loss = std::numeric_limits<double>::infinity();
  double b1t = 1.0;
  double b2t = 1.0;

  std::size_t step = 0;
  for (;; ++step) {
    const LossEval eval = fit_loss(shapes, train, cfg, step < cfg.iterations);
    if (step == 0) report.entry_loss = eval.terms.total;
    if (!std::isfinite(eval.terms.total)) {
      report.diverged = true;
      report.warnings.push_back("loss became non-finite at iteration " + std::to_string(step) +
                                "; keeping the last finite iterate");
      break;
    }
    if (eval.terms.total < best_loss) {
      best_loss = eval.terms.total;
      best_theta = theta;
    }
    if (step >= cfg.iterations) break;

    const std::vector<double> g = flatten(eval.gradient);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m1[i] / (1.0 - b1t);
      const double vhat = m2[i] / (1.0 - b2t);
      theta[i] -= cfg.step_size * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
    unflatten(theta, shapes);
    project_unit_normals(shapes);
    theta = flatten(shapes);
  }
  report.iterations = std::min(step, cfg.iterations);
  report.descent_loss = std::isfinite(best_loss) ? best_loss : report.entry_loss;
  unflatten(best_theta, shapes);

  // Unique coverage over training inside samples.
  const std::size_t K = shapes.size();
  std::vector<std::size_t> unique(K, 0);
  std::size_t inside = 0;
  for (const LabeledSample& s : train) {
    if (s.label != 1) continue;
    ++inside;
    std::size_t covering = 0;
    std::size_t who = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (smooth_occupancy(shapes[k], s.position, cfg.sharpness, cfg.gain) > 0.5) {
        ++covering;
        who = k;
      }
    }
    if (covering == 1) ++unique[who];
  }

  for (std::size_t k = 0; k < K; ++k) {
    const std::string& id = primitives[k].id();
    const double frac = inside == 0 ? 0.0 : static_cast<double>(unique[k]) / static_cast<double>(inside);
    report.coverage.push_back(ConvexCoverage{id, frac});
    if (frac < cfg.prune_threshold) {
      report.pruned_ids.push_back(id);
      continue;
    }
    std::vector<Halfspace> faces;
    bool ok = true;
    for (const Halfspace& h : shapes[k]) {
      const double len = h.normal.norm();
      if (!(len > 0.0) || !std::isfinite(len) || !std::isfinite(h.offset)) {
        ok = false;
        break;
      }
      faces.push_back(Halfspace{h.normal / len, h.offset / len});
    }
    try {
      if (!ok) fail(Errc::degenerate, "non-finite face parameters");
      result.primitives.push_back(ConvexPrimitive::create(id, std::move(faces), primitives[k].label()));
    } catch (const Error& e) {
      report.pruned_ids.push_back(id);
      report.warnings.push_back("pruned '" + id + "': " + e.what());
    }
  }

  std::vector<Faces> kept;
  for (const ConvexPrimitive& p : result.primitives) kept.push_back(p.halfspaces());
  report.final_loss = fit_loss(kept, train, cfg, false).terms.total;
  report.holdout_accuracy = accuracy_of(kept, eval_set, cfg);
  return result;
}

Decomposition decompose(const DepthMap& depth, const Camera& camera, const FitConfig& cfg, std::uint64_t seed) {
  const std::vector<LabeledSample> samples = sample_labels(depth, camera, cfg, seed);
  SeedResult seeds = seed_primitives(samples, cfg.budget, seed, cfg.surface_band);
  PolishResult polished = polish(seeds.primitives, samples, cfg, seed);
  polished.report.warnings.insert(polished.report.warnings.begin(), seeds.warnings.begin(), seeds.warnings.end());
  Scene scene = Scene::create(std::move(polished.primitives), camera, "", seed, cfg.budget);
  return Decomposition{std::move(scene), std::move(polished.report)};
}

json fit_report_to_json(const FitReport& r) {
  json coverage = json::array();
  for (const ConvexCoverage& c : r.coverage) coverage.push_back(json{{"id", c.id}, {"unique_fraction", c.unique_fraction}});
  return json{{"version", kFormatVersion},
              {"entry_loss", r.entry_loss},
              {"descent_loss", r.descent_loss},
              {"final_loss", r.final_loss},
              {"coverage", coverage},
              {"pruned_ids", r.pruned_ids},
              {"iterations", r.iterations},
              {"entry_holdout_accuracy", r.entry_holdout_accuracy},
              {"holdout_accuracy", r.holdout_accuracy},
              {"train_samples", r.train_samples},
              {"holdout_samples", r.holdout_samples},
              {"diverged", r.diverged},
              {"warnings", r.warnings}};
}

}  // namespace b2w

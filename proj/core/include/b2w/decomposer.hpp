#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "b2w/raster.hpp"
#include "b2w/scene.hpp"

namespace b2w {

struct LabeledSample {
  Vec3 position = Vec3::Zero();
  std::uint8_t label = 0;  // 1 = inside the solid, 0 = outside

  bool operator==(const LabeledSample& o) const { return position == o.position && label == o.label; }
};

struct FitConfig {
  std::size_t budget = kDefaultBudget;
  double sharpness = 75.0;      // delta, log-sum-exp smooth max over faces
  double gain = 75.0;           // sigma, sigmoid slope of the indicator
  double surface_band = 0.05;   // metres either side of the depth surface
  std::size_t near_surface_samples = 60000;
  std::size_t volume_samples = 60000;
  double step_size = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t iterations = 2000;
  double prune_threshold = 0.002;
  double overlap_weight = 0.01;
  double volume_weight = 1e-4;
  double back_margin = 0.5;       // back plane sits this far beyond the deepest pixel
  double holdout_fraction = 0.1;
  unsigned threads = 0;           // 0 = hardware concurrency; results do not depend on it

  // Throws unless every knob is positive (weights and threads may be zero) and budget >= 1.
  void validate() const;
};

nlohmann::json fit_config_to_json(const FitConfig& cfg);
// Every key is optional; unknown keys are rejected.
FitConfig fit_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Labelled samples from a depth map treated as a volume: the solid is the set
// of points whose camera z lies between the surface and the back plane,
// within the lateral frustum.

double back_plane_depth(const DepthMap& depth, const FitConfig& cfg);
std::uint8_t volume_label(const DepthMap& depth, const Camera& camera, double back_plane, const Vec3& world);

std::vector<LabeledSample> sample_labels(const DepthMap& depth, const Camera& camera, const FitConfig& cfg,
                                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Smooth occupancy. Raw face parameters are optimised directly, so normals in
// a Faces list need not be unit length.

using Faces = std::vector<Halfspace>;

// LogSumExp smooth max of the face distances, (1/sharpness) log sum exp(sharpness (n.x - d)).
double smooth_distance(std::span<const Halfspace> faces, const Vec3& x, double sharpness);
// sigmoid(-gain * smooth_distance), kept strictly inside (0, 1).
double smooth_occupancy(std::span<const Halfspace> faces, const Vec3& x, double sharpness, double gain);
double smooth_occupancy(const ConvexPrimitive& p, const Vec3& x, double sharpness, double gain);
// 1 - prod_k (1 - occupancy_k), kept strictly inside (0, 1).
double union_occupancy(std::span<const ConvexPrimitive> primitives, const Vec3& x, double sharpness, double gain);
double union_occupancy(std::span<const Faces> shapes, const Vec3& x, double sharpness, double gain);

// Axis-aligned bounding-box volume of one convex and its sensitivity to every
// face parameter (LP duals at the six extreme vertices). valid = false when
// the faces do not bound a non-empty set; volume and gradient are then zero.
struct VolumeEstimate {
  bool valid = false;
  double volume = 0.0;
  Faces gradient;
};
VolumeEstimate estimate_volume(std::span<const Halfspace> faces);

struct LossTerms {
  double mse = 0.0;
  double overlap = 0.0;  // mean over samples of sum_{k<l} occupancy_k occupancy_l (unweighted)
  double volume = 0.0;   // sum over convexes of the box volume (unweighted)
  double total = 0.0;    // mse + overlap_weight * overlap + volume_weight * volume
};

struct LossEval {
  LossTerms terms;
  std::vector<Faces> gradient;  // same shape as the input; normal holds dL/dn, offset dL/dd
};

// Sample-parallel with a fixed chunk size and ordered reduction, so the result
// is bit-identical for any thread count.
LossEval fit_loss(std::span<const Faces> shapes, std::span<const LabeledSample> samples, const FitConfig& cfg,
                  bool with_gradient = true);
LossEval fit_loss(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                  const FitConfig& cfg, bool with_gradient = true);

// ---------------------------------------------------------------------------

struct SeedResult {
  std::vector<ConvexPrimitive> primitives;
  std::vector<std::string> warnings;
};

// k-means over inside samples; each cluster becomes an axis-aligned box at the
// cluster mean with half-extents 1.5 x per-axis standard deviation, floored at
// min_half_extent. Ids are "p0", "p1", ...
SeedResult seed_primitives(std::span<const LabeledSample> samples, std::size_t budget, std::uint64_t seed,
                           double min_half_extent);

struct ConvexCoverage {
  std::string id;
  double unique_fraction = 0.0;
};

struct FitReport {
  double entry_loss = 0.0;
  double descent_loss = 0.0;  // best loss reached by descent over the full convex set
  double final_loss = 0.0;    // loss of the returned (pruned) convex set
  std::vector<ConvexCoverage> coverage;
  std::vector<std::string> pruned_ids;
  std::size_t iterations = 0;
  double entry_holdout_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::size_t train_samples = 0;
  std::size_t holdout_samples = 0;
  bool diverged = false;
  std::vector<std::string> warnings;
};

nlohmann::json fit_report_to_json(const FitReport& report);

struct PolishResult {
  std::vector<ConvexPrimitive> primitives;
  FitReport report;
};

// Adam descent on fit_loss with per-step projection of normals to unit length,
// then pruning of convexes whose unique coverage of inside samples is below
// cfg.prune_threshold or that no longer bound a non-empty volume.
// `seed` drives the held-out split.
PolishResult polish(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                    const FitConfig& cfg, std::uint64_t seed = 0);

struct Decomposition {
  Scene scene;
  FitReport report;
};

// sample_labels -> seed_primitives -> polish.
Decomposition decompose(const DepthMap& depth, const Camera& camera, const FitConfig& cfg, std::uint64_t seed);

// Fraction of samples for which union occupancy > 0.5 matches the label.
double classification_accuracy(std::span<const ConvexPrimitive> primitives, std::span<const LabeledSample> samples,
                               const FitConfig& cfg);

// Portable uniform double in [0, 1) from a 64-bit engine.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace b2w

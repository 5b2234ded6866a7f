#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "b2w/raster.hpp"
#include "b2w/scene.hpp"

namespace b2w {

inline constexpr int kDefaultRenderWidth = 704;
inline constexpr int kDefaultRenderHeight = 512;
// Hits closer than this (camera inside a primitive) are stored at this depth
// so that rendered depth stays strictly positive.
inline constexpr double kMinRenderDepth = 1e-3;

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  // Requires |direction| = 1 within kUnitTolerance.
  static Ray make(const Vec3& origin, const Vec3& direction);
};

// Parametric interval of the ray inside a convex, t_near >= 0.
struct Interval {
  double t_near = 0.0;
  double t_far = 0.0;
};

// Ray through the centre of pixel (u, v), in world coordinates.
Ray pixel_ray(const Camera& camera, int u, int v);

// Continuous pixel coordinates (pixel (u, v) spans [u, u+1) x [v, v+1)) and
// camera-frame z of a world point.
struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};
Projection project(const Camera& camera, const Vec3& world);

// Generalised slab clipping over the halfspaces. nullopt when the ray misses or
// the whole interval lies behind the origin.
std::optional<Interval> intersect_halfspaces(const Ray& ray, std::span<const Halfspace> halfspaces);
std::optional<Interval> intersect_convex(const Ray& ray, const ConvexPrimitive& primitive);

struct RenderOptions {
  unsigned threads = 0;
};

struct DepthRender {
  DepthMap depth;  // camera-frame z of the nearest hit, float32-representable
  IdBuffer ids;    // index into scene.primitives() of the nearest hit
};

// Ties in t_near resolve to the lexicographically smallest primitive id, so
// the output does not depend on primitive order.
DepthRender render_depth(const Scene& scene, const RenderOptions& options = {});

// Pixels whose rays hit any of the named primitives, ignoring occlusion.
Mask silhouette(const Scene& scene, const std::vector<std::string>& ids, const RenderOptions& options = {});

// World points for every finite pixel, in row-major pixel order.
std::vector<Vec3> unproject(const DepthMap& depth, const Camera& camera);

}  // namespace b2w

#include "b2w/raytracer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "b2w/error.hpp"
#include "b2w/parallel.hpp"

namespace b2w {
namespace {

constexpr const char* kModule = "raytracer";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

// Un-normalised camera-frame direction through the pixel centre (z = 1).
Vec3 camera_direction(const Camera& c, int u, int v) {
  return Vec3((u + 0.5 - c.cx()) / c.fx(), (v + 0.5 - c.cy()) / c.fy(), 1.0);
}

template <typename Fn>
void for_each_row(const Camera& camera, unsigned threads, Fn&& fn) {
  parallel_for(static_cast<std::size_t>(camera.height()), threads, [&](std::size_t row) { fn(static_cast<int>(row)); });
}

}  // namespace

Ray Ray::make(const Vec3& origin, const Vec3& direction) {
  if (!origin.allFinite() || !direction.allFinite()) fail(Errc::invalid_argument, "ray has non-finite components");
  if (std::abs(direction.norm() - 1.0) > kUnitTolerance) fail(Errc::invalid_argument, "ray direction must be unit length");
  return Ray{origin, direction};
}

Ray pixel_ray(const Camera& camera, int u, int v) {
  if (u < 0 || u >= camera.width() || v < 0 || v >= camera.height()) {
    std::ostringstream os;
    os << "pixel (" << u << ", " << v << ") outside " << camera.width() << "x" << camera.height() << " raster";
    fail(Errc::invalid_argument, os.str());
  }
  const Vec3 dir = camera_direction(camera, u, v).normalized();
  return Ray{camera.center(), camera.pose().rotation * dir};
}

Projection project(const Camera& camera, const Vec3& world) {
  const Vec3 p = camera.pose().inverse_apply(world);
  return Projection{camera.fx() * p.x() / p.z() + camera.cx(), camera.fy() * p.y() / p.z() + camera.cy(), p.z()};
}

std::optional<Interval> intersect_halfspaces(const Ray& ray, std::span<const Halfspace> halfspaces) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (const Halfspace& h : halfspaces) {
    const double denom = h.normal.dot(ray.direction);
    const double dist = h.offset - h.normal.dot(ray.origin);  // >= 0 when origin is inside
    if (denom == 0.0) {
      if (dist < 0.0) return std::nullopt;
      continue;
    }
    const double t = dist / denom;
    if (denom > 0.0) {
      t_far = std::min(t_far, t);
    } else {
      t_near = std::max(t_near, t);
    }
    if (t_near > t_far) return std::nullopt;
  }
  if (t_far < 0.0) return std::nullopt;
  return Interval{std::max(t_near, 0.0), t_far};
}

std::optional<Interval> intersect_convex(const Ray& ray, const ConvexPrimitive& primitive) {
  return intersect_halfspaces(ray, primitive.halfspaces());
}

DepthRender render_depth(const Scene& scene, const RenderOptions& options) {
  const Camera& cam = scene.camera();
  DepthRender out{DepthMap(cam.width(), cam.height(), kNoHit), IdBuffer(cam.width(), cam.height(), kNoPrimitive)};
  const auto& prims = scene.primitives();
  const Mat3& rot = cam.pose().rotation;
  for_each_row(cam, options.threads, [&](int v) {
    for (int u = 0; u < cam.width(); ++u) {
      const Vec3 c = camera_direction(cam, u, v);
      const double len = c.norm();
      const Ray ray{cam.center(), rot * (c / len)};
      double best_t = std::numeric_limits<double>::infinity();
      std::int32_t best = kNoPrimitive;
      for (std::size_t k = 0; k < prims.size(); ++k) {
        const auto hit = intersect_convex(ray, prims[k]);
        if (!hit) continue;
        if (hit->t_near < best_t || (hit->t_near == best_t && prims[k].id() < prims[static_cast<std::size_t>(best)].id())) {
          best_t = hit->t_near;
          best = static_cast<std::int32_t>(k);
        }
      }
      if (best == kNoPrimitive) continue;
      const double z = std::max(best_t / len, kMinRenderDepth);
      out.depth.at(u, v) = static_cast<double>(static_cast<float>(z));
      out.ids.at(u, v) = best;
    }
  });
  return out;
}

Mask silhouette(const Scene& scene, const std::vector<std::string>& ids, const RenderOptions& options) {
  std::vector<const ConvexPrimitive*> selected;
  for (const std::string& id : ids) {
    const ConvexPrimitive* p = scene.find(id);
    if (!p) fail(Errc::unknown_id, "silhouette of unknown primitive '" + id + "'");
    selected.push_back(p);
  }
  const Camera& cam = scene.camera();
  Mask mask(cam.width(), cam.height());
  if (selected.empty()) return mask;
  for_each_row(cam, options.threads, [&](int v) {
    for (int u = 0; u < cam.width(); ++u) {
      const Ray ray = pixel_ray(cam, u, v);
      for (const ConvexPrimitive* p : selected) {
        if (intersect_convex(ray, *p)) {
          mask.at(u, v) = 1;
          break;
        }
      }
    }
  });
  return mask;
}

std::vector<Vec3> unproject(const DepthMap& depth, const Camera& camera) {
  if (!depth.same_shape(camera.width(), camera.height())) {
    std::ostringstream os;
    os << "depth is " << depth.width << "x" << depth.height << " but camera raster is " << camera.width() << "x"
       << camera.height();
    fail(Errc::dimension_mismatch, os.str());
  }
  std::vector<Vec3> points;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (!std::isfinite(d)) continue;
      points.push_back(camera.pose().apply(d * camera_direction(camera, u, v)));
    }
  }
  return points;
}

}  // namespace b2w

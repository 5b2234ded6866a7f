#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace b2w {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kDefaultBudget = 24;
inline constexpr double kUnitTolerance = 1e-9;

// Point x is inside iff normal.x - offset <= 0.
struct Halfspace {
  Vec3 normal = Vec3::UnitX();
  double offset = 0.0;

  // Requires |normal| = 1 within kUnitTolerance.
  static Halfspace make(const Vec3& normal, double offset);
  // Scales (normal, offset) so the normal is unit length; the set is unchanged.
  static Halfspace normalized(const Vec3& normal, double offset);

  double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }

  bool operator==(const Halfspace& o) const { return normal == o.normal && offset == o.offset; }
};

struct Bounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 extent() const { return hi - lo; }
  double volume() const { return extent().prod(); }
};

// Axis-aligned bounds of a halfspace intersection from six LPs; nullopt when
// the set is empty or unbounded.
std::optional<Bounds> bounding_box(std::span<const Halfspace> halfspaces);

// Radius of the largest ball inside the intersection (Chebyshev centre LP),
// capped at 1. Zero or negative means the set has no interior.
double inscribed_radius(std::span<const Halfspace> halfspaces);

class ConvexPrimitive {
 public:
  // Validates: at least 4 halfspaces, unit normals, non-empty interior, bounded.
  static ConvexPrimitive create(std::string id, std::vector<Halfspace> halfspaces,
                                std::optional<std::string> label = std::nullopt);

  const std::string& id() const { return id_; }
  const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }
  const std::optional<std::string>& label() const { return label_; }
  const Bounds& bounds() const { return bounds_; }

  bool contains(const Vec3& x) const;

  ConvexPrimitive translated(const Vec3& delta) const;
  ConvexPrimitive with_id(std::string id) const;

  bool operator==(const ConvexPrimitive& o) const {
    return id_ == o.id_ && label_ == o.label_ && halfspaces_ == o.halfspaces_;
  }

 private:
  ConvexPrimitive() = default;

  std::string id_;
  std::vector<Halfspace> halfspaces_;
  std::optional<std::string> label_;
  Bounds bounds_;
};

// Six halfspaces in antipodal pairs (+c0, -c0, +c1, -c1, +c2, -c2), where the
// columns of `basis` are the half-axis vectors. x is inside iff
// max-norm(basis^-1 (x - center)) <= 1.
ConvexPrimitive make_parallelepiped(std::string id, const Vec3& center, const Mat3& basis,
                                    std::optional<std::string> label = std::nullopt);

ConvexPrimitive make_box(std::string id, const Vec3& center, const Vec3& half_extents,
                         std::optional<std::string> label = std::nullopt);

// Rigid world-from-camera transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Vec3 inverse_apply(const Vec3& x) const { return rotation.transpose() * (x - translation); }

  bool operator==(const Pose& o) const { return rotation == o.rotation && translation == o.translation; }
};

// Throws unless rotation is orthonormal with determinant +1 within kUnitTolerance.
void validate_pose(const Pose& pose);

// Pinhole camera. Coordinate convention: right-handed, camera looks down +z,
// x to the right, y down. Pixel (u, v) covers [u, u+1) x [v, v+1) and its ray
// passes through ((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1).
class Camera {
 public:
  static Camera create(double fx, double fy, double cx, double cy, int width, int height,
                       const Pose& pose = Pose{});
  // fx = fy = 518.86, cx = (width - 1) / 2, cy = (height - 1) / 2.
  static Camera with_default_intrinsics(int width, int height, const Pose& pose = Pose{});

  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  int width() const { return width_; }
  int height() const { return height_; }
  const Pose& pose() const { return pose_; }
  Vec3 center() const { return pose_.translation; }
  Vec3 forward() const { return pose_.rotation.col(2); }

  Camera with_pose(const Pose& pose) const;
  // Resamples the raster by `factor` keeping the field of view.
  Camera scaled(double factor) const;

  bool operator==(const Camera&) const = default;

 private:
  Camera() = default;

  double fx_ = 1.0;
  double fy_ = 1.0;
  double cx_ = 0.0;
  double cy_ = 0.0;
  int width_ = 1;
  int height_ = 1;
  Pose pose_;
};

inline constexpr double kDefaultFocal = 518.86;

class Scene {
 public:
  // Validates unique ids and primitive count <= budget.
  static Scene create(std::vector<ConvexPrimitive> primitives, Camera camera, std::string prompt = {},
                      std::uint64_t seed = 0, std::size_t budget = kDefaultBudget);

  const std::vector<ConvexPrimitive>& primitives() const { return primitives_; }
  const Camera& camera() const { return camera_; }
  const std::string& prompt() const { return prompt_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t budget() const { return budget_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  const ConvexPrimitive* find(const std::string& id) const;

  Scene with_primitives(std::vector<ConvexPrimitive> primitives) const;
  Scene with_camera(Camera camera) const;
  Scene with_prompt(std::string prompt) const;
  Scene with_seed(std::uint64_t seed) const;

  bool operator==(const Scene& o) const {
    return primitives_ == o.primitives_ && camera_ == o.camera_ && prompt_ == o.prompt_ && seed_ == o.seed_;
  }

 private:
  Scene(Camera camera) : camera_(std::move(camera)) {}

  std::vector<ConvexPrimitive> primitives_;
  Camera camera_;
  std::string prompt_;
  std::uint64_t seed_ = 0;
  std::size_t budget_ = kDefaultBudget;
};

}  // namespace b2w

#include "b2w/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "b2w/error.hpp"
#include "b2w/lp.hpp"

namespace b2w {
namespace {

constexpr const char* kModule = "scene";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

void constraint_system(std::span<const Halfspace> hs, Eigen::MatrixXd& A, Eigen::VectorXd& b) {
  A.resize(static_cast<Eigen::Index>(hs.size()), 3);
  b.resize(static_cast<Eigen::Index>(hs.size()));
  for (std::size_t i = 0; i < hs.size(); ++i) {
    A.row(static_cast<Eigen::Index>(i)) = hs[i].normal.transpose();
    b(static_cast<Eigen::Index>(i)) = hs[i].offset;
  }
}

bool is_finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

Halfspace Halfspace::make(const Vec3& normal, double offset) {
  if (!is_finite(normal) || !std::isfinite(offset)) fail(Errc::invalid_argument, "halfspace has non-finite parameters");
  if (std::abs(normal.norm() - 1.0) > kUnitTolerance) {
    std::ostringstream os;
    os << "halfspace normal is not unit length (|n| = " << normal.norm() << ")";
    fail(Errc::invalid_argument, os.str());
  }
  return Halfspace{normal, offset};
}

Halfspace Halfspace::normalized(const Vec3& normal, double offset) {
  const double len = normal.norm();
  if (!(len > 0.0) || !std::isfinite(len)) fail(Errc::invalid_argument, "halfspace normal has zero or non-finite length");
  return Halfspace{normal / len, offset / len};
}

std::optional<Bounds> bounding_box(std::span<const Halfspace> halfspaces) {
  if (halfspaces.size() < 4) return std::nullopt;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  constraint_system(halfspaces, A, b);
  Bounds box;
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign : {1, -1}) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(3);
      c(axis) = sign;
      const lp::Result r = lp::maximize(c, A, b);
      if (r.status != lp::Status::optimal) return std::nullopt;
      if (sign > 0) {
        box.hi(axis) = r.value;
      } else {
        box.lo(axis) = -r.value;
      }
    }
  }
  return box;
}

double inscribed_radius(std::span<const Halfspace> halfspaces) {
  // maximize r s.t. n.x + |n| r <= d, r <= 1.
  const auto m = static_cast<Eigen::Index>(halfspaces.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + 1, 4);
  Eigen::VectorXd b(m + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Halfspace& h = halfspaces[static_cast<std::size_t>(i)];
    A.block<1, 3>(i, 0) = h.normal.transpose();
    A(i, 3) = h.normal.norm();
    b(i) = h.offset;
  }
  A(m, 3) = 1.0;
  b(m) = 1.0;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(4);
  c(3) = 1.0;
  const lp::Result r = lp::maximize(c, A, b);
  if (r.status != lp::Status::optimal) return -1.0;
  return r.value;
}

ConvexPrimitive ConvexPrimitive::create(std::string id, std::vector<Halfspace> halfspaces,
                                        std::optional<std::string> label) {
  if (id.empty()) fail(Errc::invalid_argument, "primitive id must be non-empty");
  if (halfspaces.size() < 4) {
    fail(Errc::unbounded, "primitive '" + id + "' has " + std::to_string(halfspaces.size()) +
                              " halfspaces; at least 4 are needed to bound a volume");
  }
  for (const Halfspace& h : halfspaces) (void)Halfspace::make(h.normal, h.offset);

  if (inscribed_radius(halfspaces) <= 1e-9) {
    fail(Errc::infeasible, "primitive '" + id + "' has an empty interior");
  }
  std::optional<Bounds> box = bounding_box(halfspaces);
  if (!box) fail(Errc::unbounded, "primitive '" + id + "' is unbounded");

  ConvexPrimitive p;
  p.id_ = std::move(id);
  p.halfspaces_ = std::move(halfspaces);
  p.label_ = std::move(label);
  p.bounds_ = *box;
  return p;
}

bool ConvexPrimitive::contains(const Vec3& x) const {
  return std::all_of(halfspaces_.begin(), halfspaces_.end(),
                     [&](const Halfspace& h) { return h.signed_distance(x) <= 0.0; });
}

ConvexPrimitive ConvexPrimitive::translated(const Vec3& delta) const {
  ConvexPrimitive p = *this;
  for (Halfspace& h : p.halfspaces_) h.offset += h.normal.dot(delta);
  p.bounds_.lo += delta;
  p.bounds_.hi += delta;
  return p;
}

ConvexPrimitive ConvexPrimitive::with_id(std::string id) const {
  if (id.empty()) fail(Errc::invalid_argument, "primitive id must be non-empty");
  ConvexPrimitive p = *this;
  p.id_ = std::move(id);
  return p;
}

ConvexPrimitive make_parallelepiped(std::string id, const Vec3& center, const Mat3& basis,
                                    std::optional<std::string> label) {
  if (!basis.allFinite() || !is_finite(center)) fail(Errc::invalid_argument, "parallelepiped has non-finite parameters");
  Eigen::JacobiSVD<Mat3> svd(basis);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 0.0) || sv(0) / sv(2) >= 1e8) {
    std::ostringstream os;
    os << "parallelepiped basis is singular or ill-conditioned (condition number "
       << (sv(2) > 0.0 ? sv(0) / sv(2) : INFINITY) << ")";
    fail(Errc::degenerate, os.str());
  }
  const Mat3 inv = basis.inverse();
  std::vector<Halfspace> hs;
  hs.reserve(6);
  for (int i = 0; i < 3; ++i) {
    const Vec3 row = inv.row(i).transpose();
    const double len = row.norm();
    const double rc = row.dot(center);
    hs.push_back(Halfspace{row / len, (1.0 + rc) / len});
    hs.push_back(Halfspace{-row / len, (1.0 - rc) / len});
  }
  return ConvexPrimitive::create(std::move(id), std::move(hs), std::move(label));
}

ConvexPrimitive make_box(std::string id, const Vec3& center, const Vec3& half_extents,
                         std::optional<std::string> label) {
  return make_parallelepiped(std::move(id), center, half_extents.asDiagonal(), std::move(label));
}

void validate_pose(const Pose& pose) {
  if (!pose.rotation.allFinite() || !pose.translation.allFinite()) fail(Errc::invalid_argument, "pose has non-finite entries");
  const double ortho = (pose.rotation.transpose() * pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = pose.rotation.determinant();
  if (ortho > kUnitTolerance || std::abs(det - 1.0) > kUnitTolerance) {
    std::ostringstream os;
    os << "pose rotation is not a proper rotation (orthogonality error " << ortho << ", det " << det << ")";
    fail(Errc::invalid_argument, os.str());
  }
}

Camera Camera::create(double fx, double fy, double cx, double cy, int width, int height, const Pose& pose) {
  if (width <= 0 || height <= 0) fail(Errc::invalid_argument, "camera raster must be at least 1x1");
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    fail(Errc::invalid_argument, "camera focal lengths must be positive and finite");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    fail(Errc::invalid_argument, "camera principal point must lie inside the raster");
  }
  validate_pose(pose);
  Camera c;
  c.fx_ = fx;
  c.fy_ = fy;
  c.cx_ = cx;
  c.cy_ = cy;
  c.width_ = width;
  c.height_ = height;
  c.pose_ = pose;
  return c;
}

Camera Camera::with_default_intrinsics(int width, int height, const Pose& pose) {
  return create(kDefaultFocal, kDefaultFocal, (width - 1) / 2.0, (height - 1) / 2.0, width, height, pose);
}

Camera Camera::with_pose(const Pose& pose) const {
  return create(fx_, fy_, cx_, cy_, width_, height_, pose);
}

Camera Camera::scaled(double factor) const {
  if (!(factor > 0.0)) fail(Errc::invalid_argument, "camera scale factor must be positive");
  const int w = std::max(1, static_cast<int>(std::lround(width_ * factor)));
  const int h = std::max(1, static_cast<int>(std::lround(height_ * factor)));
  const double sx = static_cast<double>(w) / width_;
  const double sy = static_cast<double>(h) / height_;
  return create(fx_ * sx, fy_ * sy, std::min(cx_ * sx, std::nextafter(static_cast<double>(w), 0.0)),
                std::min(cy_ * sy, std::nextafter(static_cast<double>(h), 0.0)), w, h, pose_);
}

Scene Scene::create(std::vector<ConvexPrimitive> primitives, Camera camera, std::string prompt, std::uint64_t seed,
                    std::size_t budget) {
  if (budget == 0) fail(Errc::invalid_argument, "primitive budget must be at least 1");
  if (primitives.size() > budget) {
    fail(Errc::budget_exceeded, "scene has " + std::to_string(primitives.size()) + " primitives; budget is " +
                                    std::to_string(budget));
  }
  std::unordered_set<std::string> seen;
  for (const ConvexPrimitive& p : primitives) {
    if (!seen.insert(p.id()).second) fail(Errc::duplicate_id, "duplicate primitive id '" + p.id() + "'");
  }
  Scene s(std::move(camera));
  s.primitives_ = std::move(primitives);
  s.prompt_ = std::move(prompt);
  s.seed_ = seed;
  s.budget_ = budget;
  return s;
}

std::optional<std::size_t> Scene::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < primitives_.size(); ++i) {
    if (primitives_[i].id() == id) return i;
  }
  return std::nullopt;
}

const ConvexPrimitive* Scene::find(const std::string& id) const {
  const auto i = index_of(id);
  return i ? &primitives_[*i] : nullptr;
}

Scene Scene::with_primitives(std::vector<ConvexPrimitive> primitives) const {
  return create(std::move(primitives), camera_, prompt_, seed_, budget_);
}

Scene Scene::with_camera(Camera camera) const {
  Scene s = *this;
  s.camera_ = std::move(camera);
  return s;
}

Scene Scene::with_prompt(std::string prompt) const {
  Scene s = *this;
  s.prompt_ = std::move(prompt);
  return s;
}

Scene Scene::with_seed(std::uint64_t seed) const {
  Scene s = *this;
  s.seed_ = seed;
  return s;
}

}  // namespace b2w

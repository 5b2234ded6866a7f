#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <span>
#include <string>
#include <vector>

#include "b2w/decomposer.hpp"
#include "b2w/raster.hpp"
#include "b2w/render_bridge.hpp"
#include "b2w/scene.hpp"

namespace b2w::testing {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi);
Vec3 uniform_vec(Rng& rng, double lo, double hi);
Vec3 random_unit(Rng& rng);
Mat3 random_rotation(Rng& rng);

// Oriented box with random rotation, centre in [-c, c]^3 and half-extents in [lo, hi].
ConvexPrimitive random_oriented_box(Rng& rng, const std::string& id, double c = 1.0, double lo = 0.1, double hi = 1.0);
// Sheared parallelepiped (condition number stays modest).
ConvexPrimitive random_parallelepiped(Rng& rng, const std::string& id, double c = 1.0);
// Parallelepiped with 0..4 extra cutting planes that keep its centre strictly inside.
ConvexPrimitive random_polytope(Rng& rng, const std::string& id, double c = 1.0);

// Random smooth-occupancy shapes with slightly non-unit normals.
std::vector<Faces> random_shapes(Rng& rng, std::size_t count);
std::vector<LabeledSample> random_samples(Rng& rng, std::size_t count, double extent);

// 64x64 camera at the origin looking down +z, fx = fy = 60.
Camera small_camera(int size = 64);
// Back wall, floor slab and a cube in front of small_camera().
std::vector<ConvexPrimitive> three_boxes(Rng* jitter = nullptr, double jitter_fraction = 0.0);
Scene three_box_scene();

struct TempDir {
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path path;
};

Image random_image(Rng& rng, int width, int height);
Mask random_mask(Rng& rng, int width, int height, double p);

}  // namespace b2w::testing

namespace b2w::testing {

struct MarchResult {
  bool hit = false;
  double t_near = 0.0;
  double t_far = 0.0;
};

// Fixed-step march of the signed function max_i (n_i.x - d_i) along the ray
// over [0, t_max]. Entry and exit are the first and last inside samples.
MarchResult ray_march(const Vec3& origin, const Vec3& dir, std::span<const Halfspace> faces, double t_max, double step);

}  // namespace b2w::testing

namespace b2w::testing {

struct GradientCheck {
  double max_component_error = 0.0;  // max_i |a_i - f_i| / max(|a_i|, |f_i|, floor)
  double normwise_error = 0.0;       // max_i |a_i - f_i| / max_i |f_i|
};

// Central differences of fit_loss(...).terms.total against the analytic
// gradient, over every face parameter.
GradientCheck check_fit_gradient(const std::vector<Faces>& shapes, const std::vector<LabeledSample>& samples,
                                 const FitConfig& cfg, double step, double floor);

}  // namespace b2w::testing

namespace b2w::testing {

// Valid request with float32-exact depth (some +inf), a prompt mixing ASCII
// and multi-byte UTF-8, any u64 seed, and optional badge and hints.
RenderRequest random_render_request(Rng& rng, int max_side = 24);

// Loopback listener that reads one HTTP request per connection and asks the
// script what to do with it: a raw reply to send, or nullopt to close the
// connection without answering. Scripts may sleep to simulate a stall.
class ScriptedHttpServer {
 public:
  using Script = std::function<std::optional<std::string>(int index, const std::string& body)>;
  explicit ScriptedHttpServer(Script script);
  ~ScriptedHttpServer();
  ScriptedHttpServer(const ScriptedHttpServer&) = delete;
  ScriptedHttpServer& operator=(const ScriptedHttpServer&) = delete;

  int port() const { return port_; }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::vector<std::string> bodies() const;

  static std::string http_reply(int status, const std::string& body);

 private:
  void loop();

  Script script_;
  int fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  std::vector<std::string> bodies_;
  std::thread thread_;
};

// A loopback port with nothing listening on it (bound then released).
int unused_port();

}  // namespace b2w::testing

namespace b2w::testing {

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs argv[0] with the given arguments (no shell), capturing both streams.
CommandResult run_command(const std::vector<std::string>& argv);

// Child process with stdout on a pipe, for long-running servers.
class ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  // Next stdout line, or nullopt on EOF / after `timeout_ms`.
  std::optional<std::string> read_line(int timeout_ms);
  void signal(int sig);
  // Exit status (or 128 + signal), reaping the child.
  int wait();

 private:
  int pid_ = -1;
  int out_fd_ = -1;
  std::string pending_;
};

// Reads the "listening on" line printed by `b2w serve`; returns the port or -1.
int wait_for_listening(ChildProcess& child, int timeout_ms);

}  // namespace b2w::testing

namespace b2w::testing {

struct KillRestartResult {
  bool ok = false;
  std::string detail;
  std::uint64_t acked = 0;      // last revision the killed server acknowledged
  std::uint64_t recovered = 0;  // revision served after restart
};

// Starts `cli serve --stub`, streams edits that set seed = new revision, sends
// SIGKILL after `kill_after_ms`, restarts on the same directory and checks the
// recovered scene: revision >= last ack and seed == revision.
KillRestartResult kill_restart_check(const std::string& cli, const std::filesystem::path& dir, int kill_after_ms);

}  // namespace b2w::testing

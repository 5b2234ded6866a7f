#include "support.hpp"

#include "b2w/editor.hpp"
#include "b2w/scene_io.hpp"

#include <httplib.h>  // after Eigen: <resolv.h> defines _res

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <fcntl.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <regex>
#include <cctype>
#include <cmath>
#include <iterator>
#include <stdexcept>

namespace b2w::testing {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

Vec3 uniform_vec(Rng& rng, double lo, double hi) {
  const double x = uniform(rng, lo, hi);
  const double y = uniform(rng, lo, hi);
  const double z = uniform(rng, lo, hi);
  return {x, y, z};
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n;
  while (true) {
    const double x = n(rng);
    const double y = n(rng);
    const double z = n(rng);
    const Vec3 v(x, y, z);
    if (v.norm() > 1e-6) return v.normalized();
  }
}

Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n;
  const double w = n(rng);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return Eigen::Quaterniond(w, x, y, z).normalized().toRotationMatrix();
}

ConvexPrimitive random_oriented_box(Rng& rng, const std::string& id, double c, double lo, double hi) {
  const Vec3 center = uniform_vec(rng, -c, c);
  const Vec3 half = uniform_vec(rng, lo, hi);
  const Mat3 r = random_rotation(rng);
  return make_parallelepiped(id, center, r * half.asDiagonal());
}

ConvexPrimitive random_parallelepiped(Rng& rng, const std::string& id, double c) {
  const Vec3 center = uniform_vec(rng, -c, c);
  Mat3 basis = random_rotation(rng) * uniform_vec(rng, 0.2, 1.0).asDiagonal();
  Mat3 shear = Mat3::Identity();
  shear(0, 1) = uniform(rng, -0.5, 0.5);
  shear(1, 2) = uniform(rng, -0.5, 0.5);
  basis = basis * shear;
  return make_parallelepiped(id, center, basis);
}

ConvexPrimitive random_polytope(Rng& rng, const std::string& id, double c) {
  const ConvexPrimitive base = random_parallelepiped(rng, id, c);
  std::vector<Halfspace> hs = base.halfspaces();
  const Vec3 center = 0.5 * (base.bounds().lo + base.bounds().hi);
  const int extra = static_cast<int>(rng() % 5);
  for (int i = 0; i < extra; ++i) {
    const Vec3 n = random_unit(rng);
    hs.push_back(Halfspace::make(n, n.dot(center) + uniform(rng, 0.05, 0.5)));
  }
  return ConvexPrimitive::create(id, hs);
}

std::vector<Faces> random_shapes(Rng& rng, std::size_t count) {
  std::vector<Faces> shapes;
  for (std::size_t k = 0; k < count; ++k) {
    Faces f = random_oriented_box(rng, "s", 0.5, 0.2, 0.6).halfspaces();
    for (Halfspace& h : f) {
      h.normal *= uniform(rng, 0.9, 1.1);
      h.offset += uniform(rng, -0.05, 0.05);
    }
    shapes.push_back(std::move(f));
  }
  return shapes;
}

std::vector<LabeledSample> random_samples(Rng& rng, std::size_t count, double extent) {
  std::vector<LabeledSample> out(count);
  for (auto& s : out) {
    s.position = uniform_vec(rng, -extent, extent);
    s.label = static_cast<std::uint8_t>(rng() & 1);
  }
  return out;
}

Camera small_camera(int size) {
  const double c = (size - 1) / 2.0;
  return Camera::create(60.0 * size / 64.0, 60.0 * size / 64.0, c, c, size, size);
}

std::vector<ConvexPrimitive> three_boxes(Rng* jitter, double f) {
  struct Spec {
    const char* id;
    Vec3 center;
    Vec3 half;
  };
  const Spec specs[] = {
      {"wall", {0.0, 0.0, 4.2}, {3.0, 3.0, 0.2}},
      {"floor", {0.0, 1.2, 2.6}, {2.0, 0.2, 1.4}},
      {"cube", {-0.3, 0.4, 2.4}, {0.4, 0.4, 0.4}},
  };
  std::vector<ConvexPrimitive> out;
  for (const Spec& s : specs) {
    Vec3 center = s.center;
    Vec3 half = s.half;
    if (jitter) {
      for (int a = 0; a < 3; ++a) {
        center[a] += uniform(*jitter, -f, f) * half[a];
        half[a] *= 1.0 + uniform(*jitter, -f, f);
      }
    }
    out.push_back(make_box(s.id, center, half));
  }
  return out;
}

Scene three_box_scene() { return Scene::create(three_boxes(), small_camera(), "a small room", 7); }

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path = std::filesystem::temp_directory_path() /
         ("b2w-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path, ec);
}

Image random_image(Rng& rng, int width, int height) {
  Image img(width, height);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

Mask random_mask(Rng& rng, int width, int height, double p) {
  Mask m(width, height);
  for (auto& b : m.data) b = uniform01(rng) < p ? 1 : 0;
  return m;
}

}  // namespace b2w::testing

namespace b2w::testing {

MarchResult ray_march(const Vec3& origin, const Vec3& dir, std::span<const Halfspace> faces, double t_max, double step) {
  MarchResult r;
  const auto steps = static_cast<long>(std::ceil(t_max / step));
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * step;
    const Vec3 x = origin + t * dir;
    double f = -1e300;
    for (const Halfspace& h : faces) f = std::max(f, h.normal.dot(x) - h.offset);
    if (f <= 0.0) {
      if (!r.hit) r.t_near = t;
      r.hit = true;
      r.t_far = t;
    } else if (r.hit) {
      break;  // convex: the inside run is contiguous
    }
  }
  return r;
}

}  // namespace b2w::testing

namespace b2w::testing {

GradientCheck check_fit_gradient(const std::vector<Faces>& shapes, const std::vector<LabeledSample>& samples,
                                 const FitConfig& cfg, double step, double floor) {
  const LossEval analytic = fit_loss(shapes, samples, cfg, true);
  std::vector<double> a;
  std::vector<double> f;
  std::vector<Faces> probe = shapes;
  auto total = [&] { return fit_loss(probe, samples, cfg, false).terms.total; };
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    for (std::size_t h = 0; h < shapes[k].size(); ++h) {
      for (int j = 0; j < 4; ++j) {
        double& param = j < 3 ? probe[k][h].normal(j) : probe[k][h].offset;
        const double saved = param;
        param = saved + step;
        const double up = total();
        param = saved - step;
        const double down = total();
        param = saved;
        f.push_back((up - down) / (2.0 * step));
        a.push_back(j < 3 ? analytic.gradient[k][h].normal(j) : analytic.gradient[k][h].offset);
      }
    }
  }
  GradientCheck out;
  double scale = 0.0;
  for (double v : f) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - f[i]);
    out.max_component_error =
        std::max(out.max_component_error, diff / std::max({std::abs(a[i]), std::abs(f[i]), floor}));
    out.normwise_error = std::max(out.normwise_error, diff / std::max(scale, 1e-300));
  }
  return out;
}

}  // namespace b2w::testing

namespace b2w::testing {

RenderRequest random_render_request(Rng& rng, int max_side) {
  static const char* const kPieces[] = {"room", " ", "caf\u00e9", "\u00fcber", "\u65e5\u672c", "\U0001f3e0",
                                        "\"quoted\"", "back\\slash", "\n", "\t", "{}", "50%"};
  RenderRequest req;
  const int pieces = static_cast<int>(rng() % 8);
  for (int i = 0; i < pieces; ++i) req.prompt += kPieces[rng() % std::size(kPieces)];
  req.seed = rng();
  req.width = 1 + static_cast<int>(rng() % max_side);
  req.height = 1 + static_cast<int>(rng() % max_side);
  req.depth = DepthMap(req.width, req.height);
  for (double& d : req.depth.data) {
    d = rng() % 5 == 0 ? kNoHit : static_cast<double>(static_cast<float>(uniform(rng, 0.01, 100.0)));
  }
  if (rng() % 2) {
    RenderBadge badge;
    badge.mask = random_mask(rng, req.width, req.height, uniform(rng, 0, 1));
    badge.image = random_image(rng, req.width, req.height);
    for (std::size_t i = 0; i < badge.mask.size(); ++i) {
      if (badge.mask.data[i]) badge.image.rgb[3 * i] = badge.image.rgb[3 * i + 1] = badge.image.rgb[3 * i + 2] = 0;
    }
    req.badge = std::move(badge);
  }
  if (rng() % 2) req.hints = nlohmann::json{{"steps", rng() % 100}, {"guidance", 7.5}, {"sampler", "ddim"}};
  return req;
}

namespace {

std::optional<std::string> read_http_request(int fd) {
  std::string buf;
  char chunk[4096];
  std::size_t header_end = std::string::npos;
  std::size_t need = 0;
  while (true) {
    if (header_end == std::string::npos) {
      header_end = buf.find("\r\n\r\n");
      if (header_end != std::string::npos) {
        std::string head = buf.substr(0, header_end);
        for (char& c : head) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        const auto pos = head.find("content-length:");
        const std::size_t length = pos == std::string::npos ? 0 : std::stoul(head.substr(pos + 15));
        need = header_end + 4 + length;
      }
    }
    if (header_end != std::string::npos && buf.size() >= need) return buf.substr(header_end + 4, need - header_end - 4);
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n <= 0) return std::nullopt;
    buf.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace

ScriptedHttpServer::ScriptedHttpServer(Script script) : script_(std::move(script)) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 16) != 0) {
    throw std::runtime_error("scripted server: cannot bind loopback socket");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  thread_ = std::thread([this] { loop(); });
}

ScriptedHttpServer::~ScriptedHttpServer() {
  stop_ = true;
  thread_.join();
  ::close(fd_);
}

std::vector<std::string> ScriptedHttpServer::bodies() const {
  std::lock_guard lock(mu_);
  return bodies_;
}

std::string ScriptedHttpServer::http_reply(int status, const std::string& body) {
  return "HTTP/1.1 " + std::to_string(status) + " X\r\nContent-Type: application/json\r\nContent-Length: " +
         std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" + body;
}

void ScriptedHttpServer::loop() {
  int index = 0;
  while (!stop_) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int conn = ::accept(fd_, nullptr, nullptr);
    if (conn < 0) continue;
    const auto body = read_http_request(conn);
    if (body) {
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(*body);
      }
      const auto reply = script_(index++, *body);
      if (reply) {
        std::size_t sent = 0;
        while (sent < reply->size()) {
          const ssize_t n = ::send(conn, reply->data() + sent, reply->size() - sent, MSG_NOSIGNAL);
          if (n <= 0) break;
          sent += static_cast<std::size_t>(n);
        }
      }
    }
    ::close(conn);
  }
}

int unused_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace b2w::testing

namespace b2w::testing {
namespace {

std::vector<char*> c_argv(const std::vector<std::string>& argv) {
  std::vector<char*> out;
  for (const std::string& a : argv) out.push_back(const_cast<char*>(a.c_str()));
  out.push_back(nullptr);
  return out;
}

int decode_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

std::string drain(int fd) {
  std::string out;
  char buf[4096];
  ssize_t n;
  while ((n = ::read(fd, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  return out;
}

}  // namespace

CommandResult run_command(const std::vector<std::string>& argv) {
  TempDir dir;
  const std::string out_path = (dir.path / "out").string();
  const std::string err_path = (dir.path / "err").string();
  auto args = c_argv(argv);  // built before fork: the child must not allocate
  const pid_t pid = ::fork();
  if (pid == 0) {
    const int o = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    const int e = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    ::dup2(o, 1);
    ::dup2(e, 2);
    ::execv(args[0], args.data());
    ::_exit(127);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  CommandResult r;
  r.exit_code = decode_status(status);
  for (auto [path, dst] : {std::pair{&out_path, &r.out}, std::pair{&err_path, &r.err}}) {
    const int fd = ::open(path->c_str(), O_RDONLY);
    if (fd >= 0) {
      *dst = drain(fd);
      ::close(fd);
    }
  }
  return r;
}

ChildProcess::ChildProcess(const std::vector<std::string>& argv) {
  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  auto args = c_argv(argv);
  pid_ = ::fork();
  if (pid_ == 0) {
    ::dup2(fds[1], 1);
    ::close(fds[0]);
    ::close(fds[1]);
    ::execv(args[0], args.data());
    ::_exit(127);
  }
  ::close(fds[1]);
  out_fd_ = fds[0];
}

ChildProcess::~ChildProcess() {
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    wait();
  }
  if (out_fd_ >= 0) ::close(out_fd_);
}

std::optional<std::string> ChildProcess::read_line(int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{out_fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
    char buf[1024];
    const ssize_t n = ::read(out_fd_, buf, sizeof(buf));
    if (n <= 0) return std::nullopt;
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

void ChildProcess::signal(int sig) {
  if (pid_ > 0) ::kill(pid_, sig);
}

int ChildProcess::wait() {
  if (pid_ <= 0) return -1;
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
  return decode_status(status);
}

int wait_for_listening(ChildProcess& child, int timeout_ms) {
  static const std::regex re(R"(listening on http://[^:]+:(\d+))");
  while (const auto line = child.read_line(timeout_ms)) {
    std::smatch m;
    if (std::regex_search(*line, m, re)) return std::stoi(m[1]);
  }
  return -1;
}

}  // namespace b2w::testing

namespace b2w::testing {

KillRestartResult kill_restart_check(const std::string& cli, const std::filesystem::path& dir, int kill_after_ms) {
  KillRestartResult out;
  const std::vector<std::string> argv = {cli, "serve", "--stub", "--port", "0", "--threads", "1", "--scene-dir", dir.string()};
  std::atomic<std::uint64_t> acked{0};
  {
    ChildProcess server(argv);
    const int port = wait_for_listening(server, 10000);
    if (port < 0) {
      out.detail = "first server did not start";
      return out;
    }
    httplib::Client client("127.0.0.1", port);
    const Scene start = Scene::create(three_boxes(), small_camera(), "kill test", 1);
    const auto put = client.Put("/v1/scene/room", serialize_scene(start), "application/json");
    if (!put || put->status / 100 != 2) {
      out.detail = "initial PUT failed";
      return out;
    }
    acked = std::stoull(put->get_header_value("X-B2W-Revision"));
    std::atomic<bool> stop{false};
    std::thread editor([&] {
      httplib::Client c("127.0.0.1", port);
      while (!stop) {
        const std::uint64_t base = acked;
        const nlohmann::json body{{"revision", base}, {"ops", {edit_to_json(SetSeed{base + 1})}}};
        const auto res = c.Post("/v1/scene/room/edit", body.dump(), "application/json");
        if (!res || res->status != 200) break;
        acked = base + 1;
      }
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(kill_after_ms));
    server.signal(SIGKILL);
    server.wait();
    stop = true;
    editor.join();
  }
  out.acked = acked;

  ChildProcess again(argv);
  const int port = wait_for_listening(again, 10000);
  if (port < 0) {
    out.detail = "restarted server did not start";
    return out;
  }
  httplib::Client client("127.0.0.1", port);
  const auto get = client.Get("/v1/scene/room");
  if (!get || get->status != 200) {
    out.detail = "GET after restart failed";
    return out;
  }
  out.recovered = std::stoull(get->get_header_value("X-B2W-Revision"));
  try {
    const Scene s = parse_scene(get->body);
    if (out.recovered < out.acked) {
      out.detail = "lost acknowledged edits";
    } else if (out.recovered > out.acked + 1) {
      out.detail = "revision ran ahead of the edits sent";
    } else if (s.seed() != out.recovered) {
      out.detail = "document does not match its revision";
    } else {
      out.ok = true;
    }
  } catch (const std::exception& e) {
    out.detail = std::string("recovered document is invalid: ") + e.what();
  }
  again.signal(SIGTERM);
  if (again.wait() != 0 && out.ok) {
    out.ok = false;
    out.detail = "server did not exit cleanly on SIGTERM";
  }
  return out;
}

}  // namespace b2w::testing

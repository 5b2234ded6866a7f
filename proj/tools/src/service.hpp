#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "b2w/render_bridge.hpp"
#include "b2w/scene.hpp"

namespace b2w::app {

struct ServiceConfig {
  std::filesystem::path scene_dir;
  bool stub = true;
  std::optional<std::string> renderer_endpoint;  // used when stub is false
  RemoteOptions remote;
  std::size_t budget = kDefaultBudget;
  unsigned threads = 0;
  double preview_scale = 0.5;
};

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

inline constexpr const char* kRevisionHeader = "X-B2W-Revision";

bool valid_scene_name(const std::string& name);

// Transport-independent scene store behind the HTTP API. Each scene lives in
// <scene_dir>/<name>.state.json as {"revision", "document"}; the file is
// replaced atomically before any edit is acknowledged.
class SceneService {
 public:
  explicit SceneService(ServiceConfig config);

  Reply health() const;
  Reply get_scene(const std::string& name);
  // `expected_revision` (If-Match) guards overwrites when given.
  Reply put_scene(const std::string& name, const std::string& body, std::optional<std::uint64_t> expected_revision);
  // Body: {"revision": N, "ops": [EditOp...]}.
  Reply edit_scene(const std::string& name, const std::string& body);
  Reply depth_preview(const std::string& name);
  // Body (optional): {"badge_image_b64", "badge_mask_b64", "hints"}.
  Reply render_scene(const std::string& name, const std::string& body);

 private:
  struct Entry {
    std::mutex mutex;
    bool loaded = false;
    bool exists = false;
    std::uint64_t revision = 0;
    std::string document;
    std::optional<Scene> scene;
  };

  std::shared_ptr<Entry> entry(const std::string& name);
  void load(const std::string& name, Entry& e);
  void persist(const std::string& name, std::uint64_t revision, const std::string& document);
  std::string preview_png(const Scene& scene) const;

  ServiceConfig config_;
  std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
};

// Blocks serving HTTP until stop() is called from another thread (or a signal
// handler thread). `on_ready` receives the bound port.
class HttpService {
 public:
  explicit HttpService(SceneService& scenes, bool serve_render_endpoint);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  int bind(const std::string& host, int port);
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace b2w::app

#include "service.hpp"

#include <regex>

#include "b2w/editor.hpp"
#include "b2w/error.hpp"
#include "b2w/raster_io.hpp"
#include "b2w/raytracer.hpp"
#include "b2w/scene_io.hpp"
#include "commands.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen internals.
#include <httplib.h>

namespace b2w::app {
namespace {

using nlohmann::json;

constexpr const char* kModule = "service";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

int status_for(Errc code) {
  switch (code) {
    case Errc::unknown_id:
    case Errc::duplicate_id:
    case Errc::budget_exceeded:
      return 422;
    case Errc::conflict:
      return 409;
    case Errc::timeout:
    case Errc::transport:
    case Errc::protocol:
    case Errc::renderer_failure:
      return 502;
    case Errc::io_error:
      return 500;
    default:
      return 400;
  }
}

Reply error_reply(int status, std::string_view code, std::string_view message) {
  Reply r;
  r.status = status;
  r.body = encode_error(code, message);
  return r;
}

Reply error_reply(const Error& e) { return error_reply(status_for(e.code()), e.qualified_code(), e.what()); }

Reply not_found(const std::string& name) {
  return error_reply(404, "service.not_found", "scene '" + name + "' does not exist");
}

Reply json_reply(const json& j, std::uint64_t revision, int status = 200) {
  Reply r;
  r.status = status;
  r.body = j.dump();
  r.headers[kRevisionHeader] = std::to_string(revision);
  return r;
}

}  // namespace

bool valid_scene_name(const std::string& name) {
  static const std::regex re("[A-Za-z0-9_-]{1,128}");
  return std::regex_match(name, re);
}

SceneService::SceneService(ServiceConfig config) : config_(std::move(config)) {
  std::filesystem::create_directories(config_.scene_dir);
  if (!config_.stub && !config_.renderer_endpoint) {
    fail(Errc::invalid_argument, "service needs either the stub renderer or a renderer endpoint");
  }
}

std::shared_ptr<SceneService::Entry> SceneService::entry(const std::string& name) {
  if (!valid_scene_name(name)) fail(Errc::invalid_argument, "scene name '" + name + "' must match [A-Za-z0-9_-]+");
  std::lock_guard lock(map_mutex_);
  auto& slot = entries_[name];
  if (!slot) slot = std::make_shared<Entry>();
  return slot;
}

void SceneService::load(const std::string& name, Entry& e) {
  if (e.loaded) return;
  const auto path = config_.scene_dir / (name + ".state.json");
  if (std::filesystem::exists(path)) {
    const json state = json_util::parse(read_file(path), kModule);
    try {
      json_util::expect_keys(state, "scene state", {"revision", "document"}, {}, kModule);
      e.revision = state.at("revision").get<std::uint64_t>();
      e.document = state.at("document").get<std::string>();
      e.scene = parse_scene(e.document, config_.budget);
    } catch (const std::exception& ex) {
      fail(Errc::io_error, "corrupt state file '" + path.string() + "': " + ex.what());
    }
    e.exists = true;
  }
  e.loaded = true;
}

void SceneService::persist(const std::string& name, std::uint64_t revision, const std::string& document) {
  const json state{{"revision", revision}, {"document", document}};
  write_file_atomic(config_.scene_dir / (name + ".state.json"), state.dump());
}

std::string SceneService::preview_png(const Scene& scene) const {
  const Scene small = scene.with_camera(scene.camera().scaled(config_.preview_scale));
  return encode_png_gray16(depth_to_millimeters(render_depth(small, RenderOptions{config_.threads}).depth));
}

Reply SceneService::health() const {
  Reply r;
  r.body = json{{"status", "ok"},
                {"version", kFormatVersion},
                {"renderer", config_.stub ? std::string(kStubRendererName) : *config_.renderer_endpoint}}
               .dump();
  return r;
}

Reply SceneService::get_scene(const std::string& name) {
  try {
    auto e = entry(name);
    std::lock_guard lock(e->mutex);
    load(name, *e);
    if (!e->exists) return not_found(name);
    Reply r;
    r.body = e->document;
    r.headers[kRevisionHeader] = std::to_string(e->revision);
    return r;
  } catch (const Error& err) {
    return error_reply(err);
  }
}

Reply SceneService::put_scene(const std::string& name, const std::string& body,
                              std::optional<std::uint64_t> expected_revision) {
  try {
    auto e = entry(name);
    Scene scene = parse_scene(body, config_.budget);
    std::lock_guard lock(e->mutex);
    load(name, *e);
    if (expected_revision && *expected_revision != e->revision) {
      return error_reply(409, "service.conflict",
                         "scene '" + name + "' is at revision " + std::to_string(e->revision) + ", not " +
                             std::to_string(*expected_revision));
    }
    const std::uint64_t revision = e->revision + 1;
    persist(name, revision, body);
    const bool created = !e->exists;
    e->exists = true;
    e->revision = revision;
    e->document = body;
    e->scene = std::move(scene);
    return json_reply(json{{"revision", revision}}, revision, created ? 201 : 200);
  } catch (const Error& err) {
    return error_reply(err);
  }
}

Reply SceneService::edit_scene(const std::string& name, const std::string& body) {
  try {
    auto e = entry(name);
    const json req = json_util::parse(body, kModule);
    if (!req.is_object()) fail(Errc::parse_error, "edit request must be a JSON object");
    json_util::expect_keys(req, "edit request", {"revision", "ops"}, {}, kModule);
    if (!req.at("revision").is_number_unsigned()) fail(Errc::parse_error, "field 'revision' must be an unsigned integer");
    if (!req.at("ops").is_array()) fail(Errc::parse_error, "field 'ops' must be an array");
    const auto base = req.at("revision").get<std::uint64_t>();
    std::vector<EditOp> ops;
    for (const json& op : req.at("ops")) ops.push_back(edit_from_json(op));

    std::optional<Scene> updated;
    std::uint64_t revision = 0;
    {
      std::lock_guard lock(e->mutex);
      load(name, *e);
      if (!e->exists) return not_found(name);
      if (base != e->revision) {
        Reply r = error_reply(409, "service.conflict",
                              "edit was made against revision " + std::to_string(base) + " but scene '" + name +
                                  "' is at revision " + std::to_string(e->revision));
        r.headers[kRevisionHeader] = std::to_string(e->revision);
        return r;
      }
      updated = apply_edits(*e->scene, ops);
      revision = e->revision + 1;
      std::string document = serialize_scene(*updated);
      persist(name, revision, document);
      e->revision = revision;
      e->document = std::move(document);
      e->scene = updated;
    }
    return json_reply(json{{"revision", revision},
                           {"scene", scene_to_json(*updated)},
                           {"depth_png_b64", base64_encode(preview_png(*updated))}},
                      revision);
  } catch (const Error& err) {
    return error_reply(err);
  }
}

Reply SceneService::depth_preview(const std::string& name) {
  try {
    auto e = entry(name);
    std::optional<Scene> scene;
    std::uint64_t revision = 0;
    {
      std::lock_guard lock(e->mutex);
      load(name, *e);
      if (!e->exists) return not_found(name);
      scene = e->scene;
      revision = e->revision;
    }
    Reply r;
    r.body = preview_png(*scene);
    r.content_type = "image/png";
    r.headers[kRevisionHeader] = std::to_string(revision);
    return r;
  } catch (const Error& err) {
    return error_reply(err);
  }
}

Reply SceneService::render_scene(const std::string& name, const std::string& body) {
  try {
    auto e = entry(name);
    json extra = json::object();
    if (!body.empty()) {
      extra = json_util::parse(body, kModule);
      if (!extra.is_object()) fail(Errc::parse_error, "render request must be a JSON object");
      json_util::expect_keys(extra, "render request", {}, {"badge_image_b64", "badge_mask_b64", "hints"}, kModule);
    }
    std::optional<Scene> scene;
    std::uint64_t revision = 0;
    {
      std::lock_guard lock(e->mutex);
      load(name, *e);
      if (!e->exists) return not_found(name);
      scene = e->scene;
      revision = e->revision;
    }
    RenderRequest req = make_render_request(*scene, config_.threads);
    if (extra.contains("badge_image_b64") != extra.contains("badge_mask_b64")) {
      fail(Errc::missing_field, "badge_image_b64 and badge_mask_b64 must be given together");
    }
    if (extra.contains("badge_image_b64")) {
      req.badge = RenderBadge{decode_png_rgb(base64_decode(extra.at("badge_image_b64").get<std::string>())),
                              decode_png_mask(base64_decode(extra.at("badge_mask_b64").get<std::string>()))};
    }
    if (extra.contains("hints")) req.hints = extra.at("hints");
    validate_request(req);

    RenderResult result;
    try {
      result = config_.stub ? stub_render(req) : render_remote(*config_.renderer_endpoint, req, config_.remote);
    } catch (const Error& err) {
      return error_reply(502, err.qualified_code(), err.what());
    }
    Reply r;
    r.body = encode_png_rgb(result.image);
    r.content_type = "image/png";
    r.headers[kRevisionHeader] = std::to_string(revision);
    r.headers["X-B2W-Renderer"] = result.renderer;
    r.headers["X-B2W-Elapsed-Ms"] = std::to_string(result.elapsed_ms);
    return r;
  } catch (const Error& err) {
    return error_reply(err);
  } catch (const nlohmann::json::exception& err) {
    return error_reply(400, "service.parse_error", err.what());
  }
}

struct HttpService::Impl {
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const Reply& reply) {
  res.status = reply.status;
  for (const auto& [k, v] : reply.headers) res.set_header(k, v);
  res.set_content(reply.body, reply.content_type);
}

}  // namespace

HttpService::HttpService(SceneService& scenes, bool serve_render_endpoint) : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Expose-Headers", std::string(kRevisionHeader) + ", X-B2W-Renderer"}});
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, If-Match");
    res.status = 204;
  });
  srv.Get("/v1/health", [&scenes](const httplib::Request&, httplib::Response& res) { send(res, scenes.health()); });
  srv.Get(R"(/v1/scene/([A-Za-z0-9_-]+))", [&scenes](const httplib::Request& req, httplib::Response& res) {
    send(res, scenes.get_scene(req.matches[1]));
  });
  srv.Put(R"(/v1/scene/([A-Za-z0-9_-]+))", [&scenes](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::uint64_t> expected;
    if (req.has_header("If-Match")) {
      std::string v = req.get_header_value("If-Match");
      if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
      try {
        std::size_t used = 0;
        expected = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        send(res, error_reply(400, "service.parse_error", "If-Match must carry a revision number"));
        return;
      }
    }
    send(res, scenes.put_scene(req.matches[1], req.body, expected));
  });
  srv.Post(R"(/v1/scene/([A-Za-z0-9_-]+)/edit)", [&scenes](const httplib::Request& req, httplib::Response& res) {
    send(res, scenes.edit_scene(req.matches[1], req.body));
  });
  srv.Get(R"(/v1/scene/([A-Za-z0-9_-]+)/depth\.png)", [&scenes](const httplib::Request& req, httplib::Response& res) {
    send(res, scenes.depth_preview(req.matches[1]));
  });
  srv.Post(R"(/v1/scene/([A-Za-z0-9_-]+)/render)", [&scenes](const httplib::Request& req, httplib::Response& res) {
    send(res, scenes.render_scene(req.matches[1], req.body));
  });
  if (serve_render_endpoint) {
    srv.Post("/v1/render", [](const httplib::Request& req, httplib::Response& res) {
      const HttpReply reply = handle_render_request(req.body);
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    });
  }
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "service.internal", message));
  });
}

HttpService::~HttpService() = default;

int HttpService::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpService::run() { impl_->server.listen_after_bind(); }

void HttpService::stop() { impl_->server.stop(); }

}  // namespace b2w::app

#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "b2w/raster.hpp"

namespace b2w {

struct TextureBadge;

// Badge as it travels on the wire: the image with masked pixels already
// blacked out, plus the mask (1 = to be inpainted).
struct RenderBadge {
  Image image;
  Mask mask;

  bool operator==(const RenderBadge&) const = default;
};

RenderBadge to_render_badge(const TextureBadge& badge);

struct RenderRequest {
  std::string prompt;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  DepthMap depth;  // metres, +inf where nothing was hit; carried as float32
  std::optional<RenderBadge> badge;
  nlohmann::json hints;  // opaque renderer hints (steps, guidance, ...); null when absent

  bool operator==(const RenderRequest&) const = default;
};

struct RenderResult {
  Image image;
  std::string renderer;
  double elapsed_ms = 0.0;

  bool operator==(const RenderResult&) const = default;
};

inline constexpr std::string_view kStubRendererName = "b2w-stub/1";
inline constexpr int kMaxRenderDimension = 8192;

// Throws dimension_mismatch / invalid_argument.
void validate_request(const RenderRequest& req);

std::string encode_request(const RenderRequest& req);
// Errors: parse_error (not JSON, bad base64), version_mismatch,
// missing_field / unknown_field, dimension_mismatch, truncated.
RenderRequest decode_request(std::string_view bytes);

std::string encode_result(const RenderResult& result);
// A {error:{code,message}} envelope is raised as renderer_failure.
RenderResult decode_result(std::string_view bytes);
std::string encode_error(std::string_view code, std::string_view message);

// Deterministic stand-in for a depth-conditioned renderer.
RenderResult stub_render(const RenderRequest& req);

struct RemoteOptions {
  std::chrono::milliseconds timeout{30000};
  int retries = 2;  // extra attempts after a transport failure
};

// `endpoint` is http://host[:port][/prefix]; the request is POSTed to
// prefix + "/v1/render". Errors: timeout, transport, protocol,
// renderer_failure.
RenderResult render_remote(const std::string& endpoint, const RenderRequest& req, const RemoteOptions& options = {});

// Sends an already encoded request body as-is and decodes the reply. Used by
// render_remote; exposed so conformance tests can send malformed bodies.
RenderResult post_render_body(const std::string& endpoint, const std::string& body, const RemoteOptions& options = {});

// Returns the B2W_RENDERER_URL environment variable if set and non-empty.
std::optional<std::string> renderer_url_from_env();

struct HttpReply {
  int status = 200;
  std::string body;
};

// Server side of POST /v1/render backed by stub_render. Malformed requests
// yield 400 with an error envelope.
HttpReply handle_render_request(std::string_view body);

// In-process HTTP server speaking the render protocol, for tests and demos.
class StubRenderServer {
 public:
  StubRenderServer();
  ~StubRenderServer();
  StubRenderServer(const StubRenderServer&) = delete;
  StubRenderServer& operator=(const StubRenderServer&) = delete;

  // Binds and starts serving; port 0 picks a free port. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const;
  std::string endpoint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace b2w

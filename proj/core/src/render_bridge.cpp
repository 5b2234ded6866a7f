#include "b2w/render_bridge.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <regex>
#include <thread>

#include "b2w/editor.hpp"
#include "b2w/error.hpp"
#include "b2w/raster_io.hpp"
#include "b2w/scene_io.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen internals.
#include <httplib.h>

namespace b2w {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kModule = "render_bridge";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

// Re-tags errors from lower layers so the caller sees which envelope field was bad.
template <typename F>
auto in_field(std::string_view name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(kModule, e.code(), std::string(name) + ": " + e.what());
  }
}

void check_version(const json& j) {
  const auto it = j.find("version");
  if (it == j.end()) fail(Errc::missing_field, "envelope lacks field 'version'");
  if (!it->is_string() || it->get<std::string>() != kFormatVersion) {
    fail(Errc::version_mismatch, "field 'version' is " + it->dump() + ", expected \"" + std::string(kFormatVersion) + "\"");
  }
}

int get_dimension(const json& j, const char* name) {
  const json& v = j.at(name);
  if (!v.is_number_integer()) fail(Errc::parse_error, std::string("field '") + name + "' must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < 1 || n > kMaxRenderDimension) {
    fail(Errc::dimension_mismatch, std::string("field '") + name + "' = " + std::to_string(n) + " is out of range");
  }
  return static_cast<int>(n);
}

std::string get_string(const json& j, const char* name) {
  const json& v = j.at(name);
  if (!v.is_string()) fail(Errc::parse_error, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

std::uint64_t fnv1a(std::string_view prompt, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ull;
  };
  for (char c : prompt) mix(static_cast<unsigned char>(c));
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  return h;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double x = h * 6.0;
  const int i = static_cast<int>(std::floor(x)) % 6;
  const double f = x - std::floor(x);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Endpoint {
  std::string host;
  int port = 80;
  std::string prefix;
};

Endpoint parse_endpoint(const std::string& url) {
  static const std::regex re(R"(^http://([^/:]+)(?::([0-9]{1,5}))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    fail(Errc::invalid_argument, "renderer endpoint '" + url + "' is not of the form http://host[:port][/prefix]");
  }
  Endpoint ep;
  ep.host = m[1].str();
  if (m[2].matched) ep.port = std::stoi(m[2].str());
  ep.prefix = m[3].str();
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::string describe_error_body(const std::string& body) {
  try {
    const json j = json::parse(body);
    const json& e = j.at("error");
    return e.at("code").get<std::string>() + ": " + e.at("message").get<std::string>();
  } catch (const std::exception&) {
    return body.substr(0, 200);
  }
}

}  // namespace

RenderBadge to_render_badge(const TextureBadge& badge) { return RenderBadge{badge.blacked_out(), badge.mask}; }

void validate_request(const RenderRequest& req) {
  if (req.width < 1 || req.height < 1 || req.width > kMaxRenderDimension || req.height > kMaxRenderDimension) {
    fail(Errc::dimension_mismatch,
         "request size " + std::to_string(req.width) + "x" + std::to_string(req.height) + " is out of range");
  }
  if (!req.depth.same_shape(req.width, req.height) || req.depth.size() != static_cast<std::size_t>(req.width) * req.height) {
    fail(Errc::dimension_mismatch, "depth is " + std::to_string(req.depth.width) + "x" + std::to_string(req.depth.height) +
                                       " but request is " + std::to_string(req.width) + "x" + std::to_string(req.height));
  }
  validate_depth(req.depth);
  if (req.badge) {
    const RenderBadge& b = *req.badge;
    if (b.image.width != req.width || b.image.height != req.height ||
        b.image.rgb.size() != static_cast<std::size_t>(req.width) * req.height * 3) {
      fail(Errc::dimension_mismatch, "badge image does not match the request size");
    }
    if (!b.mask.same_shape(req.width, req.height) || b.mask.size() != static_cast<std::size_t>(req.width) * req.height) {
      fail(Errc::dimension_mismatch, "badge mask does not match the request size");
    }
  }
}

std::string encode_request(const RenderRequest& req) {
  validate_request(req);
  json j{{"version", kFormatVersion},
         {"prompt", req.prompt},
         {"seed", req.seed},
         {"width", req.width},
         {"height", req.height},
         {"depth_b64", base64_encode(encode_depth_binary(req.depth))}};
  if (req.badge) {
    j["badge_image_b64"] = base64_encode(encode_png_rgb(req.badge->image));
    j["badge_mask_b64"] = base64_encode(encode_png_mask(req.badge->mask));
  }
  if (!req.hints.is_null()) j["hints"] = req.hints;
  return j.dump();
}

RenderRequest decode_request(std::string_view bytes) {
  const json j = json_util::parse(bytes, kModule);
  if (!j.is_object()) fail(Errc::parse_error, "render request must be a JSON object");
  check_version(j);
  json_util::expect_keys(j, "render request", {"version", "prompt", "seed", "width", "height", "depth_b64"},
                         {"badge_image_b64", "badge_mask_b64", "hints"}, kModule);
  RenderRequest req;
  req.prompt = get_string(j, "prompt");
  const json& seed = j.at("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) fail(Errc::parse_error, "field 'seed' must be a non-negative integer");
  req.seed = j.at("seed").get<std::uint64_t>();
  req.width = get_dimension(j, "width");
  req.height = get_dimension(j, "height");
  req.depth = in_field("depth_b64", [&] { return decode_depth_binary(base64_decode(get_string(j, "depth_b64"))); });
  if (!req.depth.same_shape(req.width, req.height)) {
    fail(Errc::dimension_mismatch, "depth_b64: raster is " + std::to_string(req.depth.width) + "x" +
                                       std::to_string(req.depth.height) + " but width/height declare " +
                                       std::to_string(req.width) + "x" + std::to_string(req.height));
  }
  const bool has_image = j.contains("badge_image_b64");
  const bool has_mask = j.contains("badge_mask_b64");
  if (has_image != has_mask) {
    fail(Errc::missing_field, has_image ? "badge_image_b64 given without badge_mask_b64"
                                        : "badge_mask_b64 given without badge_image_b64");
  }
  if (has_image) {
    RenderBadge badge;
    badge.image = in_field("badge_image_b64",
                           [&] { return decode_png_rgb(base64_decode(get_string(j, "badge_image_b64"))); });
    badge.mask = in_field("badge_mask_b64",
                          [&] { return decode_png_mask(base64_decode(get_string(j, "badge_mask_b64"))); });
    req.badge = std::move(badge);
  }
  if (j.contains("hints")) req.hints = j.at("hints");
  validate_request(req);
  return req;
}

std::string encode_result(const RenderResult& result) {
  json j{{"version", kFormatVersion},
         {"image_png_b64", base64_encode(encode_png_rgb(result.image))},
         {"renderer", result.renderer},
         {"elapsed_ms", result.elapsed_ms}};
  return j.dump();
}

RenderResult decode_result(std::string_view bytes) {
  const json j = json_util::parse(bytes, kModule);
  if (!j.is_object()) fail(Errc::parse_error, "render response must be a JSON object");
  if (j.contains("error")) {
    json_util::expect_keys(j, "error envelope", {"error"}, {"version"}, kModule);
    const json& e = j.at("error");
    if (!e.is_object()) fail(Errc::parse_error, "field 'error' must be an object");
    json_util::expect_keys(e, "error", {"code", "message"}, {}, kModule);
    fail(Errc::renderer_failure, get_string(e, "code") + ": " + get_string(e, "message"));
  }
  check_version(j);
  json_util::expect_keys(j, "render response", {"version", "image_png_b64", "renderer", "elapsed_ms"}, {}, kModule);
  RenderResult out;
  out.image = in_field("image_png_b64", [&] { return decode_png_rgb(base64_decode(get_string(j, "image_png_b64"))); });
  out.renderer = get_string(j, "renderer");
  if (!j.at("elapsed_ms").is_number()) fail(Errc::parse_error, "field 'elapsed_ms' must be a number");
  out.elapsed_ms = j.at("elapsed_ms").get<double>();
  return out;
}

std::string encode_error(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

RenderResult stub_render(const RenderRequest& req) {
  const auto t0 = Clock::now();
  validate_request(req);

  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (double d : req.depth.data) {
    if (!std::isfinite(d)) continue;
    lo = std::min(lo, 1.0 / d);
    hi = std::max(hi, 1.0 / d);
  }
  const std::uint64_t h = fnv1a(req.prompt, req.seed);
  const double hue = static_cast<double>(h >> 11) * 0x1.0p-53;
  const auto tint = hsv_to_rgb(hue, 0.5, 1.0);

  RenderResult out;
  out.image = Image(req.width, req.height);
  for (std::size_t i = 0; i < req.depth.size(); ++i) {
    const double d = req.depth.data[i];
    double lum = 0.05;  // background
    if (std::isfinite(d)) {
      const double n = hi > lo ? (1.0 / d - lo) / (hi - lo) : 1.0;
      lum = 0.2 + 0.8 * n;
    }
    for (int c = 0; c < 3; ++c) {
      out.image.rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(255.0 * lum * tint[c]));
    }
  }
  if (req.badge) {
    for (std::size_t i = 0; i < req.badge->mask.size(); ++i) {
      if (req.badge->mask.data[i]) continue;
      for (int c = 0; c < 3; ++c) out.image.rgb[3 * i + c] = req.badge->image.rgb[3 * i + c];
    }
  }
  out.renderer = std::string(kStubRendererName);
  out.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  return out;
}

RenderResult post_render_body(const std::string& endpoint, const std::string& body, const RemoteOptions& options) {
  const Endpoint ep = parse_endpoint(endpoint);
  if (options.timeout.count() <= 0) fail(Errc::invalid_argument, "timeout must be positive");
  if (options.retries < 0) fail(Errc::invalid_argument, "retry count must be non-negative");
  const auto sec = static_cast<time_t>(options.timeout.count() / 1000);
  const auto usec = static_cast<time_t>((options.timeout.count() % 1000) * 1000);
  const std::string path = ep.prefix + "/v1/render";

  for (int attempt = 0;; ++attempt) {
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    const auto t0 = Clock::now();
    const httplib::Result res = client.Post(path, body, "application/json");
    if (!res) {
      const httplib::Error err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                              Clock::now() - t0 >= options.timeout);
      if (timed_out) {
        fail(Errc::timeout, "no response from " + endpoint + " within " + std::to_string(options.timeout.count()) + " ms");
      }
      if (attempt < options.retries) continue;
      fail(Errc::transport, "request to " + endpoint + " failed after " + std::to_string(attempt + 1) +
                                " attempt(s): " + httplib::to_string(err));
    }
    if (res->status >= 400 && res->status < 500) {
      fail(Errc::protocol, "renderer rejected the request (HTTP " + std::to_string(res->status) +
                               "): " + describe_error_body(res->body));
    }
    if (res->status != 200) {
      fail(Errc::renderer_failure,
           "renderer failed (HTTP " + std::to_string(res->status) + "): " + describe_error_body(res->body));
    }
    try {
      return decode_result(res->body);
    } catch (const Error& e) {
      if (e.code() == Errc::renderer_failure) throw;
      fail(Errc::protocol, std::string("malformed render response: ") + e.what());
    }
  }
}

RenderResult render_remote(const std::string& endpoint, const RenderRequest& req, const RemoteOptions& options) {
  const std::string body = encode_request(req);
  RenderResult out = post_render_body(endpoint, body, options);
  if (out.image.width != req.width || out.image.height != req.height) {
    fail(Errc::protocol, "renderer returned a " + std::to_string(out.image.width) + "x" +
                             std::to_string(out.image.height) + " image for a " + std::to_string(req.width) + "x" +
                             std::to_string(req.height) + " request");
  }
  return out;
}

std::optional<std::string> renderer_url_from_env() {
  const char* v = std::getenv("B2W_RENDERER_URL");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

HttpReply handle_render_request(std::string_view body) {
  try {
    const RenderRequest req = decode_request(body);
    return HttpReply{200, encode_result(stub_render(req))};
  } catch (const Error& e) {
    return HttpReply{400, encode_error(e.qualified_code(), e.what())};
  } catch (const std::exception& e) {
    return HttpReply{500, encode_error("render_bridge.renderer_failure", e.what())};
  }
}

struct StubRenderServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = -1;
};

StubRenderServer::StubRenderServer() : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/v1/render", [](const httplib::Request& req, httplib::Response& res) {
    const HttpReply reply = handle_render_request(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  impl_->server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"status", "ok"}, {"renderer", kStubRendererName}, {"version", kFormatVersion}}.dump(),
                    "application/json");
  });
}

StubRenderServer::~StubRenderServer() { stop(); }

int StubRenderServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) fail(Errc::invalid_argument, "stub render server already started");
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
  impl_->host = host;
  impl_->port = bound;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void StubRenderServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

int StubRenderServer::port() const { return impl_->port; }

std::string StubRenderServer::endpoint() const { return "http://" + impl_->host + ":" + std::to_string(impl_->port); }

}  // namespace b2w

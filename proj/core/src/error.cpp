#include "b2w/error.hpp"

namespace b2w {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::parse_error: return "parse_error";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::unknown_field: return "unknown_field";
    case Errc::missing_field: return "missing_field";
    case Errc::duplicate_id: return "duplicate_id";
    case Errc::unknown_id: return "unknown_id";
    case Errc::budget_exceeded: return "budget_exceeded";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::truncated: return "truncated";
    case Errc::degenerate: return "degenerate";
    case Errc::infeasible: return "infeasible";
    case Errc::unbounded: return "unbounded";
    case Errc::io_error: return "io_error";
    case Errc::timeout: return "timeout";
    case Errc::transport: return "transport";
    case Errc::protocol: return "protocol";
    case Errc::renderer_failure: return "renderer_failure";
    case Errc::conflict: return "conflict";
  }
  return "unknown";
}

Error::Error(std::string module, Errc code, const std::string& message)
    : std::runtime_error(module + "." + std::string(to_string(code)) + ": " + message),
      module_(std::move(module)),
      code_(code) {}

std::string Error::qualified_code() const {
  return module_ + "." + std::string(to_string(code_));
}

}  // namespace b2w

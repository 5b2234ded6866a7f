#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace b2w {

enum class Errc {
  invalid_argument,
  parse_error,
  version_mismatch,
  unknown_field,
  missing_field,
  duplicate_id,
  unknown_id,
  budget_exceeded,
  dimension_mismatch,
  truncated,
  degenerate,
  infeasible,
  unbounded,
  io_error,
  timeout,
  transport,
  protocol,
  renderer_failure,
  conflict,
};

std::string_view to_string(Errc code);

// All library failures are reported as b2w::Error. The module tag plus the
// code yields a stable qualified code such as "scene.duplicate_id", which the
// CLI prints and the HTTP layers embed in error envelopes.
class Error : public std::runtime_error {
 public:
  Error(std::string module, Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }
  std::string qualified_code() const;

 private:
  std::string module_;
  Errc code_;
};

}  // namespace b2w

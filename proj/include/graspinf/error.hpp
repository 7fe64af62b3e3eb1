#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace graspinf {

/// Error categories raised across the library. The CLI maps these onto exit
/// codes (see `exit_code_for`).
enum class Errc {
  InvalidInput,
  ShapeMismatch,
  NonFiniteActivation,
  StaleCache,
  ConfigError,
  DataError,
  FileError,
  NoPlaneFound,
  EmptySegment,
  DegenerateGeometry,
  UnknownTag,
  NonFiniteObjective,
  AllRestartsFailed,
  NoVisibleSurface,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// 2 config, 3 data/file, 4 everything else.
int exit_code_for(Errc code);

}  // namespace graspinf

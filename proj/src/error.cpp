#include "graspinf/error.hpp"

namespace graspinf {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::StaleCache: return "StaleCache";
    case Errc::ConfigError: return "ConfigError";
    case Errc::DataError: return "DataError";
    case Errc::FileError: return "FileError";
    case Errc::NoPlaneFound: return "NoPlaneFound";
    case Errc::EmptySegment: return "EmptySegment";
    case Errc::DegenerateGeometry: return "DegenerateGeometry";
    case Errc::UnknownTag: return "UnknownTag";
    case Errc::NonFiniteObjective: return "NonFiniteObjective";
    case Errc::AllRestartsFailed: return "AllRestartsFailed";
    case Errc::NoVisibleSurface: return "NoVisibleSurface";
  }
  return "Unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
      return 2;
    case Errc::DataError:
    case Errc::FileError:
      return 3;
    default:
      return 4;
  }
}

}  // namespace graspinf

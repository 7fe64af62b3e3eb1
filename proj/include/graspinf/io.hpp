#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace graspinf {

std::uint64_t fnv1a(const std::string& bytes);
/// 16 hex digits of the FNV-1a hash of the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

/// Throws FileError / DataError with the path in the message.
nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
/// Pretty JSON with a trailing newline.
void write_json_file(const std::string& path, const nlohmann::json& doc);
void ensure_directory(const std::string& path);

}  // namespace graspinf

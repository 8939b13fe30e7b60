#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace rlvr {

// Lower-case hex SHA-256.
std::string sha256Hex(std::string_view bytes);
std::string fileSha256(const std::filesystem::path& path);

}  // namespace rlvr

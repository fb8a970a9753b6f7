#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace csg {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Little-endian encodings independent of host byte order.
std::string encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::string_view bytes);
std::string encode_i32_le(std::span<const std::int32_t> values);
std::vector<std::int32_t> decode_i32_le(std::string_view bytes);

}  // namespace csg

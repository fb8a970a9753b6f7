#include "csg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csg/errors.hpp"

namespace csg {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace {

template <typename T>
std::string encode_le(std::span<const T> values) {
  static_assert(sizeof(T) == 4);
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

template <typename T>
std::vector<T> decode_le(std::string_view bytes) {
  if (bytes.size() % 4 != 0) {
    throw IntegrityError("blob length is not a multiple of 4", bytes.size() / 4 * 4 + 4,
                         bytes.size());
  }
  std::vector<T> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    out[i] = std::bit_cast<T>(bits);
  }
  return out;
}

}  // namespace

std::string encode_f32_le(std::span<const float> values) { return encode_le(values); }
std::vector<float> decode_f32_le(std::string_view bytes) { return decode_le<float>(bytes); }
std::string encode_i32_le(std::span<const std::int32_t> values) { return encode_le(values); }
std::vector<std::int32_t> decode_i32_le(std::string_view bytes) {
  return decode_le<std::int32_t>(bytes);
}

}  // namespace csg

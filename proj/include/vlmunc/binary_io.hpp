#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "vlmunc/error.hpp"

namespace vlmunc::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian and written by memcpy");

/// Append-only little-endian byte buffer used to assemble binary files in memory.
class ByteWriter {
 public:
  void magic(std::string_view tag) {
    bytes_.insert(bytes_.end(), tag.begin(), tag.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::array<char, sizeof(T)> raw{};
    std::memcpy(raw.data(), &value, sizeof(T));
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_span(std::span<const T> values) {
    const auto* first = reinterpret_cast<const char*>(values.data());
    bytes_.insert(bytes_.end(), first, first + values.size_bytes());
  }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

/// Bounds-checked cursor over a file's bytes.
class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  void expect_magic(std::string_view tag, std::string_view module) {
    require(tag.size(), module);
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag) {
      throw Error(ErrorCode::MagicMismatch, module,
                  source_ + ": expected magic \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(std::string_view module) {
    require(sizeof(T), module);
    T value{};
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_span(std::span<T> out, std::string_view module) {
    require(out.size_bytes(), module);
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  const std::string& source() const noexcept { return source_; }

  void expect_end(std::string_view module) const {
    if (remaining() != 0) {
      throw Error(ErrorCode::DimensionMismatch, module,
                  source_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

 private:
  void require(std::size_t n, std::string_view module) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::DimensionMismatch, module, source_ + ": file truncated");
    }
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path, std::string_view module) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::MissingFile, module, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, module, "cannot open " + path.string());
  const auto size = std::filesystem::file_size(path);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::IoFailure, module, "short read on " + path.string());
  }
  return bytes;
}

inline std::string read_text(const std::filesystem::path& path, std::string_view module) {
  auto bytes = read_file(path, module);
  return std::string(bytes.begin(), bytes.end());
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes,
                              std::string_view module) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, module, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, module, "short write on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, module, "rename to " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text,
                              std::string_view module) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()), module);
}

}  // namespace vlmunc::io

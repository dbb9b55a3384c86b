#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "tae/error.hpp"

namespace tae::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  Bytes& bytes() noexcept { return bytes_; }

 private:
  Bytes bytes_;
};

/// Bounds-checked little-endian reader. Every underflow raises Truncated
/// with the expected and available byte counts.
class Reader {
 public:
  Reader(const Bytes& bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw Error(ErrorCode::BadMagic, context_ + ": bad magic, expected '" + std::string(m) + "'");
    pos_ += m.size();
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::Truncated, context_ + ": truncated " + what + ", expected " + std::to_string(n) + " bytes, found " +
                                            std::to_string(bytes_.size() - pos_));
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  const std::uint8_t* cursor() const noexcept { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

  void expect_end() const {
    if (remaining() != 0) throw Error(ErrorCode::Truncated, context_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }

 private:
  const Bytes& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace tae::io

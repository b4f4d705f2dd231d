#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "corisk/error.hpp"

namespace corisk {

// Little-endian binary encoding for bundle sections. Doubles are stored as
// their IEEE-754 bit patterns, so a save/load round trip is value-exact.
class BinaryWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_u64(std::uint64_t v) { put(v); }
  void put_string(std::string_view s) {
    put_u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  template <typename T>
  void put_vector(const std::vector<T>& v) {
    put_u64(v.size());
    for (const T& x : v) put(x);
  }
  void put_raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class BinaryReader {
 public:
  BinaryReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}
  explicit BinaryReader(const std::vector<unsigned char>& bytes)
      : BinaryReader(bytes.data(), bytes.size()) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  std::size_t get_size(std::size_t limit = std::size_t{1} << 34) {
    const auto n = get_u64();
    if (n > limit) throw BundleError("bundle: implausible length field");
    return static_cast<std::size_t>(n);
  }
  std::string get_string() {
    const std::size_t n = get_size();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> get_vector() {
    const std::size_t n = get_size();
    need(n * sizeof(T));
    std::vector<T> v(n);
    for (auto& x : v) x = get<T>();
    return v;
  }
  std::string get_raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_tag(std::string_view tag) {
    if (get_raw(tag.size()) != tag) {
      throw BundleError("bundle: expected section '" + std::string(tag) + "'");
    }
  }
  bool at_end() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw BundleError("bundle: truncated data");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace corisk

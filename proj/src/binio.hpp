#pragma once

// Little-endian binary helpers shared by the tensor cache and checkpoints.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "adstory/common.hpp"

namespace adstory::binio {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view s) { out_.append(s.data(), s.size()); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  void put_doubles(const double* p, std::size_t n) {
    out_.append(reinterpret_cast<const char*>(p), n * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    return std::string(get_bytes(n, what));
  }
  void get_doubles(double* p, std::size_t n, const char* what) {
    if (n > (b_.size() - pos_) / sizeof(double))
      throw FormatError(std::string("truncated file while reading ") + what, pos_);
    std::memcpy(p, b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace adstory::binio

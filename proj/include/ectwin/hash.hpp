#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>

namespace ectwin {

/// Incremental 64-bit FNV-1a. Every step is a bijection of the running state, so any
/// single-byte change in the input changes the digest.
class Fnv1a64 {
 public:
  void update(std::span<const std::byte> bytes) noexcept {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_value(const T& value) noexcept {
    update(std::as_bytes(std::span<const T, 1>(&value, 1)));
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_range(std::span<const T> values) noexcept {
    update(std::as_bytes(values));
  }

  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex_digest(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace ectwin

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace paleo {

enum class ErrorCode {
  parse,
  format,
  configuration,
  degenerate,
  insufficient_data,
  parameter,
  numeric,
  coverage,
  io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a category so callers (and the
/// CLI exit-code logic) can tell configuration mistakes from data problems.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Inclusive range of integer AD years.
struct YearRange {
  int first = 0;
  int last = -1;

  constexpr int length() const noexcept { return last - first + 1; }
  constexpr bool empty() const noexcept { return last < first; }
  constexpr bool contains(int year) const noexcept { return year >= first && year <= last; }
  constexpr bool contains(const YearRange& other) const noexcept {
    return !other.empty() && contains(other.first) && contains(other.last);
  }
  constexpr bool operator==(const YearRange&) const = default;
};

std::string to_string(const YearRange& range);

// FNV-1a, used for content fingerprints. Stable across platforms and runs,
// unlike std::hash.
class Fingerprint {
 public:
  Fingerprint& add(std::span<const std::byte> bytes) noexcept;
  Fingerprint& add(std::span<const double> values) noexcept;
  Fingerprint& add(std::string_view text) noexcept;
  Fingerprint& add(std::uint64_t value) noexcept;
  Fingerprint& add(double value) noexcept;

  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);

/// Shortest decimal that reads back to the same double.
std::string format_double(double value);

}  // namespace paleo

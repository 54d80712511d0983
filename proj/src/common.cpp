#include "paleo/common.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>

namespace paleo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse error";
    case ErrorCode::format: return "format error";
    case ErrorCode::configuration: return "configuration error";
    case ErrorCode::degenerate: return "degenerate input";
    case ErrorCode::insufficient_data: return "insufficient data";
    case ErrorCode::parameter: return "parameter error";
    case ErrorCode::numeric: return "numeric error";
    case ErrorCode::coverage: return "coverage error";
    case ErrorCode::io: return "i/o error";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

std::string to_string(const YearRange& range) {
  return std::to_string(range.first) + "-" + std::to_string(range.last);
}

Fingerprint& Fingerprint::add(std::span<const std::byte> bytes) noexcept {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fingerprint& Fingerprint::add(std::span<const double> values) noexcept {
  for (double v : values) add(v);
  return *this;
}

Fingerprint& Fingerprint::add(std::string_view text) noexcept {
  add(static_cast<std::uint64_t>(text.size()));
  return add(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

Fingerprint& Fingerprint::add(std::uint64_t value) noexcept {
  std::byte bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<std::byte>((value >> (8 * i)) & 0xffU);
  return add(std::span<const std::byte>(bytes, 8));
}

Fingerprint& Fingerprint::add(double value) noexcept {
  if (value == 0.0) value = 0.0;  // fold -0.0
  return add(std::bit_cast<std::uint64_t>(value));
}

std::string Fingerprint::hex() const { return hex64(state_); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace paleo

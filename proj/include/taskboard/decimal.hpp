#pragma once

// Fixed-point presentation with round-half-even.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <optional>
#include <string>
#include <string_view>

namespace taskboard {

/// Exact rational num/den, rounded half-even to an integer.
inline std::int64_t round_half_even_div(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::domain_error("round_half_even_div: zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  std::int64_t q = num / den;
  std::int64_t r = num % den;
  if (r < 0) {  // floor division
    q -= 1;
    r += den;
  }
  const std::int64_t twice = 2 * r;
  if (twice > den || (twice == den && (q % 2 != 0))) q += 1;
  return q;
}

/// Renders `units / 10^digits` with exactly `digits` fractional digits.
inline std::string format_scaled(std::int64_t units, int digits) {
  const bool negative = units < 0;
  std::uint64_t mag = negative ? static_cast<std::uint64_t>(-(units + 1)) + 1 : static_cast<std::uint64_t>(units);
  std::uint64_t scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  std::string frac = std::to_string(mag % scale);
  if (digits > 0) frac.insert(0, static_cast<std::size_t>(digits) - frac.size(), '0');
  std::string out = negative ? "-" : "";
  out += std::to_string(mag / scale);
  if (digits > 0) out += "." + frac;
  return out;
}

/// Milliseconds as seconds with 2 decimals ("78.65").
inline std::string format_ms_as_seconds(std::int64_t ms) { return format_scaled(round_half_even_div(ms, 10), 2); }

/// Exact ratio of milliseconds (e.g. a mean) as seconds with 2 decimals.
inline std::string format_ms_ratio_as_seconds(std::int64_t num_ms, std::int64_t den) {
  return format_scaled(round_half_even_div(num_ms, 10 * den), 2);
}

/// Decimal rendering of a double with exactly three fractional digits.
/// Rounds the exact binary value, ties to even.
inline std::string format_fixed3(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, 3);
  if (ec != std::errc{}) throw std::range_error("format_fixed3: value out of range");
  return std::string(buf, ptr);
}

/// Nearest double to the 3-decimal rendering of `value`; a fixed point of
/// format_fixed3 followed by parsing.
inline double quantize_milli(double value) {
  const std::string text = format_fixed3(value);
  double out = 0.0;
  std::from_chars(text.data(), text.data() + text.size(), out);
  return out;
}

/// Parses a non-negative decimal number of seconds ("178.02") into exact
/// milliseconds. At most three fractional digits are accepted.
inline std::optional<std::int64_t> parse_seconds_to_ms(std::string_view text) {
  const auto dot = text.find('.');
  const std::string_view whole = text.substr(0, dot);
  const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  if (whole.empty() || frac.size() > 3 || (dot != std::string_view::npos && frac.empty())) return std::nullopt;
  std::int64_t ms = 0;
  for (char c : whole) {
    if (c < '0' || c > '9' || ms > 1'000'000'000'000) return std::nullopt;
    ms = ms * 10 + (c - '0');
  }
  ms *= 1000;
  std::int64_t scale = 100;
  for (char c : frac) {
    if (c < '0' || c > '9') return std::nullopt;
    ms += (c - '0') * scale;
    scale /= 10;
  }
  return ms;
}

}  // namespace taskboard

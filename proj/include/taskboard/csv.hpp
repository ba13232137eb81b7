#pragma once

#include <string>
#include <string_view>

namespace taskboard {

/// Quotes a CSV field when it contains a separator, quote or line break.
inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace taskboard

#pragma once

// Line-oriented trace files:
//
//   # comment
//   <t_device_ms> <EVENT_KIND>
//   <t_device_ms> ARM
//   <t_device_ms> START
//   <t_device_ms> ACCEL_BURST <peak_g> <dur_ms>
//
// Entries must be sorted by time (ties allowed).

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "taskboard/protocol.hpp"

namespace taskboard {

struct ArmCommand {
  friend bool operator==(const ArmCommand&, const ArmCommand&) = default;
};
struct StartCommand {
  friend bool operator==(const StartCommand&, const StartCommand&) = default;
};
struct AccelBurst {
  double peak_g = 0.0;
  DeviceMillis duration_ms = 0;
  friend bool operator==(const AccelBurst&, const AccelBurst&) = default;
};

using TraceAction = std::variant<CircuitEvent, ArmCommand, StartCommand, AccelBurst>;

struct TraceEntry {
  DeviceMillis t_ms = 0;
  TraceAction action;
  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct EventTrace {
  std::vector<TraceEntry> entries;

  /// Number of circuit events (control lines excluded).
  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += std::holds_alternative<CircuitEvent>(e.action) ? 1 : 0;
    return n;
  }

  std::vector<CircuitEvent> events() const {
    std::vector<CircuitEvent> out;
    for (const auto& e : entries) {
      if (const auto* ev = std::get_if<CircuitEvent>(&e.action)) out.push_back(*ev);
    }
    return out;
  }

  DeviceMillis last_time() const { return entries.empty() ? 0 : entries.back().t_ms; }

  friend bool operator==(const EventTrace&, const EventTrace&) = default;
};

class TraceError : public std::runtime_error {
 public:
  TraceError(const std::string& what, std::size_t line_no)
      : std::runtime_error(what + " at line " + std::to_string(line_no)), line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class TraceParseError : public TraceError {
 public:
  TraceParseError(const std::string& reason, std::size_t line_no)
      : TraceError("trace parse error: " + reason, line_no) {}
};

class UnsortedTrace : public TraceError {
 public:
  explicit UnsortedTrace(std::size_t line_no) : TraceError("trace not time-sorted", line_no) {}
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace detail

inline EventTrace parse_trace(std::string_view text) {
  EventTrace trace;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (tokens.size() < 2) throw TraceParseError("expected '<t_ms> <KIND>'", line_no);

    TraceEntry entry;
    if (!detail::parse_number(tokens[0], entry.t_ms)) {
      throw TraceParseError("bad timestamp '" + std::string(tokens[0]) + "'", line_no);
    }
    const std::string_view kind = tokens[1];
    const std::size_t expected_tokens = kind == "ACCEL_BURST" ? 4 : 2;
    if (tokens.size() != expected_tokens) {
      throw TraceParseError("wrong number of fields for " + std::string(kind), line_no);
    }

    if (kind == "ARM") {
      entry.action = ArmCommand{};
    } else if (kind == "START") {
      entry.action = StartCommand{};
    } else if (kind == "ACCEL_BURST") {
      AccelBurst burst;
      if (!detail::parse_number(tokens[2], burst.peak_g) || !(burst.peak_g >= 0.0)) {
        throw TraceParseError("bad burst peak", line_no);
      }
      if (!detail::parse_number(tokens[3], burst.duration_ms) || burst.duration_ms == 0) {
        throw TraceParseError("bad burst duration", line_no);
      }
      entry.action = burst;
    } else if (auto ev = parse_event_kind(kind)) {
      entry.action = CircuitEvent{*ev, entry.t_ms};
    } else {
      throw TraceParseError("unknown kind '" + std::string(kind) + "'", line_no);
    }

    if (!trace.entries.empty() && entry.t_ms < trace.entries.back().t_ms) throw UnsortedTrace(line_no);
    trace.entries.push_back(std::move(entry));
  }
  return trace;
}

inline EventTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_trace(buf.str());
}

inline std::string format_trace(const EventTrace& trace) {
  std::string out;
  for (const auto& e : trace.entries) {
    out += std::to_string(e.t_ms);
    out += ' ';
    if (const auto* ev = std::get_if<CircuitEvent>(&e.action)) {
      out += event_name(ev->kind);
    } else if (std::holds_alternative<ArmCommand>(e.action)) {
      out += "ARM";
    } else if (std::holds_alternative<StartCommand>(e.action)) {
      out += "START";
    } else {
      const auto& b = std::get<AccelBurst>(e.action);
      std::ostringstream s;
      s << "ACCEL_BURST " << b.peak_g << ' ' << b.duration_ms;
      out += s.str();
    }
    out += '\n';
  }
  return out;
}

}  // namespace taskboard

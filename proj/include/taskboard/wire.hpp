#pragma once

// Telemetry record and its one-line wire encoding.
//
// A record is a compact JSON object with lexicographically sorted keys, no
// whitespace, and a trailing newline:
//
//   {"accel_sum":0.500,"endpoint_id":"b1","phase":"RUNNING","points":1,
//    "seq":3,"sent_epoch_ms":15000,"timestamps":{"batt1":null,...},
//    "trial_id":1,"v":1}
//
// accel_sum always carries exactly three fractional digits. Because the
// encoder controls key order and number formatting, byte equality of two
// encodings is equivalent to field equality of the records.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"
#include "taskboard/decimal.hpp"
#include "taskboard/protocol.hpp"

namespace taskboard {

inline constexpr int kWireVersion = 1;

struct TelemetryRecord {
  int v = kWireVersion;
  std::string endpoint_id;
  std::uint64_t seq = 0;
  std::int64_t sent_epoch_ms = 0;
  std::uint64_t trial_id = 0;
  TrialPhase phase = TrialPhase::kIdle;
  TaskTimestamps timestamps{};
  std::uint32_t points = 0;
  double accel_sum = 0.0;  // g*s, quantized to 0.001

  friend bool operator==(const TelemetryRecord&, const TelemetryRecord&) = default;
};

/// Snapshot of a trial as published on the wire.
inline TelemetryRecord make_record(std::string endpoint_id, std::uint64_t seq, std::int64_t sent_epoch_ms,
                                   const TrialRecord& trial) {
  TelemetryRecord rec;
  rec.endpoint_id = std::move(endpoint_id);
  rec.seq = seq;
  rec.sent_epoch_ms = sent_epoch_ms;
  rec.trial_id = trial.trial_id;
  rec.phase = trial.phase;
  rec.timestamps = trial.timestamps;
  rec.points = trial.points;
  rec.accel_sum = quantize_milli(trial.accel_sum);
  return rec;
}

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedRecord : public WireError {
 public:
  explicit MalformedRecord(const std::string& reason) : WireError("malformed record: " + reason) {}
};

class UnsupportedVersion : public WireError {
 public:
  explicit UnsupportedVersion(std::int64_t v)
      : WireError("unsupported record version " + std::to_string(v)), version_(v) {}
  std::int64_t version() const noexcept { return version_; }

 private:
  std::int64_t version_;
};

namespace detail {

// Timestamp keys in lexicographic order, paired with their task.
inline const std::array<std::pair<std::string_view, TaskId>, kTaskCount>& sorted_task_keys() {
  static const auto keys = [] {
    std::array<std::pair<std::string_view, TaskId>, kTaskCount> k{};
    for (std::size_t i = 0; i < kTaskCount; ++i) k[i] = {task_key(kAllTasks[i]), kAllTasks[i]};
    std::sort(k.begin(), k.end());
    return k;
  }();
  return keys;
}

}  // namespace detail

inline std::string encode_record(const TelemetryRecord& rec) {
  if (!std::isfinite(rec.accel_sum) || rec.accel_sum < 0.0) {
    throw std::invalid_argument("encode_record: accel_sum must be finite and non-negative");
  }
  std::string out;
  out.reserve(256);
  out += "{\"accel_sum\":";
  out += format_fixed3(rec.accel_sum);
  out += ",\"endpoint_id\":";
  out += nlohmann::json(rec.endpoint_id).dump();
  out += ",\"phase\":\"";
  out += phase_name(rec.phase);
  out += "\",\"points\":";
  out += std::to_string(rec.points);
  out += ",\"seq\":";
  out += std::to_string(rec.seq);
  out += ",\"sent_epoch_ms\":";
  out += std::to_string(rec.sent_epoch_ms);
  out += ",\"timestamps\":{";
  bool first = true;
  for (const auto& [key, task] : detail::sorted_task_keys()) {
    if (!first) out += ',';
    first = false;
    out += '"';
    out += key;
    out += "\":";
    const auto& t = rec.timestamps[index_of(task)];
    out += t ? std::to_string(*t) : "null";
  }
  out += "},\"trial_id\":";
  out += std::to_string(rec.trial_id);
  out += ",\"v\":";
  out += std::to_string(rec.v);
  out += "}\n";
  return out;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw MalformedRecord(std::string("missing key '") + key + "'");
  return *it;
}

template <typename T>
T require_unsigned(const nlohmann::json& obj, const char* key) {
  const auto& j = require(obj, key);
  if (!j.is_number_unsigned()) throw MalformedRecord(std::string("'") + key + "' must be a non-negative integer");
  const auto value = j.get<std::uint64_t>();
  if (value > std::numeric_limits<T>::max()) throw MalformedRecord(std::string("'") + key + "' out of range");
  return static_cast<T>(value);
}

}  // namespace detail

/// Parses one wire line. A single trailing newline is accepted; unknown keys
/// are ignored.
inline TelemetryRecord decode_record(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.find('\n') != std::string_view::npos) throw MalformedRecord("embedded newline");

  nlohmann::json doc = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw MalformedRecord("not valid JSON");
  if (!doc.is_object()) throw MalformedRecord("not an object");

  const auto& v = detail::require(doc, "v");
  if (!v.is_number_integer()) throw MalformedRecord("'v' must be an integer");
  if (v.get<std::int64_t>() != kWireVersion) throw UnsupportedVersion(v.get<std::int64_t>());

  TelemetryRecord rec;
  rec.v = kWireVersion;

  const auto& endpoint = detail::require(doc, "endpoint_id");
  if (!endpoint.is_string()) throw MalformedRecord("'endpoint_id' must be a string");
  rec.endpoint_id = endpoint.get<std::string>();
  if (rec.endpoint_id.empty()) throw MalformedRecord("'endpoint_id' is empty");

  rec.seq = detail::require_unsigned<std::uint64_t>(doc, "seq");
  rec.trial_id = detail::require_unsigned<std::uint64_t>(doc, "trial_id");
  rec.points = detail::require_unsigned<std::uint32_t>(doc, "points");

  const auto& sent = detail::require(doc, "sent_epoch_ms");
  if (!sent.is_number_integer()) throw MalformedRecord("'sent_epoch_ms' must be an integer");
  rec.sent_epoch_ms = sent.get<std::int64_t>();

  const auto& phase = detail::require(doc, "phase");
  if (!phase.is_string()) throw MalformedRecord("'phase' must be a string");
  auto parsed_phase = parse_phase(phase.get<std::string>());
  if (!parsed_phase) throw MalformedRecord("unknown phase '" + phase.get<std::string>() + "'");
  rec.phase = *parsed_phase;

  const auto& accel = detail::require(doc, "accel_sum");
  if (!accel.is_number()) throw MalformedRecord("'accel_sum' must be a number");
  rec.accel_sum = accel.get<double>();
  if (!std::isfinite(rec.accel_sum) || rec.accel_sum < 0.0) throw MalformedRecord("'accel_sum' out of range");

  const auto& stamps = detail::require(doc, "timestamps");
  if (!stamps.is_object()) throw MalformedRecord("'timestamps' must be an object");
  for (auto task : kAllTasks) {
    const std::string key(task_key(task));
    auto it = stamps.find(key);
    if (it == stamps.end()) throw MalformedRecord("missing timestamp '" + key + "'");
    if (it->is_null()) continue;
    if (!it->is_number_unsigned()) throw MalformedRecord("timestamp '" + key + "' must be null or integer");
    rec.timestamps[index_of(task)] = it->get<std::uint64_t>();
  }
  return rec;
}

}  // namespace taskboard

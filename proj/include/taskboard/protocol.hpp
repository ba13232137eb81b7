#pragma once

// Trial protocol state machine for the task board.
//
// Every transition is a pure function: a TrialRecord goes in, a new
// TrialRecord comes out. Nothing here touches a clock or a device; callers
// supply device-clock milliseconds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace taskboard {

/// Milliseconds on the board's monotonic clock.
using DeviceMillis = std::uint64_t;

inline constexpr DeviceMillis kTrialExpiryMs = 600000;

// ---------------------------------------------------------------------------
// Tasks and circuit events
// ---------------------------------------------------------------------------

/// Protocol steps in canonical column order. The first five are the
/// manipulation tasks; kStop closes the trial.
enum class TaskId : std::uint8_t {
  kFindBoard = 0,
  kKeySwitch,
  kPlug,
  kBatt1,
  kBatt2,
  kStop,
};

inline constexpr std::size_t kTaskCount = 6;
inline constexpr std::size_t kManipulationTaskCount = 5;

inline constexpr std::array<TaskId, kTaskCount> kAllTasks = {
    TaskId::kFindBoard, TaskId::kKeySwitch, TaskId::kPlug,
    TaskId::kBatt1,     TaskId::kBatt2,     TaskId::kStop,
};

constexpr std::size_t index_of(TaskId task) { return static_cast<std::size_t>(task); }

constexpr bool is_manipulation_task(TaskId task) { return task != TaskId::kStop; }

/// Wire key (lower snake case) used in telemetry records and CSV headers.
constexpr std::string_view task_key(TaskId task) {
  switch (task) {
    case TaskId::kFindBoard: return "find_board";
    case TaskId::kKeySwitch: return "key_switch";
    case TaskId::kPlug: return "plug";
    case TaskId::kBatt1: return "batt1";
    case TaskId::kBatt2: return "batt2";
    case TaskId::kStop: return "stop";
  }
  return "?";
}

/// Short column label for text tables.
constexpr std::string_view task_label(TaskId task) {
  switch (task) {
    case TaskId::kFindBoard: return "FIND";
    case TaskId::kKeySwitch: return "KEY";
    case TaskId::kPlug: return "PLUG";
    case TaskId::kBatt1: return "BATT1";
    case TaskId::kBatt2: return "BATT2";
    case TaskId::kStop: return "STOP";
  }
  return "?";
}

enum class CircuitEventKind : std::uint8_t {
  kBlueButtonPressed = 0,
  kKeySwitchActivated,
  kPlugSeatedTarget,
  kBatt1Dropped,
  kBatt2Dropped,
  kRedButtonPressed,
};

inline constexpr std::array<CircuitEventKind, kTaskCount> kAllEventKinds = {
    CircuitEventKind::kBlueButtonPressed, CircuitEventKind::kKeySwitchActivated,
    CircuitEventKind::kPlugSeatedTarget,  CircuitEventKind::kBatt1Dropped,
    CircuitEventKind::kBatt2Dropped,      CircuitEventKind::kRedButtonPressed,
};

// The enumerators are declared in matching order, so the mapping is 1:1.
constexpr TaskId task_for(CircuitEventKind kind) {
  return static_cast<TaskId>(static_cast<std::uint8_t>(kind));
}

constexpr std::string_view event_name(CircuitEventKind kind) {
  switch (kind) {
    case CircuitEventKind::kBlueButtonPressed: return "BLUE_BUTTON_PRESSED";
    case CircuitEventKind::kKeySwitchActivated: return "KEY_SWITCH_ACTIVATED";
    case CircuitEventKind::kPlugSeatedTarget: return "PLUG_SEATED_TARGET";
    case CircuitEventKind::kBatt1Dropped: return "BATT1_DROPPED";
    case CircuitEventKind::kBatt2Dropped: return "BATT2_DROPPED";
    case CircuitEventKind::kRedButtonPressed: return "RED_BUTTON_PRESSED";
  }
  return "?";
}

inline std::optional<CircuitEventKind> parse_event_kind(std::string_view name) {
  for (auto kind : kAllEventKinds) {
    if (event_name(kind) == name) return kind;
  }
  return std::nullopt;
}

struct CircuitEvent {
  CircuitEventKind kind;
  DeviceMillis t_device_ms = 0;

  friend bool operator==(const CircuitEvent&, const CircuitEvent&) = default;
};

// ---------------------------------------------------------------------------
// Board state
// ---------------------------------------------------------------------------

/// Physical component positions checked before the start button is armed.
struct BoardState {
  bool key_in_holster = true;
  bool plug_in_source_port = true;
  bool lid_closed = true;
  bool batt1_seated = true;
  bool batt2_seated = true;
  bool blue_button_released = true;
  bool red_button_released = true;

  /// Names of the fields that are not in their starting position, in
  /// declaration order.
  std::vector<std::string> missing() const {
    std::vector<std::string> out;
    if (!key_in_holster) out.emplace_back("key_in_holster");
    if (!plug_in_source_port) out.emplace_back("plug_in_source_port");
    if (!lid_closed) out.emplace_back("lid_closed");
    if (!batt1_seated) out.emplace_back("batt1_seated");
    if (!batt2_seated) out.emplace_back("batt2_seated");
    if (!blue_button_released) out.emplace_back("blue_button_released");
    if (!red_button_released) out.emplace_back("red_button_released");
    return out;
  }

  bool is_start_ready() const {
    return key_in_holster && plug_in_source_port && lid_closed && batt1_seated &&
           batt2_seated && blue_button_released && red_button_released;
  }

  friend bool operator==(const BoardState&, const BoardState&) = default;
};

/// Every component back in its starting position.
inline BoardState reset_board(const BoardState& /*state*/) { return BoardState{}; }

// ---------------------------------------------------------------------------
// Trial record
// ---------------------------------------------------------------------------

enum class TrialPhase : std::uint8_t { kIdle = 0, kArmed, kRunning, kCompleted, kExpired };

constexpr std::string_view phase_name(TrialPhase phase) {
  switch (phase) {
    case TrialPhase::kIdle: return "IDLE";
    case TrialPhase::kArmed: return "ARMED";
    case TrialPhase::kRunning: return "RUNNING";
    case TrialPhase::kCompleted: return "COMPLETED";
    case TrialPhase::kExpired: return "EXPIRED";
  }
  return "?";
}

inline std::optional<TrialPhase> parse_phase(std::string_view name) {
  for (auto p : {TrialPhase::kIdle, TrialPhase::kArmed, TrialPhase::kRunning,
                 TrialPhase::kCompleted, TrialPhase::kExpired}) {
    if (phase_name(p) == name) return p;
  }
  return std::nullopt;
}

constexpr bool is_finished(TrialPhase phase) {
  return phase == TrialPhase::kCompleted || phase == TrialPhase::kExpired;
}

/// True when `from -> to` is one of the protocol's legal transitions (or
/// no transition at all).
constexpr bool is_legal_transition(TrialPhase from, TrialPhase to) {
  if (from == to) return true;
  switch (from) {
    case TrialPhase::kIdle: return to == TrialPhase::kArmed;
    case TrialPhase::kArmed: return to == TrialPhase::kRunning || to == TrialPhase::kIdle;
    case TrialPhase::kRunning: return to == TrialPhase::kCompleted || to == TrialPhase::kExpired;
    case TrialPhase::kCompleted:
    case TrialPhase::kExpired: return false;
  }
  return false;
}

/// Completion times relative to trial start, indexed by TaskId.
using TaskTimestamps = std::array<std::optional<DeviceMillis>, kTaskCount>;

struct TrialRecord {
  std::uint64_t trial_id = 1;
  std::int64_t start_epoch_ms = 0;    // wall clock, reporting only
  DeviceMillis start_device_ms = 0;   // trial clock origin
  TaskTimestamps timestamps{};
  std::uint32_t points = 0;
  double accel_sum = 0.0;             // g*s
  TrialPhase phase = TrialPhase::kIdle;
  DeviceMillis expiry_ms = kTrialExpiryMs;

  const std::optional<DeviceMillis>& timestamp(TaskId task) const {
    return timestamps[index_of(task)];
  }

  bool manipulation_tasks_done() const {
    for (std::size_t i = 0; i < kManipulationTaskCount; ++i) {
      if (!timestamps[i]) return false;
    }
    return true;
  }

  std::size_t completed_count() const {
    return static_cast<std::size_t>(
        std::count_if(timestamps.begin(), timestamps.end(), [](const auto& t) { return t.has_value(); }));
  }

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Fresh IDLE record for the board's next trial.
inline TrialRecord next_trial(const TrialRecord& previous) {
  TrialRecord fresh;
  fresh.trial_id = previous.trial_id + 1;
  return fresh;
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WrongPhase : public ProtocolError {
 public:
  WrongPhase(std::string_view operation, TrialPhase actual)
      : ProtocolError(std::string(operation) + ": wrong phase " + std::string(phase_name(actual))),
        actual_(actual) {}
  TrialPhase actual() const noexcept { return actual_; }

 private:
  TrialPhase actual_;
};

class NotStartReady : public ProtocolError {
 public:
  explicit NotStartReady(std::vector<std::string> missing)
      : ProtocolError(describe(missing)), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  static std::string describe(const std::vector<std::string>& missing) {
    std::string msg = "board not in start position:";
    for (const auto& m : missing) msg += " " + m;
    return msg;
  }
  std::vector<std::string> missing_;
};

class TrialNotFinished : public ProtocolError {
 public:
  explicit TrialNotFinished(TrialPhase phase)
      : ProtocolError("trial not finished: " + std::string(phase_name(phase))) {}
};

// ---------------------------------------------------------------------------
// Transitions
// ---------------------------------------------------------------------------

inline TrialRecord arm(const BoardState& state, const TrialRecord& trial) {
  if (trial.phase != TrialPhase::kIdle) throw WrongPhase("arm", trial.phase);
  if (!state.is_start_ready()) throw NotStartReady(state.missing());
  TrialRecord out = trial;
  out.phase = TrialPhase::kArmed;
  return out;
}

/// Re-checks an armed board. A component moved out of its start position
/// drops the trial back to IDLE; any other phase is returned unchanged.
inline TrialRecord recheck_armed(const BoardState& state, const TrialRecord& trial) {
  if (trial.phase != TrialPhase::kArmed || state.is_start_ready()) return trial;
  TrialRecord out = trial;
  out.phase = TrialPhase::kIdle;
  return out;
}

inline TrialRecord start(const TrialRecord& trial, DeviceMillis t_device_ms,
                         std::int64_t start_epoch_ms = 0) {
  if (trial.phase != TrialPhase::kArmed) throw WrongPhase("start", trial.phase);
  TrialRecord out = trial;
  out.phase = TrialPhase::kRunning;
  out.start_device_ms = t_device_ms;
  out.start_epoch_ms = start_epoch_ms;
  out.timestamps = {};
  out.points = 0;
  out.accel_sum = 0.0;
  return out;
}

inline TrialRecord on_event(const TrialRecord& trial, const CircuitEvent& event) {
  if (trial.phase != TrialPhase::kRunning) throw WrongPhase("on_event", trial.phase);
  if (event.t_device_ms < trial.start_device_ms) {
    throw std::invalid_argument("on_event: event precedes trial start");
  }
  const DeviceMillis elapsed = event.t_device_ms - trial.start_device_ms;
  if (elapsed >= trial.expiry_ms) return trial;

  const TaskId task = task_for(event.kind);
  if (trial.timestamp(task)) return trial;
  if (task == TaskId::kStop && !trial.manipulation_tasks_done()) return trial;

  TrialRecord out = trial;
  out.timestamps[index_of(task)] = elapsed;
  out.points += 1;
  if (task == TaskId::kStop) out.phase = TrialPhase::kCompleted;
  return out;
}

inline TrialRecord tick(const TrialRecord& trial, DeviceMillis t_device_ms) {
  if (trial.phase != TrialPhase::kRunning) return trial;
  if (t_device_ms < trial.start_device_ms) return trial;
  if (t_device_ms - trial.start_device_ms < trial.expiry_ms) return trial;
  TrialRecord out = trial;
  out.phase = TrialPhase::kExpired;
  return out;
}

struct AccelSample {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double magnitude() const { return std::sqrt(x * x + y * y + z * z); }
};

/// Integrates the absolute deviation of the acceleration magnitude from 1 g.
inline TrialRecord accumulate_accel(const TrialRecord& trial, const AccelSample& sample_g, double dt_s) {
  if (!(dt_s > 0.0)) throw std::invalid_argument("accumulate_accel: dt_s must be positive");
  if (trial.phase != TrialPhase::kRunning) return trial;
  TrialRecord out = trial;
  out.accel_sum += std::abs(sample_g.magnitude() - 1.0) * dt_s;
  return out;
}

// ---------------------------------------------------------------------------
// Durations
// ---------------------------------------------------------------------------

/// Per-task durations by successive difference in chronological completion
/// order. Tasks never completed have no entry.
struct TaskDurations {
  std::array<std::optional<DeviceMillis>, kTaskCount> ms{};

  const std::optional<DeviceMillis>& operator[](TaskId task) const { return ms[index_of(task)]; }

  DeviceMillis total() const {
    DeviceMillis sum = 0;
    for (const auto& d : ms) sum += d.value_or(0);
    return sum;
  }

  friend bool operator==(const TaskDurations&, const TaskDurations&) = default;
};

/// Timestamps sorted chronologically; simultaneous completions keep
/// canonical order.
inline TaskDurations durations_from_timestamps(const TaskTimestamps& timestamps) {
  std::vector<std::pair<DeviceMillis, std::size_t>> done;
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (timestamps[i]) done.emplace_back(*timestamps[i], i);
  }
  std::sort(done.begin(), done.end());
  TaskDurations out;
  DeviceMillis previous = 0;
  for (const auto& [t, i] : done) {
    out.ms[i] = t - previous;
    previous = t;
  }
  return out;
}

inline TaskDurations task_durations(const TrialRecord& trial) {
  if (!is_finished(trial.phase)) throw TrialNotFinished(trial.phase);
  return durations_from_timestamps(trial.timestamps);
}

}  // namespace taskboard

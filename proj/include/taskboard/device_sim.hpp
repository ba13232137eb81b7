#pragma once

// Simulated task board: replays a trace (or interactive injections) into the
// trial state machine on a virtual millisecond clock, samples a noisy
// accelerometer, and publishes telemetry snapshots on a fixed cadence.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "taskboard/decimal.hpp"
#include "taskboard/protocol.hpp"
#include "taskboard/trace.hpp"
#include "taskboard/wire.hpp"

namespace taskboard {

struct DeviceConfig {
  std::string endpoint_id;
  std::uint32_t accel_rate_hz = 100;
  DeviceMillis telemetry_period_ms = 5000;
  std::uint64_t rng_seed = 0;
  std::int64_t epoch_base_ms = 0;  // wall-clock instant of device time 0
};

using TelemetrySink = std::function<void(const TelemetryRecord&)>;

class DuplicateEndpoint : public std::runtime_error {
 public:
  explicit DuplicateEndpoint(const std::string& id) : std::runtime_error("endpoint id already in use: " + id) {}
};

/// Process-wide reservation of an endpoint id; released on destruction.
class EndpointClaim {
 public:
  EndpointClaim() = default;
  explicit EndpointClaim(std::string id) : id_(std::move(id)) {
    if (id_.empty()) throw std::invalid_argument("endpoint id must be non-empty");
    std::lock_guard lock(mutex());
    if (!registry().insert(id_).second) {
      const std::string dup = std::move(id_);
      id_.clear();
      throw DuplicateEndpoint(dup);
    }
  }
  EndpointClaim(const EndpointClaim&) = delete;
  EndpointClaim& operator=(const EndpointClaim&) = delete;
  EndpointClaim(EndpointClaim&& other) noexcept : id_(std::exchange(other.id_, {})) {}
  EndpointClaim& operator=(EndpointClaim&& other) noexcept {
    if (this != &other) {
      release();
      id_ = std::exchange(other.id_, {});
    }
    return *this;
  }
  ~EndpointClaim() { release(); }

  const std::string& id() const noexcept { return id_; }

 private:
  void release() noexcept {
    if (id_.empty()) return;
    std::lock_guard lock(mutex());
    registry().erase(id_);
    id_.clear();
  }
  static std::mutex& mutex() {
    static std::mutex m;
    return m;
  }
  static std::set<std::string>& registry() {
    static std::set<std::string> r;
    return r;
  }

  std::string id_;
};

// ---------------------------------------------------------------------------
// Display
// ---------------------------------------------------------------------------

struct DisplayState {
  std::vector<std::string> lines;

  std::string to_text() const {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
  }
};

inline DeviceMillis elapsed_ms(const TrialRecord& trial, DeviceMillis now_ms) {
  switch (trial.phase) {
    case TrialPhase::kIdle:
    case TrialPhase::kArmed: return 0;
    case TrialPhase::kRunning:
      return now_ms < trial.start_device_ms ? 0 : std::min(now_ms - trial.start_device_ms, trial.expiry_ms);
    case TrialPhase::kCompleted: return trial.timestamp(TaskId::kStop).value_or(0);
    case TrialPhase::kExpired: return trial.expiry_ms;
  }
  return 0;
}

inline DisplayState render_display(const TrialRecord& trial, DeviceMillis now_ms) {
  DisplayState d;
  d.lines.push_back("TRIAL " + std::to_string(trial.trial_id) + " " + std::string(phase_name(trial.phase)));
  d.lines.push_back("TIME " + format_ms_as_seconds(static_cast<std::int64_t>(elapsed_ms(trial, now_ms))) + " s");
  d.lines.push_back("POINTS " + std::to_string(trial.points) + "/" + std::to_string(kTaskCount));
  for (auto task : kAllTasks) {
    std::string label(task_label(task));
    label.resize(6, ' ');
    const auto& t = trial.timestamp(task);
    d.lines.push_back(label + (t ? format_ms_as_seconds(static_cast<std::int64_t>(*t)) : std::string("--")));
  }
  d.lines.push_back("ACCEL " + format_fixed3(trial.accel_sum) + " g*s");
  return d;
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

class DeviceSimulator {
 public:
  DeviceSimulator(DeviceConfig config, EventTrace trace = {}, TelemetrySink sink = {})
      : claim_(config.endpoint_id), config_(std::move(config)), trace_(std::move(trace)),
        sink_(std::move(sink)), rng_(config_.rng_seed) {
    if (config_.accel_rate_hz == 0) throw std::invalid_argument("accel_rate_hz must be positive");
    if (config_.telemetry_period_ms == 0) throw std::invalid_argument("telemetry_period_ms must be positive");
  }

  DeviceSimulator(const DeviceSimulator&) = delete;
  DeviceSimulator& operator=(const DeviceSimulator&) = delete;
  DeviceSimulator(DeviceSimulator&&) = default;
  DeviceSimulator& operator=(DeviceSimulator&&) = default;

  /// Advances the virtual clock to `to_t_ms`, delivering every due trace
  /// entry, accelerometer sample, expiry check and telemetry emission in
  /// time order. At equal instants: trace entries, then samples, then the
  /// expiry check, then periodic telemetry.
  void step(DeviceMillis to_t_ms) {
    if (to_t_ms < now_) throw std::invalid_argument("step: time moves backwards");
    for (;;) {
      const DeviceMillis t_entry = cursor_ < trace_.entries.size() ? trace_.entries[cursor_].t_ms : kNever;
      const DeviceMillis t_sample = sample_time(next_sample_);
      const DeviceMillis t_expiry = trial_.phase == TrialPhase::kRunning
                                        ? trial_.start_device_ms + trial_.expiry_ms
                                        : kNever;
      const DeviceMillis t_telemetry = next_telemetry_index_ * config_.telemetry_period_ms;
      const DeviceMillis t = std::min({t_entry, t_sample, t_expiry, t_telemetry});
      if (t > to_t_ms) break;
      now_ = std::max(now_, t);

      if (t == t_entry) {
        apply_entry(trace_.entries[cursor_++]);
      } else if (t == t_sample) {
        ++next_sample_;
        sample_accel(t);
      } else if (t == t_expiry) {
        update(tick(trial_, t));
      } else {
        ++next_telemetry_index_;
        emit();
      }
    }
    now_ = to_t_ms;
  }

  /// Routes a circuit event stamped with the current virtual time.
  void inject_event(CircuitEventKind kind) { apply_action(CircuitEvent{kind, now_}, now_); }
  void inject_arm() { apply_action(ArmCommand{}, now_); }
  void inject_start() { apply_action(StartCommand{}, now_); }

  /// Physical board changes. An ARMED trial falls back to IDLE if a
  /// component leaves its start position.
  void set_board_state(const BoardState& state) {
    board_ = state;
    update(recheck_armed(board_, trial_));
  }
  void reset_board() { board_ = taskboard::reset_board(board_); }

  const TrialRecord& trial() const noexcept { return trial_; }
  const BoardState& board() const noexcept { return board_; }
  const DeviceConfig& config() const noexcept { return config_; }
  DeviceMillis now() const noexcept { return now_; }
  std::uint64_t emitted() const noexcept { return seq_; }
  const std::vector<std::string>& log() const noexcept { return log_; }
  bool trace_exhausted() const noexcept { return cursor_ >= trace_.entries.size(); }
  DisplayState display() const { return render_display(trial_, now_); }

 private:
  static constexpr DeviceMillis kNever = std::numeric_limits<DeviceMillis>::max();

  DeviceMillis sample_time(std::uint64_t k) const { return k * 1000 / config_.accel_rate_hz; }

  void apply_entry(const TraceEntry& entry) { apply_action(entry.action, entry.t_ms); }

  void apply_action(const TraceAction& action, DeviceMillis t) {
    try {
      if (const auto* ev = std::get_if<CircuitEvent>(&action)) {
        update(on_event(trial_, CircuitEvent{ev->kind, t}));
      } else if (std::holds_alternative<ArmCommand>(action)) {
        if (is_finished(trial_.phase)) trial_ = next_trial(trial_);
        update(arm(board_, trial_));
      } else if (std::holds_alternative<StartCommand>(action)) {
        update(start(trial_, t, config_.epoch_base_ms + static_cast<std::int64_t>(t)));
      } else if (const auto* burst = std::get_if<AccelBurst>(&action)) {
        bursts_.push_back({t, *burst});
      }
    } catch (const ProtocolError& e) {
      log_.push_back("t=" + std::to_string(t) + " rejected " + describe(action) + ": " + e.what());
    }
  }

  static std::string describe(const TraceAction& action) {
    if (const auto* ev = std::get_if<CircuitEvent>(&action)) return std::string(event_name(ev->kind));
    if (std::holds_alternative<ArmCommand>(action)) return "ARM";
    if (std::holds_alternative<StartCommand>(action)) return "START";
    return "ACCEL_BURST";
  }

  void sample_accel(DeviceMillis t) {
    // Noise is drawn on every sample so the random stream does not depend
    // on the trial phase.
    AccelSample s{noise_(rng_), noise_(rng_), 1.0 + noise_(rng_)};
    for (const auto& b : bursts_) {
      if (t >= b.start_ms && t < b.start_ms + b.burst.duration_ms) {
        const double phase = static_cast<double>(t - b.start_ms) / static_cast<double>(b.burst.duration_ms);
        s.z += b.burst.peak_g * std::sin(std::numbers::pi * phase);
      }
    }
    std::erase_if(bursts_, [t](const ActiveBurst& b) { return t + 1 >= b.start_ms + b.burst.duration_ms; });
    update(accumulate_accel(trial_, s, 1.0 / static_cast<double>(config_.accel_rate_hz)));
    update(tick(trial_, t));
  }

  void update(TrialRecord next) {
    const bool just_finished = !is_finished(trial_.phase) && is_finished(next.phase);
    trial_ = std::move(next);
    if (just_finished) emit();
  }

  void emit() {
    ++seq_;
    TelemetryRecord rec = make_record(config_.endpoint_id, seq_,
                                      config_.epoch_base_ms + static_cast<std::int64_t>(now_), trial_);
    if (sink_) sink_(rec);
  }

  struct ActiveBurst {
    DeviceMillis start_ms;
    AccelBurst burst;
  };

  EndpointClaim claim_;
  DeviceConfig config_;
  EventTrace trace_;
  TelemetrySink sink_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> noise_{-0.01, 0.01};

  TrialRecord trial_{};
  BoardState board_{};
  DeviceMillis now_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t next_sample_ = 1;
  std::uint64_t next_telemetry_index_ = 1;
  std::uint64_t seq_ = 0;
  std::vector<ActiveBurst> bursts_;
  std::vector<std::string> log_;
};

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct RunOptions {
  DeviceMillis chunk_ms = 1000;
  bool realtime = false;  // throttle virtual time to the wall clock
};

/// Steps the simulator until the trace is exhausted and no trial is
/// running, or until the last trace entry plus one expiry window has
/// passed.
inline void run_to_completion(DeviceSimulator& sim, const EventTrace& trace, RunOptions options = {}) {
  if (options.chunk_ms == 0) throw std::invalid_argument("chunk_ms must be positive");
  const DeviceMillis horizon = trace.last_time() + kTrialExpiryMs + options.chunk_ms;
  const auto wall_start = std::chrono::steady_clock::now();
  const DeviceMillis sim_start = sim.now();
  while (sim.now() < horizon) {
    const DeviceMillis next = std::min(sim.now() + options.chunk_ms, horizon);
    if (options.realtime) {
      std::this_thread::sleep_until(wall_start + std::chrono::milliseconds(next - sim_start));
    }
    sim.step(next);
    if (sim.trace_exhausted() && sim.trial().phase != TrialPhase::kRunning) break;
  }
}

}  // namespace taskboard

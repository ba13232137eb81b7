#pragma once

// Telemetry aggregation state.
//
// The store keeps one BoardLedger per endpoint as an in-memory projection of
// an append-only log. Log lines are
//
//   R <recv_epoch_ms> <wire record>      telemetry as received
//   V <recv_epoch_ms> <json>             jury validation
//
// and replaying the log reproduces every ledger exactly. Records for one
// endpoint are appended and applied under that endpoint's lock, so per
// endpoint the apply order is the log order; different endpoints proceed
// independently.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "taskboard/csv.hpp"
#include "taskboard/decimal.hpp"
#include "taskboard/protocol.hpp"
#include "taskboard/wire.hpp"

namespace taskboard {

struct Validation {
  bool validated = false;
  std::string judge;
  std::string note;

  friend bool operator==(const Validation&, const Validation&) = default;
};

struct BoardLedger {
  std::string endpoint_id;
  std::uint64_t last_seq = 0;
  std::optional<TelemetryRecord> latest;
  std::map<std::uint64_t, TelemetryRecord> trials;  // trial_id -> highest-seq record
  std::map<std::uint64_t, Validation> validations;

  friend bool operator==(const BoardLedger&, const BoardLedger&) = default;
};

using LedgerSnapshot = std::map<std::string, BoardLedger>;

/// Folds one record into a ledger. `latest` only moves forward in seq; the
/// trial index keeps the highest-seq record per trial regardless of arrival
/// order. Returns false when nothing changed.
inline bool apply_record(BoardLedger& ledger, const TelemetryRecord& rec) {
  bool changed = false;
  if (!ledger.latest || rec.seq > ledger.last_seq) {
    ledger.last_seq = rec.seq;
    ledger.latest = rec;
    changed = true;
  }
  auto it = ledger.trials.find(rec.trial_id);
  if (it == ledger.trials.end()) {
    ledger.trials.emplace(rec.trial_id, rec);
    changed = true;
  } else if (rec.seq > it->second.seq) {
    it->second = rec;
    changed = true;
  }
  return changed;
}

enum class IngestOutcome { kApplied, kDuplicateDropped, kMalformed };

constexpr std::string_view outcome_name(IngestOutcome o) {
  switch (o) {
    case IngestOutcome::kApplied: return "Applied";
    case IngestOutcome::kDuplicateDropped: return "DuplicateDropped";
    case IngestOutcome::kMalformed: return "Malformed";
  }
  return "?";
}

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownBoard : public std::runtime_error {
 public:
  explicit UnknownBoard(const std::string& id) : std::runtime_error("unknown board: " + id) {}
};

class UnknownTrial : public std::runtime_error {
 public:
  UnknownTrial(const std::string& id, std::uint64_t trial)
      : std::runtime_error("unknown trial " + std::to_string(trial) + " on board " + id) {}
};

inline std::int64_t system_epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct StoreOptions {
  std::optional<std::filesystem::path> log_path;         // append-only log; none = memory only
  std::optional<std::filesystem::path> quarantine_path;  // malformed input lines
  std::function<std::int64_t()> clock = system_epoch_ms;
};

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline const std::string& export_csv_header() {
  static const std::string header = [] {
    std::string h = "endpoint_id,trial_id,phase";
    for (auto task : kAllTasks) h += "," + std::string(task_key(task)) + "_s";
    h += ",total_s,points,accel_sum,validated\n";
    return h;
  }();
  return header;
}

/// One CSV row per final trial record. Durations are successive
/// differences in seconds; the total is filled only for completed trials.
inline std::string export_csv(const LedgerSnapshot& ledgers, const std::optional<std::string>& endpoint = {}) {
  std::string out = export_csv_header();
  for (const auto& [id, ledger] : ledgers) {
    if (endpoint && id != *endpoint) continue;
    for (const auto& [trial_id, rec] : ledger.trials) {
      const TaskDurations d = durations_from_timestamps(rec.timestamps);
      out += csv_escape(id) + "," + std::to_string(trial_id) + "," + std::string(phase_name(rec.phase));
      for (auto task : kAllTasks) {
        out += ",";
        if (d[task]) out += format_ms_as_seconds(static_cast<std::int64_t>(*d[task]));
      }
      out += ",";
      if (rec.phase == TrialPhase::kCompleted) out += format_ms_as_seconds(static_cast<std::int64_t>(d.total()));
      auto v = ledger.validations.find(trial_id);
      const bool validated = v != ledger.validations.end() && v->second.validated;
      out += "," + std::to_string(rec.points) + "," + format_fixed3(rec.accel_sum) + "," +
             (validated ? "true" : "false") + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

class Store {
 public:
  explicit Store(StoreOptions options = {}) : options_(std::move(options)) {
    if (!options_.clock) options_.clock = system_epoch_ms;
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Replays an existing log (if any) and then keeps appending to it.
  static std::unique_ptr<Store> open(StoreOptions options, std::vector<std::string>* warnings = nullptr) {
    auto store = std::make_unique<Store>(std::move(options));
    if (store->options_.log_path) {
      const auto& path = *store->options_.log_path;
      if (std::filesystem::exists(path)) store->replay(path, warnings);
      store->open_log();
    }
    return store;
  }

  /// Read-only reconstruction of the state recorded in `log_path`. Corrupt
  /// lines (typically a crash-truncated tail) are skipped.
  static std::unique_ptr<Store> recover_from_log(const std::filesystem::path& log_path,
                                                 std::vector<std::string>* warnings = nullptr) {
    auto store = std::make_unique<Store>();
    if (!std::filesystem::exists(log_path)) throw StorageError("log not found: " + log_path.string());
    store->replay(log_path, warnings);
    return store;
  }

  IngestOutcome ingest(std::string_view raw_line) {
    if (!raw_line.empty() && raw_line.back() == '\n') raw_line.remove_suffix(1);
    if (!raw_line.empty() && raw_line.back() == '\r') raw_line.remove_suffix(1);
    const std::int64_t recv = options_.clock();

    TelemetryRecord rec;
    try {
      rec = decode_record(raw_line);
    } catch (const WireError& e) {
      quarantine(recv, raw_line, e.what());
      return IngestOutcome::kMalformed;
    }

    std::lock_guard endpoint_lock(endpoint_mutex(rec.endpoint_id));
    append("R " + std::to_string(recv) + " " + std::string(raw_line));
    return apply(rec) ? IngestOutcome::kApplied : IngestOutcome::kDuplicateDropped;
  }

  void validate_trial(const std::string& endpoint_id, std::uint64_t trial_id, const std::string& judge,
                      bool validated, const std::string& note) {
    std::lock_guard endpoint_lock(endpoint_mutex(endpoint_id));
    {
      std::shared_lock lock(ledgers_mutex_);
      auto it = ledgers_.find(endpoint_id);
      if (it == ledgers_.end()) throw UnknownBoard(endpoint_id);
      if (!it->second.trials.contains(trial_id)) throw UnknownTrial(endpoint_id, trial_id);
    }
    nlohmann::json body = {{"endpoint_id", endpoint_id},
                           {"trial_id", trial_id},
                           {"judge", judge},
                           {"validated", validated},
                           {"note", note}};
    append("V " + std::to_string(options_.clock()) + " " + body.dump());
    std::unique_lock lock(ledgers_mutex_);
    ledgers_[endpoint_id].validations[trial_id] = Validation{validated, judge, note};
  }

  std::vector<std::string> boards() const {
    std::shared_lock lock(ledgers_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : ledgers_) out.push_back(id);
    return out;
  }

  std::optional<BoardLedger> ledger(const std::string& endpoint_id) const {
    std::shared_lock lock(ledgers_mutex_);
    auto it = ledgers_.find(endpoint_id);
    if (it == ledgers_.end()) return std::nullopt;
    return it->second;
  }

  TelemetryRecord query_latest(const std::string& endpoint_id) const {
    auto l = ledger(endpoint_id);
    if (!l || !l->latest) throw UnknownBoard(endpoint_id);
    return *l->latest;
  }

  std::vector<TelemetryRecord> query_trials(const std::string& endpoint_id) const {
    auto l = ledger(endpoint_id);
    if (!l) throw UnknownBoard(endpoint_id);
    std::vector<TelemetryRecord> out;
    for (const auto& [_, rec] : l->trials) out.push_back(rec);
    return out;
  }

  LedgerSnapshot snapshot() const {
    std::shared_lock lock(ledgers_mutex_);
    return ledgers_;
  }

  std::string export_csv(const std::optional<std::string>& endpoint = {}) const {
    return taskboard::export_csv(snapshot(), endpoint);
  }

  /// Flushes the log and quarantine streams.
  void flush() {
    std::lock_guard lock(log_mutex_);
    if (log_.is_open()) log_.flush();
    if (quarantine_.is_open()) quarantine_.flush();
  }

 private:
  std::mutex& endpoint_mutex(const std::string& endpoint_id) {
    std::lock_guard lock(endpoint_locks_mutex_);
    auto& slot = endpoint_locks_[endpoint_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
  }

  bool apply(const TelemetryRecord& rec) {
    std::unique_lock lock(ledgers_mutex_);
    auto [it, inserted] = ledgers_.try_emplace(rec.endpoint_id);
    if (inserted) it->second.endpoint_id = rec.endpoint_id;
    return apply_record(it->second, rec);
  }

  void append(const std::string& line) {
    std::lock_guard lock(log_mutex_);
    if (!options_.log_path) return;
    if (!log_.is_open()) throw StorageError("log not open");
    log_ << line << '\n';
    log_.flush();
    if (!log_) throw StorageError("log append failed: " + options_.log_path->string());
  }

  void quarantine(std::int64_t recv, std::string_view raw, const char* reason) {
    std::lock_guard lock(log_mutex_);
    if (!options_.quarantine_path) return;
    if (!quarantine_.is_open()) {
      quarantine_.open(*options_.quarantine_path, std::ios::app | std::ios::binary);
    }
    nlohmann::json entry = {{"recv_epoch_ms", recv}, {"reason", reason}, {"raw", std::string(raw)}};
    quarantine_ << entry.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    quarantine_.flush();
  }

  void open_log() {
    const auto& path = *options_.log_path;
    // A crash can leave a partial last line; start the next entry on a fresh
    // line so it is not glued to the corrupt tail.
    bool needs_newline = false;
    if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
      std::ifstream in(path, std::ios::binary);
      in.seekg(-1, std::ios::end);
      needs_newline = in.get() != '\n';
    }
    log_.open(path, std::ios::app | std::ios::binary);
    if (!log_) throw StorageError("cannot open log: " + path.string());
    if (needs_newline) log_ << '\n';
    log_.flush();
  }

  void replay(const std::filesystem::path& path, std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read log: " + path.string());
    auto warn = [&](std::size_t line_no, const std::string& msg) {
      if (warnings) warnings->push_back(path.string() + ":" + std::to_string(line_no) + ": " + msg);
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto first_space = line.find(' ');
      const auto second_space = first_space == std::string::npos ? std::string::npos : line.find(' ', first_space + 1);
      if (first_space != 1 || second_space == std::string::npos) {
        warn(line_no, "skipping corrupt entry");
        continue;
      }
      const char kind = line[0];
      const std::string_view payload = std::string_view(line).substr(second_space + 1);
      try {
        if (kind == 'R') {
          apply(decode_record(payload));
        } else if (kind == 'V') {
          auto body = nlohmann::json::parse(payload);
          const auto id = body.at("endpoint_id").get<std::string>();
          const auto trial = body.at("trial_id").get<std::uint64_t>();
          auto it = ledgers_.find(id);
          if (it == ledgers_.end() || !it->second.trials.contains(trial)) {
            warn(line_no, "validation for unknown trial skipped");
            continue;
          }
          it->second.validations[trial] = Validation{body.at("validated").get<bool>(),
                                                     body.at("judge").get<std::string>(),
                                                     body.at("note").get<std::string>()};
        } else {
          warn(line_no, "skipping entry of unknown kind");
        }
      } catch (const std::exception& e) {
        warn(line_no, std::string("skipping corrupt entry: ") + e.what());
      }
    }
  }

  StoreOptions options_;

  std::mutex endpoint_locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> endpoint_locks_;

  mutable std::shared_mutex ledgers_mutex_;
  LedgerSnapshot ledgers_;

  std::mutex log_mutex_;
  std::ofstream log_;
  std::ofstream quarantine_;
};

}  // namespace taskboard

#pragma once

// Competition result tables: leaderboard, per-task share of trial time and
// the robot-vs-human summary rows.
//
// All arithmetic is done on integer milliseconds; means are carried as exact
// ratios and only rounded (half-even, 2 decimals) when rendered.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskboard/csv.hpp"
#include "taskboard/decimal.hpp"
#include "taskboard/protocol.hpp"
#include "taskboard/wire.hpp"

namespace taskboard {

/// A finished trial attributed to a subject (team, benchmark or human).
struct TrialResult {
  std::string subject;
  TrialPhase phase = TrialPhase::kIdle;
  TaskTimestamps timestamps{};
  std::uint32_t points = 0;
};

inline TrialResult result_from_record(const TelemetryRecord& rec, std::string subject = {}) {
  return TrialResult{subject.empty() ? rec.endpoint_id : std::move(subject), rec.phase, rec.timestamps,
                     rec.points};
}

inline TrialResult result_from_trial(const TrialRecord& trial, std::string subject) {
  return TrialResult{std::move(subject), trial.phase, trial.timestamps, trial.points};
}

struct LeaderboardRow {
  std::string subject;
  TaskDurations durations;
  DeviceMillis total_ms = 0;  // sum of durations
  bool completed = false;
  std::uint32_t points = 0;
  std::optional<DeviceMillis> batt2_timestamp_ms;
  std::optional<DeviceMillis> reported_total_ms;  // externally reported total, if it differs
  std::array<bool, kTaskCount> fastest{};         // per-column minimum among completed rows
  bool fastest_total = false;

  /// Total used for summary statistics: the reported total when one is
  /// attached, otherwise the sum of durations.
  DeviceMillis summary_total_ms() const { return reported_total_ms.value_or(total_ms); }
};

namespace detail {

inline LeaderboardRow make_row(const TrialResult& r) {
  LeaderboardRow row;
  row.subject = r.subject;
  row.durations = durations_from_timestamps(r.timestamps);
  row.total_ms = row.durations.total();
  row.completed = r.phase == TrialPhase::kCompleted;
  row.points = r.points;
  row.batt2_timestamp_ms = r.timestamps[index_of(TaskId::kBatt2)];
  return row;
}

// Completed rows first by total, then earlier BATT2, then label; incomplete
// rows by points (desc), elapsed, label.
inline bool ranks_before(const LeaderboardRow& a, const LeaderboardRow& b) {
  if (a.completed != b.completed) return a.completed;
  if (a.completed) {
    if (a.total_ms != b.total_ms) return a.total_ms < b.total_ms;
    const auto ab = a.batt2_timestamp_ms.value_or(kTrialExpiryMs);
    const auto bb = b.batt2_timestamp_ms.value_or(kTrialExpiryMs);
    if (ab != bb) return ab < bb;
    return a.subject < b.subject;
  }
  if (a.points != b.points) return a.points > b.points;
  if (a.total_ms != b.total_ms) return a.total_ms < b.total_ms;
  return a.subject < b.subject;
}

}  // namespace detail

/// One row per subject (its best finished trial), ranked. Trials that are
/// not COMPLETED or EXPIRED are ignored.
inline std::vector<LeaderboardRow> leaderboard(std::span<const TrialResult> trials,
                                               const std::map<std::string, DeviceMillis>& reported_totals = {}) {
  std::map<std::string, LeaderboardRow> best;
  for (const auto& t : trials) {
    if (!is_finished(t.phase)) continue;
    LeaderboardRow row = detail::make_row(t);
    auto it = best.find(row.subject);
    if (it == best.end()) {
      best.emplace(row.subject, std::move(row));
    } else if (detail::ranks_before(row, it->second)) {
      it->second = std::move(row);
    }
  }

  std::vector<LeaderboardRow> rows;
  rows.reserve(best.size());
  for (auto& [subject, row] : best) {
    if (auto rt = reported_totals.find(subject); rt != reported_totals.end()) row.reported_total_ms = rt->second;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), detail::ranks_before);

  for (auto task : kAllTasks) {
    std::optional<DeviceMillis> min;
    for (const auto& r : rows) {
      if (r.completed && (!min || *r.durations[task] < *min)) min = *r.durations[task];
    }
    for (auto& r : rows) r.fastest[index_of(task)] = r.completed && min && *r.durations[task] == *min;
  }
  std::optional<DeviceMillis> min_total;
  for (const auto& r : rows) {
    if (r.completed && (!min_total || r.total_ms < *min_total)) min_total = r.total_ms;
  }
  for (auto& r : rows) r.fastest_total = r.completed && r.total_ms == min_total;
  return rows;
}

// ---------------------------------------------------------------------------
// Breakdown
// ---------------------------------------------------------------------------

class IncompleteTrial : public std::runtime_error {
 public:
  explicit IncompleteTrial(const std::string& subject)
      : std::runtime_error("trial incomplete for subject " + subject) {}
};

struct BreakdownRow {
  std::string subject;
  std::array<double, kTaskCount> fractions{};
};

/// Share of each task in the row's own duration sum.
inline BreakdownRow percentage_breakdown(const LeaderboardRow& row) {
  if (!row.completed || row.total_ms == 0) throw IncompleteTrial(row.subject);
  BreakdownRow out;
  out.subject = row.subject;
  const double total = static_cast<double>(row.total_ms);
  for (auto task : kAllTasks) {
    out.fractions[index_of(task)] = static_cast<double>(row.durations[task].value_or(0)) / total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Averages and human deltas
// ---------------------------------------------------------------------------

/// Exact value num/den milliseconds.
struct ExactMillis {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double seconds() const { return static_cast<double>(num) / static_cast<double>(den) / 1000.0; }
  std::string to_string() const { return format_ms_ratio_as_seconds(num, den); }
};

inline constexpr std::size_t kSummaryColumns = kTaskCount + 1;  // six tasks + trial total

struct SummaryRow {
  std::string label;
  std::array<ExactMillis, kSummaryColumns> cells{};
};

struct SummaryTable {
  SummaryRow average;          // mean over robot rows
  SummaryRow average_delta;    // mean minus human
  SummaryRow fastest_delta;    // column minimum minus human
};

/// Column-wise robot mean, mean minus human and fastest minus human. The
/// total column uses summary_total_ms() of each row.
inline SummaryTable averages_and_deltas(std::span<const LeaderboardRow> robot_rows, const LeaderboardRow& human) {
  if (!human.completed) throw IncompleteTrial(human.subject);
  std::vector<const LeaderboardRow*> robots;
  for (const auto& r : robot_rows) {
    if (r.completed) robots.push_back(&r);
  }
  if (robots.empty()) throw std::invalid_argument("averages_and_deltas: no completed robot rows");

  auto column = [](const LeaderboardRow& r, std::size_t c) -> std::int64_t {
    if (c == kTaskCount) return static_cast<std::int64_t>(r.summary_total_ms());
    return static_cast<std::int64_t>(*r.durations.ms[c]);
  };

  SummaryTable out;
  out.average.label = "Avg. Robot";
  out.average_delta.label = "Avg. Robot - Human";
  out.fastest_delta.label = "Fastest Robot - Human";
  const auto n = static_cast<std::int64_t>(robots.size());
  for (std::size_t c = 0; c < kSummaryColumns; ++c) {
    std::int64_t sum = 0;
    std::int64_t min = column(*robots.front(), c);
    for (const auto* r : robots) {
      sum += column(*r, c);
      min = std::min(min, column(*r, c));
    }
    const std::int64_t h = column(human, c);
    out.average.cells[c] = {sum, n};
    out.average_delta.cells[c] = {sum - n * h, n};
    out.fastest_delta.cells[c] = {min - h, 1};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

enum class ReportFormat { kText, kCsv };

inline std::string format_percent(double fraction) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), fraction * 100.0, std::chars_format::fixed, 2);
  return std::string(buf, ec == std::errc{} ? ptr : buf);
}

struct Report {
  std::vector<LeaderboardRow> leaderboard;
  std::vector<BreakdownRow> breakdown;
  std::optional<LeaderboardRow> human;
  std::optional<SummaryTable> summary;
};

/// Builds the full report. Results for `human_subject` are kept out of the
/// ranking and used as the reference row of the summary.
inline Report build_report(std::span<const TrialResult> trials, const std::string& human_subject = {},
                           const std::map<std::string, DeviceMillis>& reported_totals = {}) {
  std::vector<TrialResult> robots;
  std::vector<TrialResult> humans;
  for (const auto& t : trials) (!human_subject.empty() && t.subject == human_subject ? humans : robots).push_back(t);

  Report report;
  report.leaderboard = leaderboard(robots, reported_totals);
  for (const auto& row : report.leaderboard) {
    if (row.completed) report.breakdown.push_back(percentage_breakdown(row));
  }
  auto human_rows = leaderboard(humans, reported_totals);
  if (!human_rows.empty() && human_rows.front().completed) {
    report.human = human_rows.front();
    const bool any_completed = std::any_of(report.leaderboard.begin(), report.leaderboard.end(),
                                           [](const LeaderboardRow& r) { return r.completed; });
    if (any_completed) report.summary = averages_and_deltas(report.leaderboard, *report.human);
  }
  return report;
}

namespace detail {

inline std::vector<std::string> leaderboard_cells(const LeaderboardRow& r, bool mark_fastest) {
  std::vector<std::string> cells;
  for (auto task : kAllTasks) {
    const auto& d = r.durations[task];
    std::string cell = d ? format_ms_as_seconds(static_cast<std::int64_t>(*d)) : "";
    if (mark_fastest && r.fastest[index_of(task)]) cell = "*" + cell;
    cells.push_back(cell);
  }
  std::string total = r.completed ? format_ms_as_seconds(static_cast<std::int64_t>(r.total_ms)) : "";
  if (mark_fastest && r.fastest_total) total = "*" + total;
  cells.push_back(total);
  return cells;
}

inline std::string pad(std::string s, std::size_t width, bool right_align) {
  if (s.size() >= width) return s;
  return right_align ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

}  // namespace detail

inline std::string render_report(const Report& report, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::kCsv) {
    out += "section,subject";
    for (auto task : kAllTasks) out += "," + std::string(task_key(task));
    out += ",total,points,completed\n";
    auto emit = [&](std::string_view section, const std::string& subject, const std::vector<std::string>& cells,
                    const std::string& points, const std::string& completed) {
      out += std::string(section) + "," + csv_escape(subject);
      for (const auto& c : cells) out += "," + c;
      out += "," + points + "," + completed + "\n";
    };
    for (const auto& r : report.leaderboard) {
      emit("leaderboard", r.subject, detail::leaderboard_cells(r, false), std::to_string(r.points),
           r.completed ? "true" : "false");
    }
    if (report.human) {
      emit("reference", report.human->subject, detail::leaderboard_cells(*report.human, false),
           std::to_string(report.human->points), "true");
    }
    for (const auto& b : report.breakdown) {
      std::vector<std::string> cells;
      double sum = 0.0;
      for (double f : b.fractions) {
        cells.push_back(format_percent(f));
        sum += f;
      }
      cells.push_back(format_percent(sum));
      emit("breakdown_pct", b.subject, cells, "", "");
    }
    if (report.summary) {
      for (const auto* row : {&report.summary->average, &report.summary->average_delta, &report.summary->fastest_delta}) {
        std::vector<std::string> cells;
        for (const auto& c : row->cells) cells.push_back(c.to_string());
        emit("summary", row->label, cells, "", "");
      }
    }
    return out;
  }

  constexpr std::size_t kLabelWidth = 24;
  constexpr std::size_t kCellWidth = 9;
  auto header = [&](std::string_view title, std::string_view last) {
    out += std::string(title) + "\n";
    out += detail::pad("Subject", kLabelWidth, false);
    for (auto task : kAllTasks) out += detail::pad(std::string(task_label(task)), kCellWidth, true);
    out += detail::pad(std::string(last), kCellWidth, true) + "\n";
  };
  auto line = [&](const std::string& label, const std::vector<std::string>& cells, const std::string& suffix) {
    out += detail::pad(label, kLabelWidth, false);
    for (const auto& c : cells) out += detail::pad(c.empty() ? "-" : c, kCellWidth, true);
    out += suffix + "\n";
  };

  header("Leaderboard (seconds, * = fastest)", "Total");
  for (const auto& r : report.leaderboard) {
    line(r.subject, detail::leaderboard_cells(r, true),
         "  pts " + std::to_string(r.points) + (r.completed ? "" : " (incomplete)"));
  }
  if (report.human) {
    line(report.human->subject + " (reference)", detail::leaderboard_cells(*report.human, false),
         "  pts " + std::to_string(report.human->points));
  }
  out += "\n";
  header("Task share of trial time (%)", "Sum");
  for (const auto& b : report.breakdown) {
    std::vector<std::string> cells;
    double sum = 0.0;
    for (double f : b.fractions) {
      cells.push_back(format_percent(f));
      sum += f;
    }
    cells.push_back(format_percent(sum));
    line(b.subject, cells, "");
  }
  if (report.summary) {
    out += "\n";
    header("Summary (seconds)", "Total");
    for (const auto* row : {&report.summary->average, &report.summary->average_delta, &report.summary->fastest_delta}) {
      std::vector<std::string> cells;
      for (const auto& c : row->cells) cells.push_back(c.to_string());
      line(row->label, cells, "");
    }
  }
  return out;
}

}  // namespace taskboard

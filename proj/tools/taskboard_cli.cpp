// taskboard: run simulated task boards, serve the aggregation API, and
// produce competition reports.
//
//   taskboard simulate --trace T.trace [--trace ...] (--server HOST:PORT | --offline --out FILE)
//   taskboard serve    [--listen-telemetry ADDR] [--listen-http ADDR] [--log-path FILE] [--ingest-file FILE ...]
//   taskboard report   (--log FILE | --telemetry FILE | --server URL) [--human SUBJECT] [--format text|csv]
//   taskboard export   (--log FILE | --telemetry FILE | --server URL) [--endpoint ID]
//
// Exit codes: 0 success (simulate: every trial COMPLETED), 1 error,
// 2 simulate finished with an EXPIRED trial.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "taskboard/analytics.hpp"
#include "taskboard/device_sim.hpp"
#include "taskboard/server.hpp"
#include "taskboard/store.hpp"
#include "taskboard/trace.hpp"
#include "taskboard/transport.hpp"
#include "taskboard/wire.hpp"

namespace fs = std::filesystem;
using namespace taskboard;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitExpired = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes to --out when given, stdout otherwise.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw std::runtime_error("cannot open output file: " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateConfig {
  std::vector<std::string> traces;
  std::vector<std::string> endpoints;
  std::string server;
  bool offline = false;
  std::string out;
  std::uint64_t seed = 0;
  bool realtime = false;
  std::int64_t epoch_base_ms = 0;
  std::uint64_t period_ms = 5000;
  std::uint32_t accel_rate_hz = 100;
  int connect_attempts = 5;
};

struct BoardRun {
  std::string endpoint;
  TrialRecord final_trial;
  std::uint64_t records = 0;
  std::string telemetry;  // offline mode
  std::vector<std::string> log;
  std::string error;
};

std::string summarize(const BoardRun& run) {
  std::ostringstream out;
  const TrialRecord& t = run.final_trial;
  out << run.endpoint << " trial " << t.trial_id << " " << phase_name(t.phase) << "\n";
  const TaskDurations d = durations_from_timestamps(t.timestamps);
  for (auto task : kAllTasks) {
    std::string label(task_label(task));
    label.resize(6, ' ');
    out << "  " << label << (d[task] ? format_ms_as_seconds(static_cast<std::int64_t>(*d[task])) + " s" : "-")
        << "\n";
  }
  if (t.phase == TrialPhase::kCompleted) {
    out << "  Trial total: " << format_ms_as_seconds(static_cast<std::int64_t>(d.total())) << " s\n";
  } else {
    out << "  Trial total: - (" << phase_name(t.phase) << ")\n";
  }
  out << "  Points: " << t.points << "  Accel sum: " << format_fixed3(t.accel_sum) << " g*s"
      << "  Telemetry records: " << run.records << "\n";
  return out.str();
}

int cmd_simulate(const SimulateConfig& cfg) {
  if (cfg.offline == !cfg.server.empty()) throw UsageError("give exactly one of --server or --offline");
  if (cfg.offline && cfg.out.empty()) throw UsageError("--offline requires --out");
  if (!cfg.endpoints.empty() && cfg.endpoints.size() != cfg.traces.size()) {
    throw UsageError("--endpoint must be given once per --trace");
  }
  std::optional<Endpoint> server;
  if (!cfg.offline) server = parse_endpoint(cfg.server);

  // Load everything before any side effect.
  std::vector<EventTrace> traces;
  std::vector<std::string> endpoints;
  for (std::size_t i = 0; i < cfg.traces.size(); ++i) {
    traces.push_back(load_trace(cfg.traces[i]));
    endpoints.push_back(cfg.endpoints.empty() ? fs::path(cfg.traces[i]).stem().string() : cfg.endpoints[i]);
  }
  std::unique_ptr<Output> offline_out;
  if (cfg.offline) offline_out = std::make_unique<Output>(cfg.out);

  std::vector<BoardRun> runs(traces.size());
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    workers.emplace_back([&, i] {
      BoardRun& run = runs[i];
      run.endpoint = endpoints[i];
      try {
        std::unique_ptr<TcpLineSender> sender;
        if (server) sender = std::make_unique<TcpLineSender>(*server, RetryPolicy{cfg.connect_attempts});
        DeviceConfig dc;
        dc.endpoint_id = endpoints[i];
        dc.rng_seed = cfg.seed + i;
        dc.epoch_base_ms = cfg.realtime && cfg.epoch_base_ms == 0 ? system_epoch_ms() : cfg.epoch_base_ms;
        dc.telemetry_period_ms = cfg.period_ms;
        dc.accel_rate_hz = cfg.accel_rate_hz;
        DeviceSimulator sim(dc, traces[i], [&](const TelemetryRecord& rec) {
          const std::string line = encode_record(rec);
          if (sender) {
            sender->send_line(line);
          } else {
            run.telemetry += line;
          }
        });
        RunOptions options;
        options.realtime = cfg.realtime;
        if (cfg.realtime) options.chunk_ms = 50;
        run_to_completion(sim, traces[i], options);
        run.final_trial = sim.trial();
        run.records = sim.emitted();
        run.log = sim.log();
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    });
  }
  for (auto& w : workers) w.join();

  int exit_code = kExitOk;
  for (const auto& run : runs) {
    for (const auto& l : run.log) std::cerr << run.endpoint << ": " << l << "\n";
    if (!run.error.empty()) {
      std::cerr << "error: " << run.endpoint << ": " << run.error << "\n";
      exit_code = kExitError;
      continue;
    }
    if (offline_out) offline_out->stream() << run.telemetry;
    std::cout << summarize(run);
    if (run.final_trial.phase == TrialPhase::kExpired) {
      if (exit_code == kExitOk) exit_code = kExitExpired;
    } else if (run.final_trial.phase != TrialPhase::kCompleted) {
      std::cerr << "error: " << run.endpoint << ": trial did not finish (" << phase_name(run.final_trial.phase)
                << ")\n";
      exit_code = kExitError;
    }
  }
  if (offline_out) offline_out->stream().flush();
  return exit_code;
}

// ---------------------------------------------------------------------------
// Data sources for report/export
// ---------------------------------------------------------------------------

struct SourceConfig {
  std::vector<std::string> logs;
  std::vector<std::string> telemetry;
  std::string server;
};

void check_source(const SourceConfig& src) {
  const int given = (src.logs.empty() ? 0 : 1) + (src.telemetry.empty() ? 0 : 1) + (src.server.empty() ? 0 : 1);
  if (given != 1) throw UsageError("give exactly one data source: --log, --telemetry or --server");
}

std::unique_ptr<httplib::Client> http_client(const std::string& server) {
  std::string url = server;
  if (url.rfind("http://", 0) != 0) url = "http://" + url;
  auto client = std::make_unique<httplib::Client>(url);
  client->set_connection_timeout(5);
  client->set_read_timeout(10);
  return client;
}

std::string http_get(httplib::Client& client, const std::string& path) {
  auto res = client.Get(path);
  if (!res) throw TransportError("GET " + path + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("GET " + path + ": HTTP " + std::to_string(res->status));
  return res->body;
}

/// Ledger state from local files or a running server.
LedgerSnapshot load_ledgers(const SourceConfig& src) {
  if (!src.server.empty()) {
    auto client = http_client(src.server);
    auto boards = nlohmann::json::parse(http_get(*client, "/boards"));
    Store store;
    for (const auto& b : boards) {
      const std::string id = b.at("endpoint_id").get<std::string>();
      auto trials = nlohmann::json::parse(http_get(*client, "/boards/" + httplib::detail::encode_url(id) + "/trials"));
      for (const auto& t : trials) store.ingest(t.at("record").dump());
    }
    return store.snapshot();
  }
  LedgerSnapshot merged;
  auto merge = [&merged](const LedgerSnapshot& part) {
    for (const auto& [id, ledger] : part) {
      BoardLedger& dst = merged[id];
      dst.endpoint_id = id;
      if (ledger.latest) apply_record(dst, *ledger.latest);
      for (const auto& [_, rec] : ledger.trials) apply_record(dst, rec);
      for (const auto& [trial, v] : ledger.validations) dst.validations[trial] = v;
    }
  };
  std::vector<std::string> warnings;
  for (const auto& path : src.logs) merge(Store::recover_from_log(path, &warnings)->snapshot());
  Store store;
  for (const auto& path : src.telemetry) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open telemetry file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (store.ingest(line) == IngestOutcome::kMalformed) {
        warnings.push_back(path + ":" + std::to_string(line_no) + ": malformed record skipped");
      }
    }
  }
  merge(store.snapshot());
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return merged;
}

std::map<std::string, DeviceMillis> parse_reported_totals(const std::vector<std::string>& specs) {
  std::map<std::string, DeviceMillis> out;
  for (const auto& spec : specs) {
    const auto eq = spec.rfind('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--reported-total expects SUBJECT=SECONDS: " + spec);
    auto ms = parse_seconds_to_ms(std::string_view(spec).substr(eq + 1));
    if (!ms) throw UsageError("bad seconds value in --reported-total: " + spec);
    out[spec.substr(0, eq)] = static_cast<DeviceMillis>(*ms);
  }
  return out;
}

// ---------------------------------------------------------------------------
// report / export
// ---------------------------------------------------------------------------

struct ReportConfig {
  SourceConfig source;
  std::string human;
  std::vector<std::string> reported_totals;
  std::string format = "text";
  std::string out;
};

int cmd_report(const ReportConfig& cfg) {
  check_source(cfg.source);
  const auto totals = parse_reported_totals(cfg.reported_totals);
  const ReportFormat format = cfg.format == "csv" ? ReportFormat::kCsv : ReportFormat::kText;
  const auto results = collect_results(load_ledgers(cfg.source));
  const Report report = build_report(results, cfg.human, totals);
  Output out(cfg.out);
  out.stream() << render_report(report, format);
  return kExitOk;
}

struct ExportConfig {
  SourceConfig source;
  std::string endpoint;
  std::string out;
};

int cmd_export(const ExportConfig& cfg) {
  check_source(cfg.source);
  std::optional<std::string> scope;
  if (!cfg.endpoint.empty()) scope = cfg.endpoint;
  std::string csv;
  if (!cfg.source.server.empty()) {
    auto client = http_client(cfg.source.server);
    std::string path = "/export.csv";
    if (scope) path += "?endpoint=" + httplib::detail::encode_url(*scope);
    csv = http_get(*client, path);
  } else {
    csv = export_csv(load_ledgers(cfg.source), scope);
  }
  Output out(cfg.out);
  out.stream() << csv;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeConfig {
  std::string listen_telemetry = "0.0.0.0:7070";
  std::string listen_http = "0.0.0.0:8080";
  std::string log_path = "taskboard.log";
  std::string quarantine_path;
  std::vector<std::string> ingest_files;
  std::string human;
  std::vector<std::string> reported_totals;
  std::string ready_file;
};

int cmd_serve(const ServeConfig& cfg) {
  ServerConfig sc;
  sc.telemetry = parse_endpoint(cfg.listen_telemetry, "0.0.0.0");
  sc.http = parse_endpoint(cfg.listen_http, "0.0.0.0");
  sc.store.log_path = cfg.log_path;
  sc.store.quarantine_path = cfg.quarantine_path.empty() ? cfg.log_path + ".quarantine" : cfg.quarantine_path;
  sc.analytics.human_subject = cfg.human;
  sc.analytics.reported_totals = parse_reported_totals(cfg.reported_totals);
  for (const auto& f : cfg.ingest_files) {
    if (!fs::exists(f)) throw UsageError("ingest file not found: " + f);
  }

  // Handle termination signals synchronously on this thread; worker
  // threads inherit the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::vector<std::string> warnings;
  AggregationServer server(sc, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  for (const auto& f : cfg.ingest_files) {
    std::ifstream in(f, std::ios::binary);
    std::string line;
    std::map<IngestOutcome, std::size_t> counts;
    while (std::getline(in, line)) {
      if (!line.empty()) ++counts[server.store().ingest(line)];
    }
    std::cerr << "ingested " << f << ": " << counts[IngestOutcome::kApplied] << " applied, "
              << counts[IngestOutcome::kDuplicateDropped] << " duplicate, " << counts[IngestOutcome::kMalformed]
              << " malformed\n";
  }

  server.start();
  std::cerr << "telemetry listening on port " << server.telemetry_port() << ", http on port " << server.http_port()
            << ", log " << cfg.log_path << "\n";
  if (!cfg.ready_file.empty()) {
    const std::string tmp = cfg.ready_file + ".tmp";
    {
      std::ofstream ready(tmp, std::ios::trunc);
      ready << nlohmann::json{{"telemetry_port", server.telemetry_port()}, {"http_port", server.http_port()}}.dump()
            << "\n";
    }
    fs::rename(tmp, cfg.ready_file);
  }

  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down (signal " << sig << ")\n";
  server.stop();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task board simulator, aggregation server and competition reports"};
  app.require_subcommand(1);

  SimulateConfig sim;
  auto* simulate = app.add_subcommand("simulate", "Replay trace files through simulated task boards");
  simulate->add_option("--trace", sim.traces, "Trace file (repeat for several boards)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--endpoint", sim.endpoints, "Endpoint id per trace (default: trace file stem)");
  simulate->add_option("--server", sim.server, "Telemetry server HOST:PORT");
  simulate->add_flag("--offline", sim.offline, "Write telemetry lines to --out instead of a server");
  simulate->add_option("--out", sim.out, "Telemetry output file (offline mode)");
  simulate->add_option("--seed", sim.seed, "Accelerometer noise seed");
  simulate->add_flag("--realtime", sim.realtime, "Throttle virtual time to the wall clock");
  simulate->add_option("--epoch-base-ms", sim.epoch_base_ms, "Wall-clock ms of device time 0 (default 0; now with --realtime)");
  simulate->add_option("--period-ms", sim.period_ms, "Telemetry period in ms")->check(CLI::PositiveNumber);
  simulate->add_option("--accel-rate", sim.accel_rate_hz, "Accelerometer rate in Hz")->check(CLI::PositiveNumber);
  simulate->add_option("--connect-attempts", sim.connect_attempts, "Send attempts before giving up")->check(CLI::PositiveNumber);

  ServeConfig serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the telemetry aggregation server");
  serve_cmd->add_option("--listen-telemetry", serve.listen_telemetry, "Telemetry listen address [HOST:]PORT")
      ->envname("TASKBOARD_LISTEN_TELEMETRY")
      ->capture_default_str();
  serve_cmd->add_option("--listen-http", serve.listen_http, "HTTP listen address [HOST:]PORT")
      ->envname("TASKBOARD_LISTEN_HTTP")
      ->capture_default_str();
  serve_cmd->add_option("--log-path", serve.log_path, "Append-only log file")
      ->envname("TASKBOARD_LOG_PATH")
      ->capture_default_str();
  serve_cmd->add_option("--quarantine-path", serve.quarantine_path, "Malformed input file (default: <log>.quarantine)");
  serve_cmd->add_option("--ingest-file", serve.ingest_files, "Offline telemetry file to ingest at startup");
  serve_cmd->add_option("--human", serve.human, "Subject used as the human reference in /leaderboard");
  serve_cmd->add_option("--reported-total", serve.reported_totals, "SUBJECT=SECONDS reported trial time");
  serve_cmd->add_option("--ready-file", serve.ready_file, "Write bound ports as JSON here once listening");

  ReportConfig report;
  auto* report_cmd = app.add_subcommand("report", "Leaderboard, task breakdown and human comparison");
  report_cmd->add_option("--log", report.source.logs, "Server log file")->check(CLI::ExistingFile);
  report_cmd->add_option("--telemetry", report.source.telemetry, "Offline telemetry file")->check(CLI::ExistingFile);
  report_cmd->add_option("--server", report.source.server, "Server HTTP address HOST:PORT");
  report_cmd->add_option("--human", report.human, "Subject used as the human reference");
  report_cmd->add_option("--reported-total", report.reported_totals, "SUBJECT=SECONDS reported trial time");
  report_cmd->add_option("--format", report.format, "text or csv")->check(CLI::IsMember({"text", "csv"}));
  report_cmd->add_option("--out", report.out, "Output file (default stdout)");

  ExportConfig exp;
  auto* export_cmd = app.add_subcommand("export", "CSV of final trial records");
  export_cmd->add_option("--log", exp.source.logs, "Server log file")->check(CLI::ExistingFile);
  export_cmd->add_option("--telemetry", exp.source.telemetry, "Offline telemetry file")->check(CLI::ExistingFile);
  export_cmd->add_option("--server", exp.source.server, "Server HTTP address HOST:PORT");
  export_cmd->add_option("--endpoint", exp.endpoint, "Only this board");
  export_cmd->add_option("--out", exp.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*serve_cmd) return cmd_serve(serve);
    if (*report_cmd) return cmd_report(report);
    if (*export_cmd) return cmd_export(exp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

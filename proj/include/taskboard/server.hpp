#pragma once

// Aggregation server: a TCP telemetry listener feeding a Store, and an HTTP
// query API for the dashboard and the CLI.
//
//   GET  /boards
//   GET  /boards/{id}/latest
//   GET  /boards/{id}/trials
//   GET  /leaderboard
//   GET  /export.csv[?endpoint=ID]
//   POST /boards/{id}/trials/{trial_id}/validate   {"judge","validated","note"}

#include <charconv>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "taskboard/analytics.hpp"
#include "taskboard/store.hpp"
#include "taskboard/transport.hpp"
#include "taskboard/wire.hpp"

namespace taskboard {

inline nlohmann::json record_to_json(const TelemetryRecord& rec) {
  // The wire line is already canonical JSON.
  return nlohmann::json::parse(encode_record(rec));
}

inline nlohmann::json validation_to_json(const std::optional<Validation>& v) {
  if (!v) return nullptr;
  return {{"validated", v->validated}, {"judge", v->judge}, {"note", v->note}};
}

inline nlohmann::json leaderboard_to_json(const Report& report) {
  auto cells_ms = [](const TaskDurations& d) {
    nlohmann::json out = nlohmann::json::object();
    for (auto task : kAllTasks) {
      out[std::string(task_key(task))] = d[task] ? nlohmann::json(*d[task]) : nlohmann::json(nullptr);
    }
    return out;
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.leaderboard) {
    nlohmann::json fastest = nlohmann::json::object();
    for (auto task : kAllTasks) fastest[std::string(task_key(task))] = r.fastest[index_of(task)];
    rows.push_back({{"subject", r.subject},
                    {"completed", r.completed},
                    {"points", r.points},
                    {"durations_ms", cells_ms(r.durations)},
                    {"total_ms", r.total_ms},
                    {"fastest", fastest},
                    {"fastest_total", r.fastest_total}});
  }
  nlohmann::json breakdown = nlohmann::json::array();
  for (const auto& b : report.breakdown) {
    nlohmann::json fr = nlohmann::json::object();
    for (auto task : kAllTasks) fr[std::string(task_key(task))] = b.fractions[index_of(task)];
    breakdown.push_back({{"subject", b.subject}, {"fractions", fr}});
  }
  nlohmann::json out = {{"rows", rows}, {"breakdown", breakdown}};
  if (report.summary) {
    nlohmann::json summary = nlohmann::json::array();
    for (const auto* row :
         {&report.summary->average, &report.summary->average_delta, &report.summary->fastest_delta}) {
      nlohmann::json cells = nlohmann::json::object();
      for (std::size_t c = 0; c < kSummaryColumns; ++c) {
        const std::string key = c < kTaskCount ? std::string(task_key(kAllTasks[c])) : "total";
        cells[key] = row->cells[c].to_string();
      }
      summary.push_back({{"label", row->label}, {"seconds", cells}});
    }
    out["summary"] = summary;
  }
  return out;
}

/// Final trial records of every board as analytics input.
inline std::vector<TrialResult> collect_results(const LedgerSnapshot& ledgers) {
  std::vector<TrialResult> out;
  for (const auto& [id, ledger] : ledgers) {
    for (const auto& [_, rec] : ledger.trials) out.push_back(result_from_record(rec));
  }
  return out;
}

struct AnalyticsOptions {
  std::string human_subject;
  std::map<std::string, DeviceMillis> reported_totals;
};

/// HTTP routes over a Store. The store must outlive the API.
class HttpApi {
 public:
  HttpApi(Store& store, AnalyticsOptions analytics = {}) : store_(store), analytics_(std::move(analytics)) {
    routes();
  }
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;
  ~HttpApi() { stop(); }

  /// Binds (port 0 picks a free port) and serves on a background thread.
  std::uint16_t start(const Endpoint& bind_to) {
    int port = bind_to.port == 0 ? server_.bind_to_any_port(bind_to.host)
                                 : (server_.bind_to_port(bind_to.host, bind_to.port) ? bind_to.port : -1);
    if (port < 0) throw TransportError("cannot bind HTTP on " + bind_to.host + ":" + std::to_string(bind_to.port));
    port_ = static_cast<std::uint16_t>(port);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::uint16_t port() const noexcept { return port_; }

 private:
  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& detail) {
    send_json(res, {{"error", kind}, {"detail", detail}}, status);
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server_.Get("/boards", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json boards = nlohmann::json::array();
      for (const auto& [id, ledger] : store_.snapshot()) {
        nlohmann::json b = {{"endpoint_id", id}, {"last_seq", ledger.last_seq}, {"trial_count", ledger.trials.size()}};
        if (ledger.latest) {
          b["phase"] = phase_name(ledger.latest->phase);
          b["points"] = ledger.latest->points;
          b["accel_sum"] = ledger.latest->accel_sum;
          b["sent_epoch_ms"] = ledger.latest->sent_epoch_ms;
        }
        boards.push_back(b);
      }
      send_json(res, boards);
    });

    server_.Get(R"(/boards/([^/]+)/latest)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        send_json(res, record_to_json(store_.query_latest(req.matches[1])));
      } catch (const UnknownBoard& e) {
        send_error(res, 404, "UnknownBoard", e.what());
      }
    });

    server_.Get(R"(/boards/([^/]+)/trials)", [this](const httplib::Request& req, httplib::Response& res) {
      auto ledger = store_.ledger(req.matches[1]);
      if (!ledger) return send_error(res, 404, "UnknownBoard", "unknown board: " + std::string(req.matches[1]));
      nlohmann::json trials = nlohmann::json::array();
      for (const auto& [trial_id, rec] : ledger->trials) {
        std::optional<Validation> v;
        if (auto it = ledger->validations.find(trial_id); it != ledger->validations.end()) v = it->second;
        trials.push_back({{"trial_id", trial_id}, {"record", record_to_json(rec)}, {"validation", validation_to_json(v)}});
      }
      send_json(res, trials);
    });

    server_.Get("/leaderboard", [this](const httplib::Request&, httplib::Response& res) {
      const auto results = collect_results(store_.snapshot());
      send_json(res, leaderboard_to_json(build_report(results, analytics_.human_subject, analytics_.reported_totals)));
    });

    server_.Get("/export.csv", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> scope;
      if (req.has_param("endpoint")) scope = req.get_param_value("endpoint");
      res.set_content(store_.export_csv(scope), "text/csv");
    });

    server_.Post(R"(/boards/([^/]+)/trials/(\d+)/validate)", [this](const httplib::Request& req,
                                                                     httplib::Response& res) {
      const std::string id = req.matches[1];
      const std::string trial_text = req.matches[2];
      std::uint64_t trial_id = 0;
      if (std::from_chars(trial_text.data(), trial_text.data() + trial_text.size(), trial_id).ec != std::errc{}) {
        return send_error(res, 400, "BadRequest", "bad trial id");
      }
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("judge") || !body["judge"].is_string() ||
          body["judge"].get<std::string>().empty() || !body.contains("validated") || !body["validated"].is_boolean() ||
          (body.contains("note") && !body["note"].is_string())) {
        return send_error(res, 400, "BadRequest", "expected {\"judge\": str, \"validated\": bool, \"note\": str}");
      }
      const std::string note = body.value("note", "");
      try {
        store_.validate_trial(id, trial_id, body["judge"].get<std::string>(), body["validated"].get<bool>(), note);
      } catch (const UnknownBoard& e) {
        return send_error(res, 404, "UnknownBoard", e.what());
      } catch (const UnknownTrial& e) {
        return send_error(res, 404, "UnknownTrial", e.what());
      } catch (const StorageError& e) {
        return send_error(res, 500, "StorageError", e.what());
      }
      send_json(res, {{"endpoint_id", id},
                      {"trial_id", trial_id},
                      {"validation", validation_to_json(Validation{body["validated"].get<bool>(),
                                                                   body["judge"].get<std::string>(), note})}});
    });
  }

  Store& store_;
  AnalyticsOptions analytics_;
  httplib::Server server_;
  std::thread thread_;
  std::uint16_t port_ = 0;
};

struct ServerConfig {
  Endpoint telemetry{"0.0.0.0", 7070};
  Endpoint http{"0.0.0.0", 8080};
  StoreOptions store;
  AnalyticsOptions analytics;
};

/// Store + telemetry listener + HTTP API with one lifetime.
class AggregationServer {
 public:
  explicit AggregationServer(ServerConfig config, std::vector<std::string>* warnings = nullptr)
      : config_(std::move(config)), store_(Store::open(config_.store, warnings)) {}

  AggregationServer(const AggregationServer&) = delete;
  AggregationServer& operator=(const AggregationServer&) = delete;
  ~AggregationServer() { stop(); }

  void start() {
    listener_ = std::make_unique<LineListener>(config_.telemetry, [this](std::string_view line) { store_->ingest(line); });
    api_ = std::make_unique<HttpApi>(*store_, config_.analytics);
    api_->start(config_.http);
  }

  /// Stops accepting input and flushes the log.
  void stop() {
    if (listener_) listener_->stop();
    if (api_) api_->stop();
    if (store_) store_->flush();
  }

  Store& store() { return *store_; }
  std::uint16_t telemetry_port() const { return listener_ ? listener_->port() : 0; }
  std::uint16_t http_port() const { return api_ ? api_->port() : 0; }

 private:
  ServerConfig config_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<LineListener> listener_;
  std::unique_ptr<HttpApi> api_;
};

}  // namespace taskboard

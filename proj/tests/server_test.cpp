#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "taskboard/server.hpp"
#include "test_support.hpp"

namespace taskboard {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using testing::TempDir;

std::vector<std::string> fixture_lines(const std::string& subject, const std::string& endpoint) {
  std::vector<TelemetryRecord> records;
  testing::replay_trace(load_trace(testing::trace_path(subject)), endpoint, 0, &records);
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(encode_record(r));
  return lines;
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override { start(); }

  void start() {
    ServerConfig cfg;
    cfg.telemetry = {"127.0.0.1", 0};
    cfg.http = {"127.0.0.1", 0};
    cfg.store.log_path = dir_ / "taskboard.log";
    cfg.store.quarantine_path = dir_ / "quarantine.log";
    cfg.analytics.human_subject = "Human";
    server_ = std::make_unique<AggregationServer>(cfg);
    server_->start();
    http_ = std::make_unique<httplib::Client>("127.0.0.1", server_->http_port());
  }

  void send(const std::vector<std::string>& lines) {
    TcpLineSender sender({"127.0.0.1", server_->telemetry_port()});
    for (const auto& l : lines) sender.send_line(l);
  }

  json get_json(const std::string& path, int expected_status = 200) {
    auto res = http_->Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expected_status) << path << ": " << res->body;
    return json::parse(res->body);
  }

  /// Polls until `pred` holds for the board's latest record.
  bool wait_latest(const std::string& id, const std::function<bool(const json&)>& pred,
                   std::chrono::milliseconds timeout = 5s) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      auto res = http_->Get("/boards/" + id + "/latest");
      if (res && res->status == 200 && pred(json::parse(res->body))) return true;
      std::this_thread::sleep_for(20ms);
    }
    return false;
  }

  static bool completed(const json& j) { return j["phase"] == "COMPLETED"; }

  TempDir dir_;
  std::unique_ptr<AggregationServer> server_;
  std::unique_ptr<httplib::Client> http_;
};

TEST_F(ServerTest, EmptyServer) {
  EXPECT_EQ(get_json("/boards"), json::array());
  EXPECT_EQ(get_json("/boards/none/latest", 404)["error"], "UnknownBoard");
  EXPECT_EQ(get_json("/boards/none/trials", 404)["error"], "UnknownBoard");
  EXPECT_EQ(get_json("/leaderboard")["rows"], json::array());
  auto csv = http_->Get("/export.csv");
  ASSERT_TRUE(csv);
  EXPECT_EQ(csv->body, export_csv_header());
}

TEST_F(ServerTest, TelemetryBecomesQueryable) {
  send(fixture_lines("RoboTHIx", "board-1"));
  ASSERT_TRUE(wait_latest("board-1", completed));
  const json latest = get_json("/boards/board-1/latest");
  EXPECT_EQ(latest["points"], 6);
  EXPECT_EQ(latest["timestamps"]["stop"], 110730);

  const json boards = get_json("/boards");
  ASSERT_EQ(boards.size(), 1u);
  EXPECT_EQ(boards[0]["endpoint_id"], "board-1");
  EXPECT_EQ(boards[0]["phase"], "COMPLETED");
  EXPECT_EQ(boards[0]["trial_count"], 1);

  const json trials = get_json("/boards/board-1/trials");
  ASSERT_EQ(trials.size(), 1u);
  EXPECT_EQ(trials[0]["trial_id"], 1);
  EXPECT_TRUE(trials[0]["validation"].is_null());

  const json lb = get_json("/leaderboard");
  ASSERT_EQ(lb["rows"].size(), 1u);
  EXPECT_EQ(lb["rows"][0]["total_ms"], 110730);
  EXPECT_EQ(lb["rows"][0]["durations_ms"]["find_board"], 78650);
}

TEST_F(ServerTest, ValidateTrial) {
  send(fixture_lines("Human", "board-h"));
  ASSERT_TRUE(wait_latest("board-h", completed));
  auto post = [&](const std::string& path, const std::string& body) {
    return http_->Post(path, body, "application/json");
  };
  auto ok = post("/boards/board-h/trials/1/validate", R"({"judge":"ref-2","validated":true,"note":"clean"})");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  EXPECT_EQ(ok->get_header_value("Access-Control-Allow-Origin"), "*");
  const json trials = get_json("/boards/board-h/trials");
  EXPECT_EQ(trials[0]["validation"], (json{{"validated", true}, {"judge", "ref-2"}, {"note", "clean"}}));

  EXPECT_EQ(post("/boards/board-h/trials/1/validate", R"({"validated":true})")->status, 400);
  EXPECT_EQ(post("/boards/board-h/trials/1/validate", R"({"judge":"","validated":true})")->status, 400);
  EXPECT_EQ(post("/boards/board-h/trials/1/validate", "not json")->status, 400);
  auto unknown_trial = post("/boards/board-h/trials/9/validate", R"({"judge":"j","validated":false})");
  EXPECT_EQ(unknown_trial->status, 404);
  EXPECT_EQ(json::parse(unknown_trial->body)["error"], "UnknownTrial");
  auto unknown_board = post("/boards/nope/trials/1/validate", R"({"judge":"j","validated":false})");
  EXPECT_EQ(unknown_board->status, 404);
  EXPECT_EQ(json::parse(unknown_board->body)["error"], "UnknownBoard");

  auto csv = http_->Get("/export.csv");
  EXPECT_NE(csv->body.find(",true\n"), std::string::npos);
}

TEST_F(ServerTest, ConcurrentBoards) {
  const auto a = fixture_lines("RoboPig", "board-a");
  const auto b = fixture_lines("Benchmark", "board-b");
  std::thread ta([&] { send(a); });
  std::thread tb([&] { send(b); });
  ta.join();
  tb.join();
  ASSERT_TRUE(wait_latest("board-a", completed));
  ASSERT_TRUE(wait_latest("board-b", completed));
  EXPECT_EQ(get_json("/boards/board-a/latest")["seq"], a.size());
  EXPECT_EQ(get_json("/boards/board-b/latest")["seq"], b.size());

  auto all = http_->Get("/export.csv");
  EXPECT_EQ(all->body, server_->store().export_csv());
  auto one = http_->Get("/export.csv?endpoint=board-b");
  EXPECT_EQ(one->body, server_->store().export_csv(std::string("board-b")));
}

TEST_F(ServerTest, MalformedLinesQuarantinedAndServerKeepsRunning) {
  auto lines = fixture_lines("Human", "board-m");
  lines.insert(lines.begin() + 1, "{\"v\":1,\"garbage\n");
  lines.insert(lines.begin() + 2, "{\"v\":7}\n");
  send(lines);
  ASSERT_TRUE(wait_latest("board-m", completed));
  server_->stop();
  const std::string q = testing::read_file(dir_ / "quarantine.log");
  EXPECT_EQ(std::count(q.begin(), q.end(), '\n'), 2);
}

TEST_F(ServerTest, RestartRecoversState) {
  send(fixture_lines("Ewas", "board-r"));
  ASSERT_TRUE(wait_latest("board-r", completed));
  ASSERT_EQ(http_->Post("/boards/board-r/trials/1/validate", R"({"judge":"j","validated":true})",
                        "application/json")
                ->status,
            200);
  const LedgerSnapshot before = server_->store().snapshot();
  http_.reset();
  server_.reset();
  start();
  EXPECT_EQ(server_->store().snapshot(), before);
  EXPECT_EQ(get_json("/boards/board-r/latest")["phase"], "COMPLETED");
}

TEST_F(ServerTest, CorsPreflight) {
  auto res = http_->Options("/boards");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST(Endpoint, Parse) {
  EXPECT_EQ(parse_endpoint("10.0.0.2:7070").host, "10.0.0.2");
  EXPECT_EQ(parse_endpoint("7070").port, 7070);
  EXPECT_EQ(parse_endpoint(":80", "0.0.0.0").host, "0.0.0.0");
  EXPECT_THROW((void)parse_endpoint("host:"), std::invalid_argument);
  EXPECT_THROW((void)parse_endpoint("host:99999"), std::invalid_argument);
}

TEST(Transport, SenderGivesUpWithoutServer) {
  // Bind and release a port so nothing is listening on it.
  std::uint16_t port = 0;
  {
    LineListener probe({"127.0.0.1", 0}, [](std::string_view) {});
    port = probe.port();
  }
  TcpLineSender sender({"127.0.0.1", port}, RetryPolicy{2, 10ms, 2.0});
  EXPECT_THROW(sender.send_line("x\n"), TransportError);
}

}  // namespace
}  // namespace taskboard

#include <gtest/gtest.h>

#include <random>

#include "taskboard/device_sim.hpp"
#include "test_support.hpp"

namespace taskboard {
namespace {

using testing::replay_trace;
using testing::trace_path;

struct Recorder {
  std::vector<TelemetryRecord> records;
  TelemetrySink sink() {
    return [this](const TelemetryRecord& r) { records.push_back(r); };
  }
};

DeviceConfig config(const std::string& id, std::uint64_t seed = 1) {
  DeviceConfig c;
  c.endpoint_id = id;
  c.rng_seed = seed;
  return c;
}

TEST(DeviceSim, DeliversEveryTraceEventOnce) {
  const EventTrace trace = load_trace(trace_path("RoboTHIx"));
  const TrialRecord final = replay_trace(trace, "sim-once");
  EXPECT_EQ(final.phase, TrialPhase::kCompleted);
  EXPECT_EQ(final.points, 6u);
  const DeviceMillis expected[] = {78650, 84440, 89540, 108680, 108830, 110730};
  for (std::size_t i = 0; i < kTaskCount; ++i) EXPECT_EQ(final.timestamps[i], expected[i]);
  EXPECT_EQ(task_durations(final).total(), 110730u);
}

TEST(DeviceSim, ExpiresExactlyAtDeadline) {
  Recorder rec;
  DeviceSimulator sim(config("sim-expiry"), parse_trace("0 ARM\n500 START\n"), rec.sink());
  sim.step(600499);
  EXPECT_EQ(sim.trial().phase, TrialPhase::kRunning);
  const auto before = rec.records.size();
  sim.step(600500);
  EXPECT_EQ(sim.trial().phase, TrialPhase::kExpired);
  ASSERT_EQ(rec.records.size(), before + 1);
  EXPECT_EQ(rec.records.back().phase, TrialPhase::kExpired);
  EXPECT_EQ(rec.records.back().sent_epoch_ms, 600500);
}

TEST(DeviceSim, ExpiredFixture) {
  const TrialRecord final = replay_trace(load_trace(trace_path("RoboTHIx-expired")), "sim-expired-fixture");
  EXPECT_EQ(final.phase, TrialPhase::kExpired);
  EXPECT_EQ(final.points, 2u);
}

TEST(DeviceSim, PeriodicTelemetryInEveryPhase) {
  Recorder rec;
  DeviceSimulator sim(config("sim-period"), {}, rec.sink());
  sim.step(15000);
  ASSERT_EQ(rec.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rec.records[i].seq, i + 1);
    EXPECT_EQ(rec.records[i].sent_epoch_ms, static_cast<std::int64_t>((i + 1) * 5000));
    EXPECT_EQ(rec.records[i].phase, TrialPhase::kIdle);
  }
}

TEST(DeviceSim, CadenceWithinOneOfPeriod) {
  Recorder rec;
  DeviceSimulator sim(config("sim-cadence"), parse_trace("0 ARM\n0 START\n"), rec.sink());
  sim.step(300000);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<DeviceMillis> start(0, 200000);
  std::uniform_int_distribution<DeviceMillis> width(1, 90000);
  for (int i = 0; i < 500; ++i) {
    const DeviceMillis a = start(rng);
    const DeviceMillis w = width(rng);
    std::int64_t n = 0;
    for (const auto& r : rec.records) {
      const auto t = static_cast<DeviceMillis>(r.sent_epoch_ms);
      n += t >= a && t < a + w ? 1 : 0;
    }
    const auto expected = static_cast<std::int64_t>(w / 5000);
    ASSERT_LE(std::abs(n - expected), 1) << "window [" << a << ", " << a + w << ")";
  }
}

TEST(DeviceSim, SixtySecondsOfRunningGivesTwelveRecords) {
  Recorder rec;
  DeviceSimulator sim(config("sim-sixty"), parse_trace("0 ARM\n1000 START\n"), rec.sink());
  sim.step(61000);
  std::size_t running = 0;
  for (const auto& r : rec.records) running += r.phase == TrialPhase::kRunning ? 1 : 0;
  EXPECT_EQ(running, 12u);
}

TEST(DeviceSim, InjectionWhileIdleIsLoggedNotApplied) {
  DeviceSimulator sim(config("sim-idle"));
  sim.step(100);
  sim.inject_event(CircuitEventKind::kBlueButtonPressed);
  EXPECT_EQ(sim.trial().phase, TrialPhase::kIdle);
  ASSERT_EQ(sim.log().size(), 1u);
  EXPECT_NE(sim.log().front().find("rejected BLUE_BUTTON_PRESSED"), std::string::npos);
}

TEST(DeviceSim, CompletionEmitsFlushRecord) {
  Recorder rec;
  DeviceSimulator sim(config("sim-flush"), {}, rec.sink());
  sim.inject_arm();
  sim.step(1);
  sim.inject_start();
  for (std::size_t i = 0; i < kManipulationTaskCount; ++i) {
    sim.step(sim.now() + 700);
    sim.inject_event(kAllEventKinds[i]);
  }
  sim.step(sim.now() + 700);
  const auto before = rec.records.size();
  sim.inject_event(CircuitEventKind::kRedButtonPressed);
  ASSERT_EQ(rec.records.size(), before + 1);
  EXPECT_EQ(rec.records.back().phase, TrialPhase::kCompleted);
  EXPECT_EQ(rec.records.back().points, 6u);
  EXPECT_EQ(rec.records.back().timestamps[index_of(TaskId::kStop)], 6u * 700);
}

TEST(DeviceSim, DisturbedArmedBoardReturnsToIdle) {
  DeviceSimulator sim(config("sim-disturb"));
  sim.inject_arm();
  BoardState moved;
  moved.plug_in_source_port = false;
  sim.set_board_state(moved);
  EXPECT_EQ(sim.trial().phase, TrialPhase::kIdle);
  sim.inject_arm();
  EXPECT_EQ(sim.trial().phase, TrialPhase::kIdle);
  EXPECT_EQ(sim.log().size(), 1u);
  sim.reset_board();
  sim.inject_arm();
  EXPECT_EQ(sim.trial().phase, TrialPhase::kArmed);
}

TEST(DeviceSim, RearmAfterFinishStartsNextTrial) {
  DeviceSimulator sim(config("sim-rearm"), parse_trace("0 ARM\n0 START\n"));
  sim.step(600000);
  ASSERT_EQ(sim.trial().phase, TrialPhase::kExpired);
  sim.inject_arm();
  EXPECT_EQ(sim.trial().trial_id, 2u);
  EXPECT_EQ(sim.trial().phase, TrialPhase::kArmed);
}

TEST(DeviceSim, DeterministicForSeed) {
  const EventTrace trace = load_trace(trace_path("RoboPig"));
  std::vector<TelemetryRecord> a, b, c;
  replay_trace(trace, "sim-det", 42, &a);
  replay_trace(trace, "sim-det", 42, &b);
  replay_trace(trace, "sim-det", 43, &c);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), c.size());
  EXPECT_NE(a.back().accel_sum, c.back().accel_sum);
  EXPECT_EQ(a.back().timestamps, c.back().timestamps);
}

TEST(DeviceSim, AccelBurstsAccumulate) {
  // A half-sine of peak P over D ms integrates to 2*P*D/pi g*ms; noise is
  // at most 0.01*sqrt(3) g per sample.
  const EventTrace trace = parse_trace("0 ARM\n0 START\n1000 ACCEL_BURST 0.6 300\n");
  DeviceSimulator sim(config("sim-burst"), trace);
  sim.step(10000);
  const double burst = 2 * 0.6 * 0.3 / std::numbers::pi;
  const double noise = 10.0 * 0.01 * std::sqrt(3.0);
  EXPECT_GT(sim.trial().accel_sum, burst - 0.01 - 0.3 * 0.0175);
  EXPECT_LT(sim.trial().accel_sum, burst + noise + 0.01);
}

TEST(DeviceSim, DisplaySnapshot) {
  TrialRecord t;
  t.trial_id = 2;
  t.phase = TrialPhase::kRunning;
  t.start_device_ms = 1000;
  t.timestamps[index_of(TaskId::kFindBoard)] = 78650;
  t.points = 1;
  t.accel_sum = 1.25;
  EXPECT_EQ(render_display(t, 86000).to_text(),
            "TRIAL 2 RUNNING\n"
            "TIME 85.00 s\n"
            "POINTS 1/6\n"
            "FIND  78.65\n"
            "KEY   --\n"
            "PLUG  --\n"
            "BATT1 --\n"
            "BATT2 --\n"
            "STOP  --\n"
            "ACCEL 1.250 g*s\n");
}

TEST(DeviceSim, DisplayDoesNotMutateState) {
  DeviceSimulator sim(config("sim-display"), load_trace(trace_path("Human")));
  sim.step(5000);
  const TrialRecord before = sim.trial();
  const auto emitted = sim.emitted();
  for (int i = 0; i < 10; ++i) (void)sim.display();
  EXPECT_EQ(sim.trial(), before);
  EXPECT_EQ(sim.emitted(), emitted);
}

TEST(DeviceSim, DuplicateEndpointRejected) {
  {
    DeviceSimulator a(config("sim-dup"));
    EXPECT_THROW((void)DeviceSimulator(config("sim-dup")), DuplicateEndpoint);
  }
  EXPECT_NO_THROW((void)DeviceSimulator(config("sim-dup")));
}

TEST(DeviceSim, TimeCannotGoBackwards) {
  DeviceSimulator sim(config("sim-back"));
  sim.step(1000);
  EXPECT_THROW(sim.step(999), std::invalid_argument);
}

}  // namespace
}  // namespace taskboard

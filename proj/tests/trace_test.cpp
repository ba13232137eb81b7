#include <gtest/gtest.h>

#include "taskboard/trace.hpp"
#include "test_support.hpp"

namespace taskboard {
namespace {

constexpr const char* kSixEvents = R"(# comment
0 ARM
1000 START
79650 BLUE_BUTTON_PRESSED
85440 KEY_SWITCH_ACTIVATED
90540 PLUG_SEATED_TARGET

109680 BATT1_DROPPED
109830 BATT2_DROPPED
111730 RED_BUTTON_PRESSED
)";

TEST(Trace, ParsesEventsInOrder) {
  const EventTrace trace = parse_trace(kSixEvents);
  EXPECT_EQ(trace.entries.size(), 8u);
  ASSERT_EQ(trace.event_count(), 6u);
  const auto events = trace.events();
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].kind, kAllEventKinds[i]);
  EXPECT_EQ(events.front().t_device_ms, 79650u);
  EXPECT_EQ(trace.last_time(), 111730u);
}

TEST(Trace, FormatRoundTrips) {
  const EventTrace trace = parse_trace(std::string(kSixEvents) + "112000 ACCEL_BURST 0.6 300\n");
  EXPECT_EQ(parse_trace(format_trace(trace)), trace);
}

TEST(Trace, UnsortedTraceRejected) {
  try {
    (void)parse_trace("0 ARM\n1000 START\n900 BLUE_BUTTON_PRESSED\n");
    FAIL();
  } catch (const UnsortedTrace& e) {
    EXPECT_EQ(e.line_no(), 3u);
  }
}

TEST(Trace, ParseErrorCarriesLineNumber) {
  const char* bad[] = {"0 ARM\n\n12x START\n", "0 ARM\n\n5 JUMP\n", "0 ARM\n\n5 ACCEL_BURST 0.5\n",
                       "0 ARM\n\n5 START extra\n"};
  for (const char* text : bad) {
    try {
      (void)parse_trace(text);
      FAIL() << text;
    } catch (const TraceParseError& e) {
      EXPECT_EQ(e.line_no(), 3u) << text;
    }
  }
}

TEST(Trace, EqualTimesAllowed) {
  EXPECT_EQ(parse_trace("5 ARM\n5 START\n").entries.size(), 2u);
}

TEST(Trace, FixturesLoad) {
  for (const char* subject : {"RoboTHIx", "RoboPig", "Benchmark", "Ewas", "RAND-E", "Human"}) {
    const EventTrace trace = load_trace(testing::trace_path(subject));
    EXPECT_EQ(trace.event_count(), 6u) << subject;
  }
  EXPECT_THROW((void)load_trace(testing::trace_path("no-such-subject")), std::runtime_error);
}

}  // namespace
}  // namespace taskboard

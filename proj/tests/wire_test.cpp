#include <gtest/gtest.h>

#include <random>

#include "json.hpp"
#include "taskboard/wire.hpp"
#include "wire_generators.hpp"

namespace taskboard {
namespace {

TelemetryRecord sample_record() {
  TrialRecord trial;
  trial.phase = TrialPhase::kRunning;
  trial.timestamps[index_of(TaskId::kFindBoard)] = 78650;
  trial.points = 1;
  trial.accel_sum = 0.5;
  return make_record("board-a", 3, 15000, trial);
}

TEST(Wire, CanonicalEncoding) {
  EXPECT_EQ(encode_record(sample_record()),
            "{\"accel_sum\":0.500,\"endpoint_id\":\"board-a\",\"phase\":\"RUNNING\",\"points\":1,\"seq\":3,"
            "\"sent_epoch_ms\":15000,\"timestamps\":{\"batt1\":null,\"batt2\":null,\"find_board\":78650,"
            "\"key_switch\":null,\"plug\":null,\"stop\":null},\"trial_id\":1,\"v\":1}\n");
}

TEST(Wire, FreshTrialHasSixExplicitNulls) {
  const std::string line = encode_record(make_record("b", 1, 0, TrialRecord{}));
  const auto doc = nlohmann::json::parse(line);
  ASSERT_EQ(doc["timestamps"].size(), kTaskCount);
  for (const auto& [key, value] : doc["timestamps"].items()) EXPECT_TRUE(value.is_null()) << key;
}

TEST(Wire, SingleLineWithoutInteriorNewlines) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const std::string line = encode_record(testing::random_record(rng));
    ASSERT_EQ(line.back(), '\n');
    ASSERT_EQ(line.find('\n'), line.size() - 1);
  }
}

TEST(Wire, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 3000; ++i) {
    const TelemetryRecord r = testing::random_record(rng);
    const std::string line = encode_record(r);
    const TelemetryRecord back = decode_record(line);
    ASSERT_EQ(back, r) << line;
    ASSERT_EQ(encode_record(back), line);
  }
}

TEST(Wire, ReorderedKeysDecodeToCanonicalForm) {
  const std::string canonical = encode_record(sample_record());
  auto doc = nlohmann::json::parse(canonical);
  std::string permuted = "{ \"v\": 1, \"seq\": 3, \"endpoint_id\": \"board-a\", \"timestamps\": " +
                         doc["timestamps"].dump() + ", \"trial_id\": 1, \"phase\": \"RUNNING\", \"points\": 1,"
                         " \"sent_epoch_ms\": 15000, \"accel_sum\": 0.5 }";
  EXPECT_EQ(encode_record(decode_record(permuted)), canonical);
}

TEST(Wire, UnknownKeysIgnored) {
  std::string line = encode_record(sample_record());
  line.insert(1, "\"firmware\":\"2.1\",");
  EXPECT_EQ(decode_record(line), sample_record());
}

TEST(Wire, UnsupportedVersion) {
  std::string line = encode_record(sample_record());
  line.replace(line.find("\"v\":1"), 5, "\"v\":99");
  try {
    (void)decode_record(line);
    FAIL();
  } catch (const UnsupportedVersion& e) {
    EXPECT_EQ(e.version(), 99);
  }
}

TEST(Wire, MalformedInputs) {
  const std::string good = encode_record(sample_record());
  const std::string cases[] = {
      good.substr(0, good.size() / 2),
      "",
      "[]",
      "{\"v\":\"1\"}",
      "{\"v\":1}",
      std::string(good).replace(good.find("\"points\":1"), 10, "\"points\":-1"),
      std::string(good).replace(good.find("\"phase\":\"RUNNING\""), 17, "\"phase\":\"PAUSED\""),
      std::string(good).replace(good.find("\"batt1\":null,"), 13, ""),
      std::string(good).replace(good.find("\"find_board\":78650"), 18, "\"find_board\":\"78650\""),
      std::string(good).replace(good.find("0.500"), 5, "-0.5"),
      std::string(good).replace(good.find("\"board-a\""), 9, "\"\""),
      "{\"v\":1,\n\"seq\":2}",
  };
  for (const auto& c : cases) EXPECT_THROW((void)decode_record(c), MalformedRecord) << c;
}

TEST(Wire, EncodeRejectsNonFiniteAccel) {
  TelemetryRecord r = sample_record();
  r.accel_sum = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW((void)encode_record(r), std::invalid_argument);
}

TEST(Wire, MakeRecordQuantizesAccel) {
  TrialRecord t;
  t.accel_sum = 0.1234567;
  const TelemetryRecord r = make_record("b", 1, 0, t);
  EXPECT_EQ(decode_record(encode_record(r)), r);
  EXPECT_EQ(format_fixed3(r.accel_sum), "0.123");
}

}  // namespace
}  // namespace taskboard

#include <gtest/gtest.h>

#include <fstream>

#include "looprl/memo.hpp"

using namespace looprl;

namespace {

MemoKey key(const std::string& s, BackendKind b = BackendKind::kSynthetic) { return {"p1", s, b}; }
MemoRecord legal(double t) { return {true, t, 1, {}}; }
MemoRecord illegal() { return {false, std::nullopt, 0, {}}; }

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "/" + name; }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST(Memo, LookupCountsHitsAndMisses) {
  MemoStore m;
  EXPECT_FALSE(m.lookup(key("a")));
  m.insert(key("a"), legal(1.0));
  EXPECT_TRUE(m.lookup(key("a")));
  EXPECT_TRUE(m.lookup(key("a")));
  EXPECT_FALSE(m.lookup(key("a", BackendKind::kMeasured)));
  EXPECT_TRUE(m.peek(key("a")));
  const MemoStats s = m.stats();
  EXPECT_EQ(s.hits, 2u);
  EXPECT_EQ(s.misses, 2u);
  EXPECT_EQ(s.lookups(), 4u);
  m.reset_stats();
  EXPECT_EQ(m.stats().lookups(), 0u);
}

TEST(Memo, ConflictingLegalityIsAnError) {
  MemoStore m;
  m.insert(key("a"), legal(1.0));
  EXPECT_THROW(m.insert(key("a"), illegal()), Error);
  m.insert(key("b"), illegal());
  EXPECT_THROW(m.insert(key("b"), legal(2.0)), Error);
}

TEST(Memo, LastWriteWinsOnTime) {
  MemoStore m;
  m.insert(key("a"), legal(1.0));
  m.insert(key("a"), legal(0.5));
  EXPECT_EQ(*m.peek(key("a"))->exec_time_s, 0.5);
  EXPECT_EQ(m.size(), 1u);
}

TEST(Memo, RejectsInconsistentRecords) {
  MemoStore m;
  EXPECT_THROW(m.insert(key("a"), MemoRecord{false, 1.0, 1, {}}), Error);
  EXPECT_THROW(m.insert(key("a"), MemoRecord{true, std::nullopt, 1, {}}), Error);
  EXPECT_THROW(m.insert(key("a"), legal(0.0)), Error);
  EXPECT_THROW(m.insert(key(""), legal(1.0)), Error);
}

TEST(Memo, SaveLoadRoundTrip) {
  MemoStore m;
  m.insert(key("\xE2\x88\x85"), legal(0.125));
  m.insert(key("B0:P(0)"), legal(1.0 / 3.0));
  m.insert(key("B0:I(0,1)"), illegal());
  m.insert(key("B0:P(0)", BackendKind::kMeasured), MemoRecord{true, 2e-3, 30, host_fingerprint()});
  const std::string path = temp_path("memo_roundtrip.ndjson");
  m.save(path);
  MemoStore back;
  const MemoLoadReport rep = back.load(path);
  EXPECT_EQ(rep.records, 4u);
  EXPECT_EQ(rep.foreign_host, 0u);
  EXPECT_EQ(back.size(), 4u);
  for (const auto& k : {key("\xE2\x88\x85"), key("B0:P(0)"), key("B0:I(0,1)"), key("B0:P(0)", BackendKind::kMeasured)})
    EXPECT_EQ(back.peek(k), m.peek(k)) << k.schedule_key;
  // Saving the reloaded store reproduces the file byte for byte.
  const std::string again = temp_path("memo_roundtrip2.ndjson");
  back.save(again);
  std::ifstream a(path), b(again);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Memo, RecordFields) {
  const auto j = MemoStore::to_json(key("B0:P(0)"), legal(1.5));
  EXPECT_EQ(j["program_id"], "p1");
  EXPECT_EQ(j["backend"], "synthetic");
  EXPECT_EQ(j["legal"], true);
  EXPECT_EQ(j["exec_time_s"], 1.5);
  EXPECT_EQ(j["runs"], 1);
  EXPECT_FALSE(j.contains("host"));
  const auto m = MemoStore::to_json(key("x", BackendKind::kMeasured), MemoRecord{true, 1.0, 30, "h/4"});
  EXPECT_EQ(m["host"], "h/4");
  EXPECT_FALSE(MemoStore::to_json(key("x"), illegal()).contains("exec_time_s"));
}

TEST(Memo, MalformedLineNamesItsNumber) {
  const std::string path = temp_path("memo_bad.ndjson");
  write_file(path,
             "{\"program_id\":\"p\",\"schedule_key\":\"a\",\"backend\":\"synthetic\",\"legal\":true,\"exec_time_s\":1.0,\"runs\":1}\n"
             "\n"
             "{\"program_id\":\"p\",\"schedule_key\":\"b\",\"backend\":\"synthetic\",\"legal\":tru\n");
  MemoStore m;
  try {
    m.load(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("memo_bad.ndjson:3:"), std::string::npos) << e.what();
  }
}

TEST(Memo, UnknownFieldsAndBackendsRejected) {
  const std::string path = temp_path("memo_unknown.ndjson");
  write_file(path, "{\"program_id\":\"p\",\"schedule_key\":\"a\",\"backend\":\"synthetic\",\"legal\":false,\"runs\":0,\"extra\":1}\n");
  MemoStore m;
  EXPECT_THROW(m.load(path), Error);
  write_file(path, "{\"program_id\":\"p\",\"schedule_key\":\"a\",\"backend\":\"gpu\",\"legal\":false,\"runs\":0}\n");
  EXPECT_THROW(m.load(path), Error);
  EXPECT_THROW(m.load(path + ".missing"), Error);
}

TEST(Memo, ConflictAcrossFilesReported) {
  const std::string path = temp_path("memo_conflict.ndjson");
  write_file(path, "{\"program_id\":\"p1\",\"schedule_key\":\"a\",\"backend\":\"synthetic\",\"legal\":false,\"runs\":0}\n");
  MemoStore m;
  m.insert(key("a"), legal(1.0));
  EXPECT_THROW(m.load(path), Error);
}

TEST(Memo, ForeignHostCounted) {
  const std::string path = temp_path("memo_foreign.ndjson");
  write_file(path,
             "{\"program_id\":\"p\",\"schedule_key\":\"a\",\"backend\":\"measured\",\"legal\":true,\"exec_time_s\":0.1,"
             "\"runs\":30,\"host\":\"elsewhere/64\"}\n");
  MemoStore m;
  EXPECT_EQ(m.load(path).foreign_host, 1u);
}

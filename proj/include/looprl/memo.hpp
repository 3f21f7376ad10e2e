#pragma once

// Persistent cache of legality verdicts and execution times keyed by
// (program id, schedule key, backend).

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "looprl/runtime.hpp"
#include "looprl/util.hpp"

namespace looprl {

struct MemoKey {
  std::string program_id;
  std::string schedule_key;
  BackendKind backend = BackendKind::kSynthetic;

  auto operator<=>(const MemoKey&) const = default;
};

struct MemoRecord {
  bool legal = false;
  std::optional<double> exec_time_s;  // present iff legal
  int runs = 0;
  std::string host;  // measured records only

  bool operator==(const MemoRecord&) const = default;
};

struct MemoStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t lookups() const { return hits + misses; }
};

/// Identifies the machine that produced measured times.
inline std::string host_fingerprint() {
  char name[256] = {0};
  if (gethostname(name, sizeof(name) - 1) != 0) name[0] = '\0';
  return std::string(name) + "/" + std::to_string(std::thread::hardware_concurrency());
}

struct MemoLoadReport {
  std::size_t records = 0;
  std::size_t foreign_host = 0;  // measured records from another machine
};

class MemoStore {
 public:
  std::optional<MemoRecord> lookup(const MemoKey& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) {
      ++misses_;
      return std::nullopt;
    }
    ++hits_;
    return it->second;
  }

  /// Reads without touching the counters.
  std::optional<MemoRecord> peek(const MemoKey& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  /// Inserts or overwrites. A record contradicting the stored legality is
  /// rejected; for agreeing records the later time wins.
  void insert(const MemoKey& key, const MemoRecord& rec) {
    validate(key, rec);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it != map_.end() && it->second.legal != rec.legal)
      throw Error("memo conflict for " + key.program_id + " " + key.schedule_key + ": stored legality " +
                  (it->second.legal ? "true" : "false") + ", new " + (rec.legal ? "true" : "false"));
    map_[key] = rec;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return map_.size();
  }

  MemoStats stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    return {hits_, misses_};
  }

  void reset_stats() {
    std::lock_guard<std::mutex> lock(mu_);
    hits_ = misses_ = 0;
  }

  /// One JSON object per line, sorted by key.
  void save(const std::string& path) const {
    std::lock_guard<std::mutex> lock(mu_);
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("cannot write memo file '" + path + "'");
      for (const auto& [k, r] : map_) out << to_json(k, r).dump() << "\n";
      if (!out) throw Error("failed writing memo file '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot replace memo file '" + path + "'");
  }

  /// Merges the records of `path` into the store. Throws on the first
  /// malformed line, naming it.
  MemoLoadReport load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open memo file '" + path + "'");
    MemoLoadReport report;
    const std::string here = host_fingerprint();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      MemoKey key;
      MemoRecord rec;
      try {
        std::tie(key, rec) = from_json(nlohmann::json::parse(line));
        insert(key, rec);
      } catch (const std::exception& e) {
        throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      ++report.records;
      if (key.backend == BackendKind::kMeasured && rec.host != here) ++report.foreign_host;
    }
    return report;
  }

  static nlohmann::json to_json(const MemoKey& k, const MemoRecord& r) {
    nlohmann::json j;
    j["program_id"] = k.program_id;
    j["schedule_key"] = k.schedule_key;
    j["backend"] = backend_name(k.backend);
    j["legal"] = r.legal;
    if (r.exec_time_s) j["exec_time_s"] = *r.exec_time_s;
    j["runs"] = r.runs;
    if (k.backend == BackendKind::kMeasured) j["host"] = r.host;
    return j;
  }

  static std::pair<MemoKey, MemoRecord> from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("record is not an object");
    static const char* kFields[] = {"program_id", "schedule_key", "backend", "legal", "exec_time_s", "runs", "host"};
    for (const auto& [name, v] : j.items()) {
      bool known = false;
      for (const char* f : kFields) known = known || name == f;
      if (!known) throw Error("unknown field '" + name + "'");
    }
    MemoKey k;
    MemoRecord r;
    k.program_id = j.at("program_id").get<std::string>();
    k.schedule_key = j.at("schedule_key").get<std::string>();
    k.backend = parse_backend(j.at("backend").get<std::string>());
    r.legal = j.at("legal").get<bool>();
    if (j.contains("exec_time_s") && !j["exec_time_s"].is_null()) r.exec_time_s = j["exec_time_s"].get<double>();
    r.runs = j.at("runs").get<int>();
    if (j.contains("host")) r.host = j["host"].get<std::string>();
    validate(k, r);
    return {k, r};
  }

 private:
  static void validate(const MemoKey& key, const MemoRecord& rec) {
    if (key.program_id.empty() || key.schedule_key.empty()) throw Error("memo key is incomplete");
    if (!rec.legal && rec.exec_time_s) throw Error("illegal record for " + key.schedule_key + " carries a time");
    if (rec.legal && !rec.exec_time_s) throw Error("legal record for " + key.schedule_key + " lacks a time");
    if (rec.exec_time_s && !(*rec.exec_time_s > 0.0 && std::isfinite(*rec.exec_time_s)))
      throw Error("record for " + key.schedule_key + " has a non-positive time");
    if (rec.runs < 0) throw Error("negative run count");
  }

  mutable std::mutex mu_;
  std::map<MemoKey, MemoRecord> map_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

}  // namespace looprl

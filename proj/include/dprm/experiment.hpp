#pragma once

// Experiment plumbing: flat key=value configs, versioned JSON checkpoints and a
// sample runner whose output is independent of worker count and interruption.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dprm/errors.hpp"
#include "dprm/rng.hpp"
#include "dprm/stats.hpp"

namespace dprm {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kCheckpointFormat = 1;
inline constexpr int kSummarySchema = 1;

class ExperimentConfig {
 public:
  ExperimentConfig() = default;
  explicit ExperimentConfig(std::map<std::string, std::string> v) : values_(std::move(v)) {}

  /// Keys that steer execution but never change results.
  static const std::set<std::string>& runtime_keys() {
    static const std::set<std::string> k{"workers", "stop-after", "checkpoint-interval", "out"};
    return k;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& def = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double number(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("--" + key + ": expected a number, got '" + it->second + "'");
  }

  long integer(const std::string& key, long def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const long v = std::stol(it->second, &pos);
      if (pos == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("--" + key + ": expected an integer, got '" + it->second + "'");
  }

  std::uint64_t unsigned64(const std::string& key, std::uint64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(it->second, &pos, 0);
      if (pos == it->second.size() && it->second.front() != '-') return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("--" + key + ": expected a non-negative integer, got '" + it->second + "'");
  }

  bool flag(const std::string& key) const {
    const auto v = str(key, "false");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("--" + key + ": expected true/false, got '" + v + "'");
  }

  /// Sorted key=value lines of the result-determining keys.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_)
      if (!runtime_keys().count(k)) s += k + "=" + v + "\n";
    return s;
  }

  std::uint64_t hash() const {
    std::uint64_t h = hash_words(0x6470726d, {kCheckpointFormat});
    for (char c : std::string(kVersion) + "\n" + canonical()) h = absorb(h, static_cast<unsigned char>(c));
    return h;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// DPRM_WORKERS overrides the configured worker count.
inline unsigned resolve_workers(const ExperimentConfig& cfg) {
  long w = cfg.integer("workers", 0);
  if (const char* env = std::getenv("DPRM_WORKERS")) {
    try {
      w = std::stol(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("DPRM_WORKERS: expected an integer, got '") + env + "'");
    }
  }
  if (w < 0) throw ConfigError("--workers must be >= 0 (0 picks the hardware concurrency)");
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(w);
}

struct OutputPaths {
  std::filesystem::path summary_csv, samples_csv, summary_json, checkpoint;

  static OutputPaths from_prefix(const std::string& out) {
    return {out + ".csv", out + ".samples.csv", out + ".json", out + ".ckpt.json"};
  }
};

inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
    if (!f.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Independent samples over `groups` parameter points; sample i of every group
/// sees field seed derive_seed(master, i).
struct SampleJob {
  std::vector<std::string> key_columns;
  std::vector<std::string> value_columns;
  long groups = 1;
  long samples = 0;
  std::uint64_t master_seed = 0;
  std::function<std::vector<std::string>(long group)> group_keys;
  std::function<std::vector<double>(long group, long index, std::uint64_t seed)> compute;
};

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::string config_hash;
  std::string version;
  long completed = 0;
  long total = 0;
  std::uintmax_t samples_csv_bytes = 0;
  double wall_seconds = 0;
  bool complete = false;
  std::vector<std::vector<RunningStats>> stats;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "dprm-checkpoint";
    j["format_version"] = kCheckpointFormat;
    j["version"] = version;
    j["config"] = config;
    j["config_hash"] = config_hash;
    j["completed"] = completed;
    j["next_sample_index"] = completed;
    j["total"] = total;
    j["samples_csv_bytes"] = samples_csv_bytes;
    j["wall_seconds"] = bits_hex(wall_seconds);
    j["status"] = complete ? "complete" : "running";
    auto& st = j["stats"] = nlohmann::json::array();
    for (const auto& group : stats) {
      auto g = nlohmann::json::array();
      for (const auto& s : group) g.push_back({{"n", s.n}, {"mean", bits_hex(s.mean)}, {"m2", bits_hex(s.m2)}});
      st.push_back(std::move(g));
    }
    return j;
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    Checkpoint c;
    try {
      const auto j = nlohmann::json::parse(f);
      if (j.at("format").get<std::string>() != "dprm-checkpoint")
        throw CheckpointError("not a dprm checkpoint: " + path.string());
      if (j.at("format_version").get<int>() != kCheckpointFormat)
        throw CheckpointError("checkpoint format version " + std::to_string(j.at("format_version").get<int>()) +
                              " is not supported (expected " + std::to_string(kCheckpointFormat) + ")");
      c.version = j.at("version").get<std::string>();
      c.config = j.at("config").get<std::map<std::string, std::string>>();
      c.config_hash = j.at("config_hash").get<std::string>();
      c.completed = j.at("completed").get<long>();
      c.total = j.at("total").get<long>();
      c.samples_csv_bytes = j.at("samples_csv_bytes").get<std::uintmax_t>();
      c.wall_seconds = double_from_hex(j.at("wall_seconds").get<std::string>());
      const auto status = j.at("status").get<std::string>();
      if (status != "complete" && status != "running") throw CheckpointError("unknown checkpoint status '" + status + "'");
      c.complete = status == "complete";
      for (const auto& g : j.at("stats")) {
        std::vector<RunningStats> group;
        for (const auto& s : g) {
          RunningStats r;
          r.n = s.at("n").get<long>();
          r.mean = double_from_hex(s.at("mean").get<std::string>());
          r.m2 = double_from_hex(s.at("m2").get<std::string>());
          group.push_back(r);
        }
        c.stats.push_back(std::move(group));
      }
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
    if (c.completed < 0 || c.completed > c.total || (c.complete && c.completed != c.total))
      throw CheckpointError("corrupt checkpoint " + path.string() + ": inconsistent sample counts");
    if (c.version != kVersion)
      throw CheckpointError("checkpoint written by version " + c.version + ", this is " + kVersion);
    if (ExperimentConfig(c.config).hash_hex() != c.config_hash)
      throw CheckpointError("checkpoint config hash mismatch: stored " + c.config_hash + ", recomputed " +
                            ExperimentConfig(c.config).hash_hex());
    return c;
  }
};

enum class RunStatus { complete, interrupted };

struct RunOutcome {
  RunStatus status = RunStatus::complete;
  std::vector<std::vector<RunningStats>> stats;  // [group][value column]
  double wall_seconds = 0;
};

/// Runs (or resumes) `job`, streaming rows to the samples CSV in index order and
/// checkpointing every `checkpoint-interval` samples.
inline RunOutcome run_samples(const SampleJob& job, const ExperimentConfig& cfg, const OutputPaths& paths,
                              const Checkpoint* resume = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const unsigned workers = resolve_workers(cfg);
  const long interval = cfg.integer("checkpoint-interval", 1000);
  if (interval < 1) throw ConfigError("--checkpoint-interval must be >= 1");
  const long stop_after = resume ? 0 : cfg.integer("stop-after", 0);
  const long total = job.groups * job.samples;
  const std::size_t ncol = job.value_columns.size();

  Checkpoint ck;
  ck.config = cfg.values();
  ck.config_hash = cfg.hash_hex();
  ck.version = kVersion;
  ck.total = total;
  if (resume) {
    if (resume->total != total) throw CheckpointError("checkpoint sample total does not match its config");
    if (resume->stats.size() != static_cast<std::size_t>(job.groups))
      throw CheckpointError("checkpoint statistics do not match the job shape");
    for (const auto& g : resume->stats)
      if (g.size() != ncol) throw CheckpointError("checkpoint statistics do not match the job shape");
    std::error_code ec;
    const auto size = std::filesystem::file_size(paths.samples_csv, ec);
    if (ec || size < resume->samples_csv_bytes)
      throw CheckpointError("samples file " + paths.samples_csv.string() + " is missing or shorter than recorded");
    std::filesystem::resize_file(paths.samples_csv, resume->samples_csv_bytes);
    ck.completed = resume->completed;
    ck.stats = resume->stats;
    ck.wall_seconds = resume->wall_seconds;
    ck.samples_csv_bytes = resume->samples_csv_bytes;
  } else {
    ck.stats.assign(static_cast<std::size_t>(job.groups), std::vector<RunningStats>(ncol));
    std::ofstream f(paths.samples_csv, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + paths.samples_csv.string());
    std::string header;
    for (const auto& c : job.key_columns) header += c + ",";
    header += "sample_index,seed";
    for (const auto& c : job.value_columns) header += "," + c;
    f << header << "\n";
    f.flush();
    ck.samples_csv_bytes = std::filesystem::file_size(paths.samples_csv);
  }

  std::vector<std::vector<std::string>> keys(static_cast<std::size_t>(job.groups));
  for (long g = 0; g < job.groups; ++g)
    keys[static_cast<std::size_t>(g)] = job.group_keys ? job.group_keys(g) : std::vector<std::string>{};

  const double wall_base = ck.wall_seconds;
  auto save = [&] {
    ck.wall_seconds = wall_base + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_atomically(paths.checkpoint, ck.to_json().dump(1) + "\n");
  };

  std::ofstream out(paths.samples_csv, std::ios::binary | std::ios::app);
  while (ck.completed < total) {
    if (stop_after > 0 && ck.completed >= stop_after) {
      save();
      return {RunStatus::interrupted, ck.stats, ck.wall_seconds};
    }
    long end = std::min(total, ck.completed + interval);
    if (stop_after > 0) end = std::min(end, stop_after);
    const long begin = ck.completed;
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(end - begin));
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      const unsigned nw = static_cast<unsigned>(std::min<long>(workers, end - begin));
      for (unsigned w = 0; w < nw; ++w)
        pool.emplace_back([&, w] {
          try {
            for (long k = begin + w; k < end; k += nw) {
              const long g = k / job.samples, i = k % job.samples;
              auto row = job.compute(g, i, derive_seed(job.master_seed, static_cast<std::uint64_t>(i)));
              if (row.size() != ncol) throw std::logic_error("sample row has the wrong width");
              rows[static_cast<std::size_t>(k - begin)] = std::move(row);
            }
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        });
    }
    if (failure) std::rethrow_exception(failure);
    std::string text;
    for (long k = begin; k < end; ++k) {
      const long g = k / job.samples, i = k % job.samples;
      const auto& row = rows[static_cast<std::size_t>(k - begin)];
      for (const auto& s : keys[static_cast<std::size_t>(g)]) text += s + ",";
      text += std::to_string(i) + "," + std::to_string(derive_seed(job.master_seed, static_cast<std::uint64_t>(i)));
      for (std::size_t c = 0; c < ncol; ++c) {
        text += "," + fmt17(row[c]);
        ck.stats[static_cast<std::size_t>(g)][c].add(row[c]);
      }
      text += "\n";
    }
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + paths.samples_csv.string());
    ck.samples_csv_bytes = std::filesystem::file_size(paths.samples_csv);
    ck.completed = end;
    if (ck.completed < total) save();
  }
  ck.complete = true;
  save();
  return {RunStatus::complete, ck.stats, ck.wall_seconds};
}

/// JSON summary skeleton shared by every subcommand.
inline nlohmann::json summary_header(const std::string& subcommand, const ExperimentConfig& cfg, double wall_seconds) {
  nlohmann::json j;
  j["schema_version"] = kSummarySchema;
  j["version"] = kVersion;
  j["subcommand"] = subcommand;
  j["config"] = cfg.values();
  j["config_hash"] = cfg.hash_hex();
  j["wall_time_seconds"] = wall_seconds;
  j["statistics"] = nlohmann::json::array();
  return j;
}

inline nlohmann::json statistic_json(const std::string& name, const RunningStats& s) {
  return {{"name", name},
          {"mean", s.mean},
          {"variance", s.variance()},
          {"stderr", s.stderr_of_mean()},
          {"count", s.n}};
}

/// Exact quantity reported in statistic form (stderr 0).
inline nlohmann::json exact_json(const std::string& name, double v) {
  return {{"name", name}, {"mean", v}, {"variance", 0.0}, {"stderr", 0.0}, {"count", 0}, {"exact", true}};
}

}  // namespace dprm

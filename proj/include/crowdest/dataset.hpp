#pragma once

// Randomized single-room corpus: sampling, parallel generation, and CSV I/O.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

#include "crowdest/room.hpp"
#include "crowdest/sim.hpp"

namespace crowdest {

/// Parameter intervals of the training corpus.
struct RoomBounds {
  double width_min = 2.0, width_max = 20.0;
  double length_min = 2.0, length_max = 20.0;
  double exit_min = 0.9, exit_max = 5.0;
  double flow_min = 1.0, flow_max = 10.0;
  double duration_min = 0.2, duration_max = 100.0;
  int pop_min = 0, pop_max = 99;
};

inline constexpr RoomBounds kTrainingBounds{};

/// Same intervals with flow duration capped at 20 s, which keeps corpus
/// generation to minutes instead of hours.
inline constexpr RoomBounds kDeskBounds = [] {
  RoomBounds b;
  b.duration_max = 20.0;
  return b;
}();

/// Splitmix64 finalizer; a bijection, so distinct inputs give distinct seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t record_seed(std::uint64_t base_seed, std::uint64_t idx) {
  return splitmix64(splitmix64(base_seed) ^ idx);
}

/// Draws each field uniformly in its interval; exit_size is redrawn while it
/// exceeds the width.
inline RoomSpec sample_room(std::mt19937_64& rng, const RoomBounds& b = kTrainingBounds) {
  const auto uni = [&](double lo, double hi) { return lo + (hi - lo) * sim::uniform01(rng); };
  RoomSpec s;
  s.width = uni(b.width_min, b.width_max);
  s.length = uni(b.length_min, b.length_max);
  do {
    s.exit_size = uni(b.exit_min, b.exit_max);
  } while (s.exit_size > s.width);
  s.input_flow = uni(b.flow_min, b.flow_max);
  s.flow_duration = uni(b.duration_min, b.duration_max);
  const auto span = static_cast<std::uint64_t>(b.pop_max - b.pop_min + 1);
  s.initial_population = b.pop_min + static_cast<int>(rng() % span);
  return s;
}

struct DatasetRecord {
  std::uint64_t idx = 0;
  std::uint64_t seed = 0;
  RoomSpec spec;
  sim::RoomMetrics metrics;
  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

inline constexpr std::string_view kCsvHeader =
    "idx,seed,width,length,exit_size,input_flow,flow_duration,initial_population,tt,avg_exit_time,avg_speed,"
    "avg_density,censored";

namespace detail {

inline void put_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view field, std::string_view name, std::size_t line) {
  T v{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad " + std::string(name) + " '" +
                             std::string(field) + "'");
  }
  return v;
}

}  // namespace detail

/// One CSV row, shortest round-trip formatting for doubles.
inline std::string to_csv(const DatasetRecord& r) {
  std::string out = std::to_string(r.idx) + ',' + std::to_string(r.seed);
  for (double v : {r.spec.width, r.spec.length, r.spec.exit_size, r.spec.input_flow, r.spec.flow_duration}) {
    out += ',';
    detail::put_double(out, v);
  }
  out += ',' + std::to_string(r.spec.initial_population);
  for (double v : {r.metrics.tt, r.metrics.avg_exit_time, r.metrics.avg_speed, r.metrics.avg_density}) {
    out += ',';
    detail::put_double(out, v);
  }
  out += r.metrics.censored ? ",1" : ",0";
  return out;
}

inline DatasetRecord parse_csv_row(std::string_view row, std::size_t line = 0) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    const auto comma = row.find(',', start);
    f.push_back(row.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (f.size() != 13) {
    throw std::runtime_error("line " + std::to_string(line) + ": expected 13 fields, got " + std::to_string(f.size()));
  }
  DatasetRecord r;
  r.idx = detail::parse_number<std::uint64_t>(f[0], "idx", line);
  r.seed = detail::parse_number<std::uint64_t>(f[1], "seed", line);
  r.spec.width = detail::parse_number<double>(f[2], "width", line);
  r.spec.length = detail::parse_number<double>(f[3], "length", line);
  r.spec.exit_size = detail::parse_number<double>(f[4], "exit_size", line);
  r.spec.input_flow = detail::parse_number<double>(f[5], "input_flow", line);
  r.spec.flow_duration = detail::parse_number<double>(f[6], "flow_duration", line);
  r.spec.initial_population = detail::parse_number<int>(f[7], "initial_population", line);
  r.metrics.tt = detail::parse_number<double>(f[8], "tt", line);
  r.metrics.avg_exit_time = detail::parse_number<double>(f[9], "avg_exit_time", line);
  r.metrics.avg_speed = detail::parse_number<double>(f[10], "avg_speed", line);
  r.metrics.avg_density = detail::parse_number<double>(f[11], "avg_density", line);
  const int censored = detail::parse_number<int>(f[12], "censored", line);
  if (censored != 0 && censored != 1) throw std::runtime_error("line " + std::to_string(line) + ": bad censored flag");
  r.metrics.censored = censored == 1;
  return r;
}

inline std::vector<DatasetRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("dataset: missing or wrong header");
  std::vector<DatasetRecord> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    rows.push_back(parse_csv_row(line, n));
  }
  return rows;
}

inline std::vector<DatasetRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

inline void write_csv(std::ostream& out, const std::vector<DatasetRecord>& rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << to_csv(r) << '\n';
}

/// Simulates the room of record `idx`: the derived seed drives both the
/// parameter draw and the simulation.
inline DatasetRecord simulate_record(std::uint64_t base_seed, std::uint64_t idx, const sim::SimConfig& cfg,
                                     const RoomBounds& bounds) {
  DatasetRecord r;
  r.idx = idx;
  r.seed = record_seed(base_seed, idx);
  std::mt19937_64 rng(r.seed);
  r.spec = sample_room(rng, bounds);
  sim::SimConfig c = cfg;
  c.rng_seed = r.seed;
  r.metrics = sim::run_room(r.spec, c);
  return r;
}

struct GenerateOptions {
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  RoomBounds bounds = kTrainingBounds;
  sim::SimConfig cfg;
  std::function<void(std::uint64_t done, std::uint64_t total)> progress;
};

struct GenerateSummary {
  std::uint64_t written = 0;
  std::uint64_t censored = 0;
};

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Records 0..count-1 in index order, computed in parallel.
inline std::vector<DatasetRecord> generate_records(const GenerateOptions& opt) {
  std::vector<DatasetRecord> rows(opt.count);
  std::atomic<std::uint64_t> next{0};
  std::atomic<std::uint64_t> done{0};
  std::mutex progress_mu;
  std::exception_ptr failure;
  const auto worker = [&] {
    try {
      for (std::uint64_t i = next++; i < opt.count; i = next++) {
        rows[i] = simulate_record(opt.seed, i, opt.cfg, opt.bounds);
        const auto d = ++done;
        if (opt.progress) {
          std::lock_guard lock(progress_mu);
          opt.progress(d, opt.count);
        }
      }
    } catch (...) {
      std::lock_guard lock(progress_mu);
      if (!failure) failure = std::current_exception();
      next = opt.count;
    }
  };
  const unsigned n = std::min<std::uint64_t>(resolve_threads(opt.threads), std::max<std::uint64_t>(opt.count, 1));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

/// Generates the corpus into `out`. The file is written under a temporary
/// name and renamed at the end, so a failure never leaves a partial file.
inline GenerateSummary generate(const GenerateOptions& opt, const std::filesystem::path& out) {
  if (opt.count == 0) throw std::invalid_argument("generate: count must be positive");
  const auto rows = generate_records(opt);
  auto tmp = out;
  tmp += ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    write_csv(f, rows);
    f.flush();
    if (!f) {
      f.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, out);
  GenerateSummary s;
  s.written = rows.size();
  s.censored = static_cast<std::uint64_t>(
      std::count_if(rows.begin(), rows.end(), [](const DatasetRecord& r) { return r.metrics.censored; }));
  return s;
}

/// Rows usable for training: not censored.
inline std::vector<DatasetRecord> uncensored(const std::vector<DatasetRecord>& rows) {
  std::vector<DatasetRecord> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out),
               [](const DatasetRecord& r) { return !r.metrics.censored; });
  return out;
}

}  // namespace crowdest

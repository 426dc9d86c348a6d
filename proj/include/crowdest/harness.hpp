#pragma once

// Estimation-versus-simulation experiments: a bundled suite of environments
// and chains of replicated rooms, each simulated in full and estimated with
// the room surrogate.

#include <algorithm>
#include <cstdio>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "crowdest/dataset.hpp"
#include "crowdest/envgraph.hpp"
#include "crowdest/estimator.hpp"
#include "crowdest/layout.hpp"
#include "json.hpp"

namespace crowdest::harness {

/// Runs `n` independent jobs on up to `threads` workers; the first exception
/// is rethrown after all workers stop.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// series is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal series of length >= 2");
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct ComparisonCase {
  std::string name;
  /// "front" (population where the fixture puts it) or "distributed".
  std::string variant = "front";
  graph::EnvironmentGraph graph;
};

/// Suite file: {"version":1, "cases":[{"name", "graph", "distributed":[ip per room]}]}.
/// Every case yields its front-loaded graph and, when listed, the variant
/// with the same rooms and total population spread as given.
inline std::vector<ComparisonCase> parse_suite(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1) throw std::runtime_error("suite: expected version 1");
  std::vector<ComparisonCase> out;
  for (const auto& c : j.at("cases")) {
    ComparisonCase front;
    front.name = c.at("name").get<std::string>();
    front.graph = graph::from_json(c.at("graph"));
    out.push_back(front);
    if (!c.contains("distributed")) continue;
    const auto ips = c.at("distributed").get<std::vector<int>>();
    if (ips.size() != front.graph.rooms.size()) throw std::runtime_error("suite case '" + front.name + "': distributed list size");
    ComparisonCase spread = front;
    spread.variant = "distributed";
    int before = 0, after = 0;
    for (std::size_t i = 0; i < ips.size(); ++i) {
      before += spread.graph.rooms[i].spec.initial_population;
      spread.graph.rooms[i].spec.initial_population = ips[i];
      after += ips[i];
    }
    if (before != after) throw std::runtime_error("suite case '" + front.name + "': distributed total differs");
    out.push_back(std::move(spread));
  }
  return out;
}

inline std::vector<ComparisonCase> load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_suite(nlohmann::json::parse(in));
}

struct CaseResult {
  std::string name;
  std::string variant;
  std::size_t rooms = 0;
  int agents = 0;
  double st = 0.0;     // simulated
  double tt_e = 0.0;   // estimated
  double err = 0.0;    // (tt_e - st) / st
  bool censored = false;
  std::size_t warnings = 0;
  double estimate_ms = 0.0;
};

struct ComparisonReport {
  std::vector<CaseResult> cases;
  /// Over uncensored cases.
  double mean_abs_err = 0.0;
  double std_abs_err = 0.0;
  std::size_t scored = 0;
};

inline void aggregate(ComparisonReport& r) {
  std::vector<double> errs;
  for (const auto& c : r.cases) {
    if (!c.censored) errs.push_back(std::abs(c.err));
  }
  r.scored = errs.size();
  if (errs.empty()) return;
  const double n = static_cast<double>(errs.size());
  r.mean_abs_err = std::accumulate(errs.begin(), errs.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : errs) ss += (e - r.mean_abs_err) * (e - r.mean_abs_err);
  r.std_abs_err = errs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

/// Mean |Err| over the uncensored cases of one variant.
inline double mean_abs_err(const ComparisonReport& r, const std::string& variant) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : r.cases) {
    if (c.censored || c.variant != variant) continue;
    s += std::abs(c.err);
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

struct CompareConfig {
  sim::SimConfig sim = [] {
    sim::SimConfig c;
    c.max_sim_time = 3000.0;
    return c;
  }();
  est::EstimatorConfig estimator;
  unsigned threads = 1;
};

/// Simulates and estimates every case. Cases run in parallel, each with its
/// own simulation state, so the report does not depend on the thread count.
template <est::Surrogate S>
ComparisonReport compare_environments(const std::vector<ComparisonCase>& cases, const S& model,
                                      const CompareConfig& cfg = {}) {
  ComparisonReport rep;
  rep.cases.resize(cases.size());
  parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
    const auto& c = cases[i];
    CaseResult r;
    r.name = c.name;
    r.variant = c.variant;
    r.rooms = c.graph.rooms.size();
    for (const auto& n : c.graph.rooms) r.agents += n.spec.initial_population;
    const auto est = est::estimate_environment(c.graph, model, cfg.estimator);
    const auto run = layout::run_environment(c.graph, cfg.sim);
    r.tt_e = est.tt_e;
    r.warnings = est.warnings.size();
    r.estimate_ms = est.wall_clock_ms;
    r.st = run.tt;
    r.censored = run.censored;
    r.err = r.st > 0.0 ? (r.tt_e - r.st) / r.st : 0.0;
    rep.cases[i] = std::move(r);
  });
  aggregate(rep);
  return rep;
}

/// n copies of `room` in a chain r01 -> r02 -> ...; the whole population
/// starts in the first room.
inline graph::EnvironmentGraph replicate_chain(const RoomSpec& room, int n_rooms) {
  if (n_rooms < 3 || n_rooms % 2 == 0) throw std::invalid_argument("replicate_chain: room count must be odd and >= 3");
  graph::EnvironmentGraph g;
  for (int k = 0; k < n_rooms; ++k) {
    graph::RoomNode node;
    char id[16];
    std::snprintf(id, sizeof id, "r%02d", k + 1);
    node.id = id;
    node.spec = RoomSpec{room.width, room.length, room.exit_size, 0.0, 0.0, k == 0 ? room.initial_population : 0};
    node.pos = {150.0 * k, 0.0};
    g.rooms.push_back(std::move(node));
  }
  for (int k = 0; k + 1 < n_rooms; ++k) g.edges.push_back({g.rooms[k].id, g.rooms[k + 1].id, 1.0});
  return g;
}

struct ChainReport {
  ComparisonReport comparison;
  std::vector<int> sizes;
  /// Spearman correlation of |Err| against the room count.
  double spearman_abs_err = 0.0;
};

template <est::Surrogate S>
ChainReport chain_experiment(const RoomSpec& room, int max_rooms, const S& model, const CompareConfig& cfg = {}) {
  ChainReport rep;
  std::vector<ComparisonCase> cases;
  for (int n = 3; n <= max_rooms; n += 2) {
    rep.sizes.push_back(n);
    cases.push_back({"chain_" + std::to_string(n), "front", replicate_chain(room, n)});
  }
  rep.comparison = compare_environments(cases, model, cfg);
  std::vector<double> n, e;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    n.push_back(rep.sizes[i]);
    e.push_back(std::abs(rep.comparison.cases[i].err));
  }
  rep.spearman_abs_err = cases.size() >= 2 ? spearman(n, e) : 0.0;
  return rep;
}

inline nlohmann::json to_json(const CaseResult& c) {
  return {{"name", c.name},         {"variant", c.variant}, {"rooms", c.rooms}, {"agents", c.agents},
          {"simulated_tt", c.st},   {"estimated_tt", c.tt_e}, {"err", c.err},   {"censored", c.censored},
          {"warnings", c.warnings}};
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) cases.push_back(to_json(c));
  return {{"cases", cases},
          {"mean_abs_err", r.mean_abs_err},
          {"std_abs_err", r.std_abs_err},
          {"mean_abs_err_front", mean_abs_err(r, "front")},
          {"mean_abs_err_distributed", mean_abs_err(r, "distributed")},
          {"scored", r.scored}};
}

inline nlohmann::json to_json(const ChainReport& r) {
  auto j = to_json(r.comparison);
  j["sizes"] = r.sizes;
  j["spearman_abs_err"] = r.spearman_abs_err;
  return j;
}

inline std::string text_table(const ComparisonReport& r) {
  std::string out = "case                 variant      rooms agents  simulated  estimated      err\n";
  char line[160];
  for (const auto& c : r.cases) {
    std::snprintf(line, sizeof line, "%-20s %-12s %5zu %6d %10.2f %10.2f %7.1f%%%s\n", c.name.c_str(), c.variant.c_str(),
                  c.rooms, c.agents, c.st, c.tt_e, 100.0 * c.err, c.censored ? "  censored" : "");
    out += line;
  }
  std::snprintf(line, sizeof line, "mean |err| %.1f%% (std %.1f%%) over %zu cases\n", 100.0 * r.mean_abs_err,
                100.0 * r.std_abs_err, r.scored);
  return out + line;
}

}  // namespace crowdest::harness

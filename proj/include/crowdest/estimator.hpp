#pragma once

// Environment estimation: rooms are evaluated in dependence order, each room
// gets its inflow window from the rooms that feed it, and a per-room
// surrogate supplies the room's total time.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/dataset.hpp"
#include "crowdest/envgraph.hpp"
#include "crowdest/mlp.hpp"
#include "crowdest/room.hpp"
#include "json.hpp"

namespace crowdest::est {

using Features = std::array<double, 6>;

/// Anything that maps the six room features to a time in seconds.
template <typename S>
concept Surrogate = requires(const S& s, const Features& x) {
  { s(x) } -> std::convertible_to<double>;
};

/// Optional second surrogate for the average exit time.
using AvgModel = std::function<double(const Features&)>;

struct MlpSurrogate {
  const mlp::MlpModel* model;
  double operator()(const Features& x) const { return mlp::forward(*model, x); }
};

struct ConstantSurrogate {
  double value = 0.0;
  double operator()(const Features&) const { return value; }
};

enum class FetVariant { simple, diamond };

struct EstimatorConfig {
  double max_speed = sim::kDefaultMaxSpeed;
  FetVariant fet_variant = FetVariant::simple;
  /// Clamp surrogate inputs to the training intervals (with a warning).
  bool clamp_inputs = true;
  RoomBounds bounds = kTrainingBounds;
  /// Window used when agents arrive but the computed window is empty.
  double min_window = 0.1;
};

/// Time for the first agent to leave a room: half the length at full speed
/// when the room holds anyone, zero otherwise.
inline double fet(double length, double pop, double max_speed) {
  if (!(pop > 0.0)) return 0.0;
  return (length / 2.0) / max_speed;
}

/// Variant that walks the full length when the room starts empty, and
/// otherwise subtracts the radius of the initial diamond of `ip` agents on
/// the 0.6 m lattice.
inline double fet_diamond(double length, double ip, double max_speed) {
  if (!(ip > 0.0)) return length / max_speed;
  const double reduction = std::max(0.0, sim::kSpiralSpacing * std::sqrt(ip) / 2.0);
  return std::max(0.0, length / 2.0 - reduction) / max_speed;
}

/// The simple rule looks at the room's final population, the diamond rule
/// at its initial population.
inline double first_exit_time(const EstimatorConfig& cfg, double length, double ip, double pop) {
  return cfg.fet_variant == FetVariant::simple ? fet(length, pop, cfg.max_speed)
                                               : fet_diamond(length, ip, cfg.max_speed);
}

struct RoomEstimate {
  std::string id;
  double fet = 0.0;
  double gfet = 0.0;
  double git = 0.0;
  double ift = 0.0;
  double F = 0.0;
  double f = 0.0;
  double pop = 0.0;
  double tt = 0.0;
  std::optional<double> avg_exit_time;
  bool source = true;
  bool exit = true;
  bool degenerate_window = false;
  /// Seconds of inflow beyond the surrogate's training window, added to tt.
  double window_extension = 0.0;
  /// Features actually sent to the surrogate (after clamping).
  Features query{};
  std::vector<std::string> clamped;
};

struct EnvironmentEstimate {
  double tt_e = 0.0;
  std::optional<double> avg_exit_time_e;
  std::vector<RoomEstimate> rooms;  // dependence order
  std::vector<std::string> warnings;
  double wall_clock_ms = 0.0;

  const RoomEstimate& room(const std::string& id) const {
    for (const auto& r : rooms) {
      if (r.id == id) return r;
    }
    throw std::out_of_range("no estimate for room '" + id + "'");
  }
};

class InvalidGraph : public std::runtime_error {
 public:
  explicit InvalidGraph(std::vector<graph::Violation> v)
      : std::runtime_error(summary(v)), violations(std::move(v)) {}
  std::vector<graph::Violation> violations;

 private:
  static std::string summary(const std::vector<graph::Violation>& v) {
    std::string s = "invalid graph:";
    for (const auto& x : v) s += " [" + x.kind + "] " + x.message + ";";
    return s;
  }
};

/// Min-max ranges of the six features, in feature order, for model input
/// normalization.
inline std::vector<mlp::InputRange> feature_ranges(const RoomBounds& b) {
  return {{b.width_min, b.width_max}, {b.length_min, b.length_max}, {b.exit_min, b.exit_max},
          {b.flow_min, b.flow_max},   {b.duration_min, b.duration_max},
          {static_cast<double>(b.pop_min), static_cast<double>(b.pop_max)}};
}

/// Training domain of a model: its stored normalization ranges, or
/// `fallback` for models trained on raw inputs.
inline RoomBounds model_bounds(const mlp::MlpModel& m, const RoomBounds& fallback = kTrainingBounds) {
  if (!m.norm || m.norm->size() != 6) return fallback;
  const auto& n = *m.norm;
  RoomBounds b;
  b.width_min = n[0].min, b.width_max = n[0].max;
  b.length_min = n[1].min, b.length_max = n[1].max;
  b.exit_min = n[2].min, b.exit_max = n[2].max;
  b.flow_min = n[3].min, b.flow_max = n[3].max;
  b.duration_min = n[4].min, b.duration_max = n[4].max;
  b.pop_min = static_cast<int>(std::lround(n[5].min)), b.pop_max = static_cast<int>(std::lround(n[5].max));
  return b;
}

/// Surrogate query for one room. Zero flow is sent as the in-range pair
/// (f_min, F_min), whose f*F is below one agent and therefore spawns nobody,
/// exactly like a room without inflow. An out-of-range rate is clamped with
/// the duration adjusted to keep the agent count f*F. A window longer than
/// the training range is cut at F_max at the same rate; the cut seconds are
/// returned in `extension` so the caller can add them to the room's time.
inline Features surrogate_query(const RoomSpec& s, double f, double F, const EstimatorConfig& cfg,
                                std::vector<std::string>& clamped, double* extension = nullptr) {
  Features x{s.width, s.length, s.exit_size, f, F, static_cast<double>(s.initial_population)};
  if (extension) *extension = 0.0;
  if (!cfg.clamp_inputs) return x;
  const auto& b = cfg.bounds;
  const auto clamp = [&](double& v, double lo, double hi, const char* name) {
    if (v < lo || v > hi) {
      clamped.emplace_back(name);
      v = std::clamp(v, lo, hi);
    }
  };
  clamp(x[0], b.width_min, b.width_max, "width");
  clamp(x[1], b.length_min, b.length_max, "length");
  clamp(x[2], b.exit_min, b.exit_max, "exit_size");
  clamp(x[5], static_cast<double>(b.pop_min), static_cast<double>(b.pop_max), "initial_population");
  if (!(f > 0.0)) {
    x[3] = b.flow_min;
    x[4] = b.duration_min;
    return x;
  }
  const double agents = f * F;
  x[3] = std::clamp(f, b.flow_min, b.flow_max);
  x[4] = agents / x[3];
  if (x[4] > b.duration_max) {
    if (extension) *extension = x[4] - b.duration_max;
    x[4] = b.duration_max;
  } else if (x[4] < b.duration_min) {
    x[4] = b.duration_min;
    x[3] = std::clamp(agents / x[4], b.flow_min, b.flow_max);
  }
  if (std::abs(x[3] - f) > 1e-9 * std::max(1.0, f)) clamped.emplace_back("input_flow");
  if (std::abs(x[4] - F) > 1e-9 * std::max(1.0, F)) clamped.emplace_back("flow_duration");
  return x;
}

/// Room without incoming edges.
template <Surrogate S>
RoomEstimate estimate_source_room(const graph::RoomNode& node, const S& model, const EstimatorConfig& cfg = {},
                                  const AvgModel* avg_model = nullptr) {
  RoomEstimate r;
  r.id = node.id;
  r.pop = node.spec.initial_population;
  r.fet = first_exit_time(cfg, node.spec.length, node.spec.initial_population, r.pop);
  r.gfet = r.fet;
  r.query = surrogate_query(node.spec, 0.0, 0.0, cfg, r.clamped);
  r.tt = static_cast<double>(model(r.query));
  if (avg_model) r.avg_exit_time = (*avg_model)(r.query);
  return r;
}

struct Upstream {
  const RoomEstimate* estimate;
  double fraction;
};

/// Room fed by already-estimated rooms.
template <Surrogate S>
RoomEstimate estimate_dependent_room(const graph::RoomNode& node, const std::vector<Upstream>& deps, const S& model,
                                     const EstimatorConfig& cfg = {},
                                     const AvgModel* avg_model = nullptr) {
  if (deps.empty()) return estimate_source_room(node, model, cfg, avg_model);
  RoomEstimate r;
  r.id = node.id;
  r.source = false;
  r.git = std::numeric_limits<double>::infinity();
  r.ift = -std::numeric_limits<double>::infinity();
  double incoming = 0.0;
  for (const auto& d : deps) {
    r.git = std::min(r.git, d.estimate->gfet);
    r.ift = std::max(r.ift, d.estimate->gfet - d.estimate->fet + d.estimate->tt);
    incoming += d.estimate->pop * d.fraction;
  }
  r.F = r.ift - r.git;
  if (incoming > 0.0 && r.F <= 1e-9) {
    r.degenerate_window = true;
    r.F = cfg.min_window;
    r.ift = r.git + r.F;
  } else if (r.F < 0.0) {
    r.F = 0.0;
    r.ift = r.git;
  }
  r.f = incoming > 0.0 ? incoming / r.F : 0.0;
  r.pop = node.spec.initial_population + r.f * r.F;
  r.query = surrogate_query(node.spec, r.f, r.F, cfg, r.clamped, &r.window_extension);
  r.tt = static_cast<double>(model(r.query)) + r.window_extension;
  if (avg_model) r.avg_exit_time = (*avg_model)(r.query) + r.window_extension;
  r.fet = first_exit_time(cfg, node.spec.length, node.spec.initial_population, r.pop);
  r.gfet = r.fet + r.git;
  return r;
}

/// Whole-environment estimate: the largest git + tt over exit rooms, and,
/// with an average-exit-time model, the mean over exit rooms of
/// avg + (git + ift)/2.
template <Surrogate S>
EnvironmentEstimate estimate_environment(const graph::EnvironmentGraph& g, const S& model,
                                         const EstimatorConfig& cfg = {},
                                         const AvgModel* avg_model = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  if (auto v = graph::validate(g); !v.empty()) throw InvalidGraph(std::move(v));

  EnvironmentEstimate out;
  // Successors keep pointers into `rooms`; the reserve keeps them stable.
  out.rooms.reserve(g.rooms.size());
  std::map<std::string, std::size_t> slot;
  for (const auto& id : graph::topo_order(g)) {
    const graph::RoomNode& node = *g.find(id);
    std::vector<Upstream> deps;
    for (const auto* e : g.incoming(id)) deps.push_back({&out.rooms[slot.at(e->from)], e->fraction});
    RoomEstimate r = deps.empty() ? estimate_source_room(node, model, cfg, avg_model)
                                  : estimate_dependent_room(node, deps, model, cfg, avg_model);
    r.exit = g.is_exit(id);
    if (!r.clamped.empty()) {
      std::string list;
      for (const auto& c : r.clamped) list += (list.empty() ? "" : ", ") + c;
      out.warnings.push_back("room '" + id + "': surrogate inputs outside the training range were clamped (" + list + ")");
    }
    if (r.degenerate_window) {
      out.warnings.push_back("room '" + id + "': empty inflow window, used " + std::to_string(cfg.min_window) + " s");
    }
    slot[id] = out.rooms.size();
    out.rooms.push_back(std::move(r));
  }

  double tt = -std::numeric_limits<double>::infinity();
  double avg_sum = 0.0;
  std::size_t exits = 0;
  for (const auto& r : out.rooms) {
    if (!r.exit) continue;
    tt = std::max(tt, r.git + r.tt);
    if (r.avg_exit_time) avg_sum += *r.avg_exit_time + (r.git + r.ift) / 2.0;
    ++exits;
  }
  out.tt_e = tt;
  if (avg_model) out.avg_exit_time_e = avg_sum / static_cast<double>(exits);
  out.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline nlohmann::json to_json(const RoomEstimate& r) {
  nlohmann::json j{{"id", r.id},   {"fet", r.fet}, {"gfet", r.gfet}, {"git", r.git},   {"ift", r.ift},
                   {"F", r.F},     {"f", r.f},     {"pop", r.pop},   {"tt", r.tt},     {"source", r.source},
                   {"exit", r.exit}, {"degenerate_window", r.degenerate_window},
                   {"window_extension", r.window_extension}, {"query", r.query},
                   {"clamped", r.clamped}};
  j["avg_exit_time"] = r.avg_exit_time ? nlohmann::json(*r.avg_exit_time) : nlohmann::json(nullptr);
  return j;
}

/// JSON form of an estimate; wall_clock_ms is left out when
/// `include_timing` is false so outputs can be compared byte for byte.
inline nlohmann::json to_json(const EnvironmentEstimate& e, bool include_timing = true) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& r : e.rooms) rooms.push_back(to_json(r));
  nlohmann::json j{{"tt_e", e.tt_e}, {"rooms", rooms}, {"warnings", e.warnings}};
  j["avg_exit_time_e"] = e.avg_exit_time_e ? nlohmann::json(*e.avg_exit_time_e) : nlohmann::json(nullptr);
  if (include_timing) j["wall_clock_ms"] = e.wall_clock_ms;
  return j;
}

}  // namespace crowdest::est

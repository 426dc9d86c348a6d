#pragma once

// Room-connectivity graph shared by the estimator, the service and the CLI:
// data model, JSON schema, validation and dependence ordering.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/geometry.hpp"
#include "crowdest/room.hpp"
#include "json.hpp"

namespace crowdest::graph {

inline constexpr int kGraphVersion = 1;
inline constexpr double kFractionTol = 1e-6;

struct RoomNode {
  std::string id;
  /// input_flow and flow_duration are unused here; the estimator derives them.
  RoomSpec spec;
  sim::Vec2 pos;
  friend bool operator==(const RoomNode&, const RoomNode&) = default;
};

struct FlowEdge {
  std::string from;
  std::string to;
  double fraction = 1.0;
  friend bool operator==(const FlowEdge&, const FlowEdge&) = default;
};

struct EnvironmentGraph {
  int version = kGraphVersion;
  std::vector<RoomNode> rooms;
  std::vector<FlowEdge> edges;

  const RoomNode* find(const std::string& id) const {
    for (const auto& r : rooms) {
      if (r.id == id) return &r;
    }
    return nullptr;
  }
  std::vector<const FlowEdge*> incoming(const std::string& id) const {
    std::vector<const FlowEdge*> out;
    for (const auto& e : edges) {
      if (e.to == id) out.push_back(&e);
    }
    return out;
  }
  std::vector<const FlowEdge*> outgoing(const std::string& id) const {
    std::vector<const FlowEdge*> out;
    for (const auto& e : edges) {
      if (e.from == id) out.push_back(&e);
    }
    return out;
  }
  /// Exit rooms: no outgoing edges.
  bool is_exit(const std::string& id) const { return outgoing(id).empty(); }

  friend bool operator==(const EnvironmentGraph&, const EnvironmentGraph&) = default;
};

struct Violation {
  std::string kind;
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Rooms that sit on a directed cycle (Kahn leftovers), sorted by id.
inline std::vector<std::string> cyclic_rooms(const EnvironmentGraph& g) {
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& r : g.rooms) indeg[r.id];
  for (const auto& e : g.edges) {
    if (!indeg.count(e.from) || !indeg.count(e.to)) continue;
    succ[e.from].push_back(e.to);
    ++indeg[e.to];
  }
  std::vector<std::string> ready;
  for (const auto& [id, d] : indeg) {
    if (d == 0) ready.push_back(id);
  }
  while (!ready.empty()) {
    const std::string id = ready.back();
    ready.pop_back();
    indeg.erase(id);
    for (const auto& s : succ[id]) {
      auto it = indeg.find(s);
      if (it != indeg.end() && --it->second == 0) ready.push_back(s);
    }
  }
  std::vector<std::string> left;
  for (const auto& [id, d] : indeg) left.push_back(id);
  return left;
}

}  // namespace detail

/// Every structural problem of the graph; empty when the graph is usable.
inline std::vector<Violation> validate(const EnvironmentGraph& g) {
  std::vector<Violation> v;
  if (g.version != kGraphVersion) {
    v.push_back({"version", "unsupported graph version " + std::to_string(g.version)});
  }
  if (g.rooms.empty()) v.push_back({"empty", "graph has no rooms"});

  std::set<std::string> ids;
  for (const auto& r : g.rooms) {
    if (r.id.empty()) v.push_back({"room", "room with empty id"});
    if (!ids.insert(r.id).second) v.push_back({"duplicate_id", "duplicate room id '" + r.id + "'"});
    const auto& s = r.spec;
    if (!(s.width > 0.0) || !(s.length > 0.0)) v.push_back({"room", "room '" + r.id + "': width and length must be positive"});
    if (!(s.exit_size > 0.0)) v.push_back({"room", "room '" + r.id + "': exit_size must be positive"});
    if (s.exit_size > s.width + 1e-12) {
      v.push_back({"room", "room '" + r.id + "': exit_size " + detail::fmt(s.exit_size) + " exceeds width " + detail::fmt(s.width)});
    }
    if (s.initial_population < 0) v.push_back({"room", "room '" + r.id + "': initial_population must be >= 0"});
  }

  std::map<std::string, double> out_sum;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : g.edges) {
    const std::string label = "edge " + e.from + "->" + e.to;
    if (!ids.count(e.from)) v.push_back({"dangling_edge", label + ": unknown room '" + e.from + "'"});
    if (!ids.count(e.to)) v.push_back({"dangling_edge", label + ": unknown room '" + e.to + "'"});
    if (e.from == e.to) v.push_back({"self_loop", label + ": room connects to itself"});
    if (!pairs.insert({e.from, e.to}).second) v.push_back({"duplicate_edge", label + " appears more than once"});
    if (!(e.fraction > 0.0) || e.fraction > 1.0 + kFractionTol) {
      v.push_back({"fraction_range", label + ": fraction " + detail::fmt(e.fraction) + " outside (0, 1]"});
    }
    out_sum[e.from] += e.fraction;
  }
  for (const auto& [id, sum] : out_sum) {
    if (std::abs(sum - 1.0) > kFractionTol) {
      v.push_back({"fraction_sum", "room '" + id + "': outgoing fractions sum to " + detail::fmt(sum) + ", expected 1"});
    }
  }

  const auto cyc = detail::cyclic_rooms(g);
  if (!cyc.empty()) {
    std::string list;
    for (const auto& id : cyc) list += (list.empty() ? "" : ", ") + id;
    v.push_back({"cycle", "rooms on a cycle: " + list});
  }
  if (!g.rooms.empty() && std::none_of(g.rooms.begin(), g.rooms.end(), [&](const RoomNode& r) { return out_sum.count(r.id) == 0; })) {
    v.push_back({"no_exit_room", "every room has outgoing edges; at least one exit room is required"});
  }
  return v;
}

/// Rooms ordered so each comes after all rooms that feed it; among rooms
/// that are ready together, the smallest id goes first.
inline std::vector<std::string> topo_order(const EnvironmentGraph& g) {
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& r : g.rooms) {
    if (!indeg.emplace(r.id, 0).second) throw std::invalid_argument("topo_order: duplicate room id '" + r.id + "'");
  }
  for (const auto& e : g.edges) {
    if (!indeg.count(e.from) || !indeg.count(e.to)) throw std::invalid_argument("topo_order: dangling edge");
    succ[e.from].push_back(e.to);
    ++indeg[e.to];
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [id, d] : indeg) {
    if (d == 0) ready.push(id);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    std::string id = ready.top();
    ready.pop();
    for (const auto& s : succ[id]) {
      if (--indeg[s] == 0) ready.push(s);
    }
    order.push_back(std::move(id));
  }
  if (order.size() != g.rooms.size()) throw std::invalid_argument("topo_order: graph has a cycle");
  return order;
}

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
T required(const nlohmann::json& obj, const char* field, const std::string& where) {
  if (!obj.is_object() || !obj.contains(field)) throw ParseError(where + ": missing field '" + field + "'");
  try {
    return obj.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field '" + field + "' has the wrong type");
  }
}

}  // namespace detail

inline EnvironmentGraph from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("graph document must be a JSON object");
  EnvironmentGraph g;
  g.version = detail::required<int>(j, "version", "graph");
  if (g.version != kGraphVersion) {
    throw ParseError("graph: unsupported version " + std::to_string(g.version) + " (expected " + std::to_string(kGraphVersion) + ")");
  }
  const auto rooms = detail::required<nlohmann::json>(j, "rooms", "graph");
  if (!rooms.is_array()) throw ParseError("graph: 'rooms' must be an array");
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const auto& r = rooms[i];
    std::string where = "rooms[" + std::to_string(i) + "]";
    RoomNode node;
    node.id = detail::required<std::string>(r, "id", where);
    where = "room '" + node.id + "'";
    node.spec.width = detail::required<double>(r, "width", where);
    node.spec.length = detail::required<double>(r, "length", where);
    node.spec.exit_size = detail::required<double>(r, "exit_size", where);
    node.spec.initial_population = detail::required<int>(r, "initial_population", where);
    if (r.contains("pos")) {
      node.pos.x = detail::required<double>(r["pos"], "x", where + " pos");
      node.pos.y = detail::required<double>(r["pos"], "y", where + " pos");
    }
    g.rooms.push_back(std::move(node));
  }
  const auto edges = j.contains("edges") ? j["edges"] : nlohmann::json::array();
  if (!edges.is_array()) throw ParseError("graph: 'edges' must be an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string where = "edges[" + std::to_string(i) + "]";
    FlowEdge e;
    e.from = detail::required<std::string>(edges[i], "from", where);
    e.to = detail::required<std::string>(edges[i], "to", where);
    e.fraction = detail::required<double>(edges[i], "fraction", where);
    g.edges.push_back(std::move(e));
  }
  return g;
}

inline nlohmann::json to_json(const EnvironmentGraph& g) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& r : g.rooms) {
    rooms.push_back({{"id", r.id},
                     {"width", r.spec.width},
                     {"length", r.spec.length},
                     {"exit_size", r.spec.exit_size},
                     {"initial_population", r.spec.initial_population},
                     {"pos", {{"x", r.pos.x}, {"y", r.pos.y}}}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"fraction", e.fraction}});
  return {{"version", g.version}, {"rooms", rooms}, {"edges", edges}};
}

/// Parses a graph document; syntax errors report line and column.
inline EnvironmentGraph parse(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError("malformed graph document at line " + std::to_string(line) + ", column " + std::to_string(col) +
                     " (byte " + std::to_string(e.byte) + ")");
  }
  return from_json(j);
}

inline std::string serialize(const EnvironmentGraph& g) { return to_json(g).dump(2) + "\n"; }

inline EnvironmentGraph load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  }
}

inline void save(const EnvironmentGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize(g);
}

}  // namespace crowdest::graph

#pragma once

// HTTP API for the environment editor and scripts: synchronous estimates,
// asynchronous environment simulations, and flat-file graph storage.
//
//   POST /estimate          graph -> estimate          (400 invalid, 422 no model)
//   POST /simulate          graph | {graph, max_sim_time, seed} -> job (202)
//   GET  /jobs/{id}         job status and result      (404 unknown)
//   GET  /graphs/{name}     stored document, verbatim  (404 unknown)
//   PUT  /graphs/{name}     validate and store          (400 invalid)

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "crowdest/envgraph.hpp"
#include "crowdest/estimator.hpp"
#include "crowdest/layout.hpp"
#include "crowdest/mlp.hpp"
#include "httplib.h"
#include "json.hpp"

namespace crowdest::service {

enum class JobStatus { queued, running, done, failed };

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

struct JobHandle {
  std::string id;
  JobStatus status = JobStatus::queued;
  std::optional<nlohmann::json> result;
  std::string error;
};

inline nlohmann::json to_json(const JobHandle& j) {
  nlohmann::json out{{"id", j.id}, {"status", to_string(j.status)}};
  if (j.result) out["result"] = *j.result;
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

/// Bounded worker pool with a job table. A job's state only moves forward,
/// and done/failed are final.
class JobQueue {
 public:
  using Task = std::function<nlohmann::json()>;

  explicit JobQueue(unsigned workers) {
    for (unsigned i = 0; i < std::max(1u, workers); ++i) pool_.emplace_back([this] { work(); });
  }

  ~JobQueue() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : pool_) t.join();
  }

  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(Task task) {
    std::lock_guard lock(mu_);
    char id[32];
    std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(++issued_));
    jobs_[id] = JobHandle{id, JobStatus::queued, std::nullopt, {}};
    queue_.emplace_back(id, std::move(task));
    cv_.notify_one();
    return id;
  }

  std::optional<JobHandle> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void work() {
    while (true) {
      std::pair<std::string, Task> item;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_ && queue_.empty()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
        jobs_[item.first].status = JobStatus::running;
      }
      JobHandle done;
      try {
        done.result = item.second();
        done.status = JobStatus::done;
      } catch (const std::exception& e) {
        done.status = JobStatus::failed;
        done.error = e.what();
      }
      std::lock_guard lock(mu_);
      auto& job = jobs_[item.first];
      job.status = done.status;
      job.result = std::move(done.result);
      job.error = std::move(done.error);
    }
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::string, Task>> queue_;
  std::map<std::string, JobHandle> jobs_;
  unsigned long long issued_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> pool_;
};

/// Graph documents as `<name>.json` files in one directory. Writes to the
/// same name are serialized; a document is renamed into place once complete.
class GraphStore {
 public:
  explicit GraphStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  static bool valid_name(const std::string& name) {
    static const std::regex re("[A-Za-z0-9_-]+");
    return std::regex_match(name, re);
  }

  std::optional<std::string> get(const std::string& name) const {
    std::ifstream in(path(name), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void put(const std::string& name, const std::string& bytes) {
    std::lock_guard lock(lock_for(name));
    auto tmp = path(name);
    tmp += ".partial";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << bytes;
      if (!out.flush()) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path(name));
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path(const std::string& name) const { return dir_ / (name + ".json"); }

  std::mutex& lock_for(const std::string& name) {
    std::lock_guard lock(table_mu_);
    auto& m = locks_[name];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  std::filesystem::path dir_;
  std::mutex table_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

struct ServiceConfig {
  std::filesystem::path graphs_dir = "graphs";
  unsigned workers = 2;
  est::FetVariant fet_variant = est::FetVariant::simple;
  sim::SimConfig sim = [] {
    sim::SimConfig c;
    c.max_sim_time = 3000.0;
    return c;
  }();
};

struct Reply {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json violations_json(const std::vector<graph::Violation>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& x : v) out.push_back({{"kind", x.kind}, {"message", x.message}});
  return out;
}

/// Request handling without the transport, so it can be exercised directly.
class Service {
 public:
  Service(ServiceConfig cfg, std::optional<mlp::MlpModel> model)
      : cfg_(std::move(cfg)), model_(std::move(model)), jobs_(cfg_.workers), store_(cfg_.graphs_dir) {
    estimator_.fet_variant = cfg_.fet_variant;
    if (model_) estimator_.bounds = est::model_bounds(*model_);
  }

  bool has_model() const { return model_.has_value(); }
  const est::EstimatorConfig& estimator_config() const { return estimator_; }

  Reply estimate(const std::string& body) const {
    graph::EnvironmentGraph g;
    if (auto bad = parse_graph(body, g)) return *bad;
    if (!model_) return {422, {{"error", "no model loaded"}}};
    const auto e = est::estimate_environment(g, est::MlpSurrogate{&*model_}, estimator_);
    return {200, est::to_json(e)};
  }

  Reply simulate(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return {400, {{"error", std::string("malformed JSON: ") + e.what()}}};
    }
    const bool wrapped = j.is_object() && j.contains("graph");
    graph::EnvironmentGraph g;
    if (auto bad = parse_graph_json(wrapped ? j["graph"] : j, g)) return *bad;
    sim::SimConfig cfg = cfg_.sim;
    if (wrapped) {
      cfg.max_sim_time = j.value("max_sim_time", cfg.max_sim_time);
      cfg.rng_seed = j.value("seed", cfg.rng_seed);
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        return {400, {{"error", e.what()}}};
      }
    }
    const auto id = jobs_.submit([this, g, cfg] { return run_job(g, cfg); });
    return {202, {{"id", id}, {"status", "queued"}}};
  }

  Reply job(const std::string& id) const {
    const auto j = jobs_.get(id);
    if (!j) return {404, {{"error", "unknown job '" + id + "'"}}};
    return {200, to_json(*j)};
  }

  /// GET returns the stored bytes; the reply body is a string, not JSON.
  std::pair<int, std::string> get_graph(const std::string& name) const {
    if (!GraphStore::valid_name(name)) return {400, nlohmann::json{{"error", "invalid graph name"}}.dump()};
    auto doc = store_.get(name);
    if (!doc) return {404, nlohmann::json{{"error", "unknown graph '" + name + "'"}}.dump()};
    return {200, std::move(*doc)};
  }

  Reply put_graph(const std::string& name, const std::string& body) {
    if (!GraphStore::valid_name(name)) return {400, {{"error", "invalid graph name"}}};
    graph::EnvironmentGraph g;
    if (auto bad = parse_graph(body, g)) return *bad;
    store_.put(name, body);
    return {200, {{"name", name}, {"bytes", body.size()}}};
  }

  void install(httplib::Server& srv) {
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    const auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    srv.Post("/estimate", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, estimate(req.body)); });
    srv.Post("/simulate", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, simulate(req.body)); });
    srv.Get(R"(/jobs/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, job(req.matches[1]));
    });
    srv.Get(R"(/graphs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto [status, body] = get_graph(req.matches[1]);
      res.status = status;
      res.set_content(body, "application/json");
    });
    srv.Put(R"(/graphs/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, put_graph(req.matches[1], req.body));
    });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json");
    });
  }

 private:
  static std::optional<Reply> parse_graph_json(const nlohmann::json& j, graph::EnvironmentGraph& g) {
    try {
      g = graph::from_json(j);
    } catch (const graph::ParseError& e) {
      return Reply{400, {{"error", e.what()}}};
    }
    if (auto v = graph::validate(g); !v.empty()) return Reply{400, {{"error", "invalid graph"}, {"violations", violations_json(v)}}};
    return std::nullopt;
  }

  static std::optional<Reply> parse_graph(const std::string& body, graph::EnvironmentGraph& g) {
    try {
      g = graph::parse(body);
    } catch (const graph::ParseError& e) {
      return Reply{400, {{"error", e.what()}}};
    }
    if (auto v = graph::validate(g); !v.empty()) return Reply{400, {{"error", "invalid graph"}, {"violations", violations_json(v)}}};
    return std::nullopt;
  }

  nlohmann::json run_job(const graph::EnvironmentGraph& g, const sim::SimConfig& cfg) const {
    const auto run = layout::run_environment(g, cfg);
    nlohmann::json out{{"simulation", layout::to_json(run)}};
    if (model_) {
      const auto e = est::estimate_environment(g, est::MlpSurrogate{&*model_}, estimator_);
      out["estimate"] = est::to_json(e);
      out["err"] = run.tt > 0.0 && !run.censored ? nlohmann::json((e.tt_e - run.tt) / run.tt) : nlohmann::json(nullptr);
    }
    return out;
  }

  ServiceConfig cfg_;
  std::optional<mlp::MlpModel> model_;
  est::EstimatorConfig estimator_;
  JobQueue jobs_;
  GraphStore store_;
};

}  // namespace crowdest::service

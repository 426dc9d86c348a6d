// crowdest: dataset generation, surrogate training, environment estimation,
// simulation, scenario checks, experiments and the HTTP service.
//
// Exit codes: 0 success, 1 domain error (invalid input, failed check),
// 2 usage error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "crowdest/dataset.hpp"
#include "crowdest/envgraph.hpp"
#include "crowdest/estimator.hpp"
#include "crowdest/harness.hpp"
#include "crowdest/layout.hpp"
#include "crowdest/mlp.hpp"
#include "crowdest/room.hpp"
#include "crowdest/service.hpp"
#include "crowdest/training.hpp"
#include "crowdest/validation.hpp"

using namespace crowdest;
using nlohmann::json;

namespace {

constexpr const char* kEnvelope = "crowdest.cli/1";
constexpr const char* kModelEnv = "CROWDEST_MODEL";
constexpr const char* kGraphsEnv = "CROWDEST_GRAPHS_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Domain failure that already has a result to show (failed check, invalid graph).
struct DomainFailure : std::runtime_error {
  DomainFailure(std::string what, json detail) : std::runtime_error(std::move(what)), detail(std::move(detail)) {}
  json detail;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  bool json = false;
  unsigned threads = 0;
};

Globals g_opts;
std::string g_command;

void emit(const json& result, const std::string& text) {
  if (g_opts.json) {
    std::cout << json{{"schema", kEnvelope}, {"command", g_command}, {"ok", true}, {"result", result}}.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

unsigned threads() { return resolve_threads(g_opts.threads); }

est::FetVariant parse_variant(const std::string& s) {
  if (s == "simple") return est::FetVariant::simple;
  if (s == "diamond") return est::FetVariant::diamond;
  throw UsageError("unknown fet variant '" + s + "' (simple|diamond)");
}

std::string model_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kModelEnv)) return env;
  throw UsageError(std::string("no model given (use --model or set ") + kModelEnv + ")");
}

est::EstimatorConfig estimator_for(const mlp::MlpModel& m, const std::string& variant) {
  est::EstimatorConfig c;
  c.bounds = est::model_bounds(m);
  c.fet_variant = parse_variant(variant);
  return c;
}

RoomSpec parse_room(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) v.push_back(std::stod(item));
  if (v.size() != 6) throw UsageError("room must be width,length,exit,flow,duration,population");
  return RoomSpec{v[0], v[1], v[2], v[3], v[4], static_cast<int>(v[5])};
}

graph::EnvironmentGraph load_valid_graph(const std::string& path) {
  const auto g = graph::load(path);
  if (auto v = graph::validate(g); !v.empty()) {
    std::string text;
    for (const auto& x : v) text += "  " + x.kind + ": " + x.message + "\n";
    throw DomainFailure("invalid graph " + path + "\n" + text, json{{"violations", service::violations_json(v)}});
  }
  return g;
}

json metrics_json(const sim::RoomMetrics& m) {
  return {{"tt", m.tt},         {"avg_exit_time", m.avg_exit_time}, {"avg_speed", m.avg_speed},
          {"avg_density", m.avg_density}, {"censored", m.censored}};
}

std::string estimate_table(const est::EnvironmentEstimate& e) {
  std::string out = fmt("tt_e %.3f s\n", e.tt_e);
  out += "room                      git       ift         F        f      pop       tt   git+tt\n";
  for (const auto& r : e.rooms) {
    out += fmt("%-20s %8.2f %9.2f %9.2f %8.3f %8.1f %8.2f %8.2f%s\n", r.id.c_str(), r.git, r.ift, r.F, r.f, r.pop, r.tt,
               r.git + r.tt, r.exit ? "  exit" : "");
  }
  for (const auto& w : e.warnings) out += "warning: " + w + "\n";
  return out;
}

// ---- demo ----

struct DemoOptions {
  std::uint64_t count = 3000;
  std::string suite = std::string(CROWDEST_DATA_DIR) + "/suites/comparison.json";
  std::string out;
};

/// Corpus, training and suite in one deterministic pass. No timings go into
/// the report, so two runs with the same seed print the same bytes.
std::pair<json, std::string> run_demo(std::uint64_t seed, const DemoOptions& o) {
  GenerateOptions gen;
  gen.count = o.count;
  gen.seed = seed;
  gen.threads = threads();
  gen.bounds = kDeskBounds;
  std::cerr << "demo: simulating " << o.count << " rooms\n";
  const auto rows = generate_records(gen);
  const std::size_t holdout = std::min<std::size_t>(500, o.count / 6);
  const auto split = training::split_rows(rows, holdout);

  std::cerr << "demo: training\n";
  const auto trained = training::train_surrogate(split.train, split.validation, training::desk_options());
  const auto held = training::samples(split.holdout, training::Target::tt);
  const auto score = mlp::score_below_threshold(trained.model, held);

  std::cerr << "demo: comparison suite\n";
  harness::CompareConfig cc;
  cc.estimator = estimator_for(trained.model, "diamond");
  cc.threads = threads();
  const auto rep = harness::compare_environments(harness::load_suite(o.suite), est::MlpSurrogate{&trained.model}, cc);

  std::size_t censored = 0;
  for (const auto& r : rows) censored += r.metrics.censored;
  json j{{"seed", seed},
         {"corpus", {{"rooms", rows.size()}, {"censored", censored}, {"holdout", split.holdout.size()}}},
         {"training", training::to_json(trained)},
         {"holdout_score", training::to_json(score)},
         {"suite", harness::to_json(rep)}};
  std::string text = fmt("seed %llu\ncorpus: %zu rooms (%zu censored), %zu held out\n",
                         static_cast<unsigned long long>(seed), rows.size(), censored, split.holdout.size());
  text += fmt("surrogate: %.1f%% of held-out rooms below 10%% error (%zu scored, mean rel err %.1f%%)\n",
              100.0 * score.fraction, score.scored, 100.0 * score.mean_abs_rel_error);
  text += "\n" + harness::text_table(rep);
  text += fmt("front-loaded mean |err| %.1f%%, distributed mean |err| %.1f%%\n",
              100.0 * harness::mean_abs_err(rep, "front"), 100.0 * harness::mean_abs_err(rep, "distributed"));
  return {j, text};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << bytes)) throw std::runtime_error("cannot write " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd evacuation simulation and fast environment estimation"};
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--seed", g_opts.seed, "Random seed");
  app.add_flag("--json", g_opts.json, "Print a versioned JSON envelope");
  app.add_option("--threads", g_opts.threads, "Worker threads (0 = all cores)");

  std::function<void()> action;

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Simulate random rooms into a CSV corpus");
  std::uint64_t gen_count = 0;
  std::string gen_out;
  bool gen_desk = false;
  double gen_cap = sim::SimConfig{}.max_sim_time;
  gen->add_option("--count", gen_count, "Rooms to simulate")->required();
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_flag("--desk-scale", gen_desk, "Cap flow duration at 20 s");
  gen->add_option("--max-sim-time", gen_cap, "Simulation cap per room (s)");
  gen->callback([&] {
    action = [&] {
      GenerateOptions o;
      o.count = gen_count;
      o.seed = g_opts.seed.value_or(0);
      o.threads = threads();
      o.bounds = gen_desk ? kDeskBounds : kTrainingBounds;
      o.cfg.max_sim_time = gen_cap;
      const auto s = generate(o, gen_out);
      emit({{"out", gen_out}, {"written", s.written}, {"censored", s.censored}, {"seed", o.seed}},
           fmt("wrote %llu rows (%llu censored) to %s\n", static_cast<unsigned long long>(s.written),
               static_cast<unsigned long long>(s.censored), gen_out.c_str()));
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train the surrogate on a corpus");
  std::string tr_data, tr_out, tr_target = "tt", tr_act;
  std::size_t tr_holdout = 0;
  bool tr_desk = false, tr_normalize = false, tr_bias = false;
  std::optional<std::size_t> tr_hidden, tr_epochs, tr_patience, tr_halvings;
  std::optional<double> tr_lr;
  train->add_option("--data", tr_data, "Corpus CSV")->required();
  train->add_option("--out", tr_out, "Model JSON")->required();
  train->add_option("--target", tr_target, "tt or avg_exit_time");
  train->add_option("--holdout", tr_holdout, "Trailing rows excluded from training");
  train->add_flag("--desk", tr_desk, "Start from the desk-scale setting (relu, bias, normalization)");
  train->add_option("--hidden", tr_hidden, "Hidden units");
  train->add_option("--activation", tr_act, "sigmoid, relu or tanh");
  train->add_flag("--bias", tr_bias, "Use bias terms");
  train->add_flag("--normalize", tr_normalize, "Min-max normalize inputs");
  train->add_option("--epochs", tr_epochs, "Maximum epochs");
  train->add_option("--lr", tr_lr, "Learning rate");
  train->add_option("--patience", tr_patience, "Epochs without improvement before halving");
  train->add_option("--halvings", tr_halvings, "Halvings before stopping");
  train->callback([&] {
    action = [&] {
      auto opt = tr_desk ? training::desk_options() : training::TrainOptions{};
      opt.target = training::parse_target(tr_target);
      if (tr_hidden) opt.hidden = *tr_hidden;
      if (!tr_act.empty()) opt.activation = mlp::parse_activation(tr_act);
      if (tr_bias) opt.use_bias = true;
      if (tr_normalize) opt.normalize = true;
      if (tr_epochs) opt.sgd.epochs = *tr_epochs;
      if (tr_lr) opt.sgd.learning_rate = *tr_lr;
      if (tr_patience) opt.sgd.patience = *tr_patience;
      if (tr_halvings) opt.sgd.max_halvings = *tr_halvings;
      if (g_opts.seed) opt.init_seed = *g_opts.seed;
      const auto rows = read_csv(std::filesystem::path(tr_data));
      const auto split = training::split_rows(rows, tr_holdout);
      const auto r = training::train_surrogate(split.train, split.validation, opt);
      mlp::save(r.model, tr_out);
      auto j = training::to_json(r);
      j["out"] = tr_out;
      emit(j, fmt("trained on %zu rows (%zu validation), %zu epochs; validation %.1f%% below 10%% error; saved %s\n",
                  r.train_rows, r.validation_rows, r.report.train_loss.size(), 100.0 * r.validation_score.fraction,
                  tr_out.c_str()));
    };
  });

  // score
  auto* score = app.add_subcommand("score", "Fraction of rooms predicted within 10%");
  std::string sc_model, sc_data, sc_target = "tt";
  std::size_t sc_last = 0;
  score->add_option("--model", sc_model, "Model JSON");
  score->add_option("--data", sc_data, "Corpus CSV")->required();
  score->add_option("--last", sc_last, "Score only the trailing N rows");
  score->add_option("--target", sc_target, "tt or avg_exit_time");
  score->callback([&] {
    action = [&] {
      const auto m = mlp::load(model_path(sc_model));
      auto rows = read_csv(std::filesystem::path(sc_data));
      if (sc_last > 0 && sc_last < rows.size()) rows.erase(rows.begin(), rows.end() - static_cast<long>(sc_last));
      const auto s = mlp::score_below_threshold(m, training::samples(rows, training::parse_target(sc_target)));
      emit(training::to_json(s), fmt("%.1f%% of %zu rooms below 10%% error (mean rel err %.1f%%)\n", 100.0 * s.fraction,
                                     s.scored, 100.0 * s.mean_abs_rel_error));
    };
  });

  // estimate
  auto* estimate = app.add_subcommand("estimate", "Estimate an environment's evacuation time");
  std::string es_graph, es_model, es_variant = "diamond";
  estimate->add_option("--graph", es_graph, "Graph JSON")->required();
  estimate->add_option("--model", es_model, "Model JSON (default from $CROWDEST_MODEL)");
  estimate->add_option("--fet-variant", es_variant, "simple or diamond");
  estimate->add_flag("--table", "Per-room table (default)");
  estimate->callback([&] {
    action = [&] {
      const auto g = load_valid_graph(es_graph);
      const auto m = mlp::load(model_path(es_model));
      const auto e = est::estimate_environment(g, est::MlpSurrogate{&m}, estimator_for(m, es_variant));
      emit(est::to_json(e), estimate_table(e));
    };
  });

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Simulate one room or a whole environment");
  std::string si_graph, si_room;
  double si_cap = 3000.0;
  auto* si_g = simulate->add_option("--graph", si_graph, "Graph JSON");
  auto* si_r = simulate->add_option("--room", si_room, "width,length,exit,flow,duration,population");
  si_g->excludes(si_r);
  simulate->add_option("--max-sim-time", si_cap, "Simulation cap (s)");
  simulate->callback([&] {
    action = [&] {
      sim::SimConfig cfg;
      cfg.max_sim_time = si_cap;
      cfg.rng_seed = g_opts.seed.value_or(0);
      if (!si_room.empty()) {
        const auto m = sim::run_room(parse_room(si_room), cfg);
        emit(metrics_json(m), fmt("tt %.3f s, avg exit %.3f s, avg speed %.3f m/s, avg density %.3f%s\n", m.tt,
                                  m.avg_exit_time, m.avg_speed, m.avg_density, m.censored ? " (censored)" : ""));
        return;
      }
      if (si_graph.empty()) throw UsageError("simulate needs --graph or --room");
      const auto run = layout::run_environment(load_valid_graph(si_graph), cfg);
      std::string text = fmt("tt %.3f s, avg exit %.3f s, %zu/%zu agents out%s\n", run.tt, run.avg_exit_time, run.exited,
                             run.agents, run.censored ? " (censored)" : "");
      for (const auto& r : run.rooms)
        text += fmt("  %-20s left %4zu  first %8.2f  last %8.2f\n", r.id.c_str(), r.left, r.first_leave, r.last_leave);
      emit(layout::to_json(run), text);
    };
  });

  // validate
  auto* validate = app.add_subcommand("validate", "Run the scenario checks");
  std::string va_only;
  validate->add_option("--only", va_only, "walk, corner, counterflow, exitalloc or showcase");
  validate->callback([&] {
    action = [&] {
      auto names = validation::check_names();
      if (!va_only.empty()) {
        if (std::find(names.begin(), names.end(), va_only) == names.end()) throw UsageError("unknown check '" + va_only + "'");
        names = {va_only};
      }
      json results = json::array();
      std::string text;
      bool all = true;
      for (const auto& n : names) {
        const auto r = validation::run_check(n, {}, threads());
        all = all && r.pass;
        results.push_back({{"name", r.name}, {"pass", r.pass}, {"summary", r.summary}, {"detail", r.detail}});
        text += fmt("%s %-12s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.summary.c_str());
      }
      if (!all) throw DomainFailure(text + "some checks failed", json{{"checks", results}});
      emit({{"checks", results}}, text);
    };
  });

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Estimation against simulation");
  experiment->require_subcommand(1);
  std::string ex_model, ex_variant = "diamond", ex_report;
  std::string ex_suite = std::string(CROWDEST_DATA_DIR) + "/suites/comparison.json";
  auto* compare = experiment->add_subcommand("compare", "Run a comparison suite");
  compare->add_option("--suite", ex_suite, "Suite JSON");
  auto* chain = experiment->add_subcommand("chain", "Chains of one replicated room");
  std::string ch_room = "28,6,5.6,0,0,99";
  int ch_max = 29;
  chain->add_option("--room", ch_room, "width,length,exit,flow,duration,population");
  chain->add_option("--max", ch_max, "Longest chain");
  for (auto* sub : {compare, chain}) {
    sub->add_option("--model", ex_model, "Model JSON (default from $CROWDEST_MODEL)");
    sub->add_option("--fet-variant", ex_variant, "simple or diamond");
    sub->add_option("--report", ex_report, "Also write the JSON report here");
  }
  compare->callback([&] {
    action = [&] {
      const auto m = mlp::load(model_path(ex_model));
      harness::CompareConfig cc;
      cc.estimator = estimator_for(m, ex_variant);
      cc.threads = threads();
      const auto rep = harness::compare_environments(harness::load_suite(ex_suite), est::MlpSurrogate{&m}, cc);
      const auto j = harness::to_json(rep);
      if (!ex_report.empty()) write_file(ex_report, j.dump(2) + "\n");
      emit(j, harness::text_table(rep));
    };
  });
  chain->callback([&] {
    action = [&] {
      const auto m = mlp::load(model_path(ex_model));
      harness::CompareConfig cc;
      cc.estimator = estimator_for(m, ex_variant);
      cc.threads = threads();
      const auto rep = harness::chain_experiment(parse_room(ch_room), ch_max, est::MlpSurrogate{&m}, cc);
      const auto j = harness::to_json(rep);
      if (!ex_report.empty()) write_file(ex_report, j.dump(2) + "\n");
      emit(j, harness::text_table(rep.comparison) + fmt("spearman(|err|, rooms) %.3f\n", rep.spearman_abs_err));
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1", sv_model, sv_graphs, sv_variant = "diamond";
  unsigned sv_workers = 2;
  serve->add_option("--port", sv_port, "Port");
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--model", sv_model, "Model JSON (default from $CROWDEST_MODEL)");
  serve->add_option("--graphs-dir", sv_graphs, "Graph store (default from $CROWDEST_GRAPHS_DIR, else ./graphs)");
  serve->add_option("--workers", sv_workers, "Simulation workers");
  serve->add_option("--fet-variant", sv_variant, "simple or diamond");
  serve->callback([&] {
    action = [&] {
      service::ServiceConfig sc;
      const char* env = std::getenv(kGraphsEnv);
      sc.graphs_dir = !sv_graphs.empty() ? sv_graphs : env ? env : "graphs";
      sc.workers = sv_workers;
      sc.fet_variant = parse_variant(sv_variant);
      std::optional<mlp::MlpModel> model;
      if (!sv_model.empty() || std::getenv(kModelEnv)) model = mlp::load(model_path(sv_model));
      service::Service svc(sc, std::move(model));
      httplib::Server srv;
      svc.install(srv);
      const int port = sv_port == 0 ? srv.bind_to_any_port(sv_host) : (srv.bind_to_port(sv_host, sv_port) ? sv_port : -1);
      if (port < 0) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
      // The first line names the port so scripts can start with --port 0.
      std::cout << "listening on http://" << sv_host << ":" << port << (svc.has_model() ? "" : " (no model)") << std::endl;
      srv.listen_after_bind();
    };
  });

  // demo
  auto* demo = app.add_subcommand("demo", "Corpus, training and comparison suite in one run");
  DemoOptions demo_opt;
  demo->add_option("--count", demo_opt.count, "Corpus size");
  demo->add_option("--suite", demo_opt.suite, "Suite JSON");
  demo->add_option("--out", demo_opt.out, "Also write the report here");
  demo->callback([&] {
    action = [&] {
      const auto [j, text] = run_demo(g_opts.seed.value_or(2024), demo_opt);
      if (!demo_opt.out.empty()) write_file(demo_opt.out, g_opts.json ? j.dump(2) + "\n" : text);
      emit(j, text);
    };
  });

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  for (const auto* sub = static_cast<const CLI::App*>(&app); !sub->get_subcommands().empty();)
    sub = sub->get_subcommands().front(), g_command += (g_command.empty() ? "" : " ") + sub->get_name();

  const auto fail = [&](int code, const std::string& what, const json& detail) {
    if (g_opts.json) {
      json env{{"schema", kEnvelope}, {"command", g_command}, {"ok", false}, {"error", what}};
      if (!detail.is_null()) env["detail"] = detail;
      std::cout << env.dump(2) << "\n";
    } else {
      std::cerr << "error: " << what << "\n";
    }
    return code;
  };
  try {
    action();
  } catch (const UsageError& e) {
    return fail(2, e.what(), nullptr);
  } catch (const DomainFailure& e) {
    return fail(1, e.what(), e.detail);
  } catch (const est::InvalidGraph& e) {
    return fail(1, e.what(), nullptr);
  } catch (const std::exception& e) {
    return fail(1, e.what(), nullptr);
  }
  return 0;
}

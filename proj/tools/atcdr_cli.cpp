#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "atcdr/checkpoint.hpp"
#include "atcdr/learner.hpp"
#include "atcdr/scenario.hpp"
#include "atcdr/service_http.hpp"
#include "atcdr/synthetic.hpp"

namespace fs = std::filesystem;
using namespace atcdr;

namespace {

std::vector<Scenario> load_scenarios(const std::vector<std::string>& paths) {
  std::vector<Scenario> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(load_scenario(f));
    } else {
      out.push_back(load_scenario(p));
    }
  }
  return out;
}

std::vector<Scenario> synthetic_set(std::size_t count, std::uint64_t first_seed, int flights, double duration) {
  std::vector<Scenario> out;
  for (std::size_t s = 0; s < count; ++s) out.push_back(generate_synthetic_scenario(first_seed + s, flights, duration));
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path, "io");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(l);
  return lines;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path, "io");
  return out;
}

TrainConfig base_config(const std::string& preset, const std::string& config_path) {
  TrainConfig cfg = preset == "full" ? TrainConfig{} : TrainConfig::desk_scale();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw Error("cannot open " + config_path, "io");
    cfg = TrainConfig::from_json(nlohmann::json::parse(in), cfg);
  }
  return cfg;
}

DgnModel policy_model(const std::string& checkpoint, bool online) {
  DgnModel m = load_checkpoint(checkpoint);
  return online ? m : target_policy(m);
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

int serve(Session& session, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, session);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cerr << "listening on " << host << ":" << port << "\n";
  const bool ok = server.listen(host, port);
  session.pause();
  g_server = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Air-traffic conflict detection and resolution workbench"};
  app.require_subcommand(1);

  // detect
  auto* detect = app.add_subcommand("detect", "Run the conflict detector over a scenario (and optional track feed)");
  std::string det_scenario, det_tracks;
  std::size_t det_k = 3;
  detect->add_option("-s,--scenario", det_scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  detect->add_option("-t,--tracks", det_tracks, "Line-delimited track updates to ingest")->check(CLI::ExistingFile);
  detect->add_option("-k,--neighbors", det_k, "Neighbours per agent")->check(CLI::PositiveNumber);

  // generate
  auto* generate = app.add_subcommand("generate", "Write synthetic converging-encounter scenarios");
  std::uint64_t gen_seed = 1;
  std::size_t gen_count = 1;
  int gen_flights = 2;
  double gen_duration = 900;
  std::string gen_dir;
  generate->add_option("--seed", gen_seed, "First seed");
  generate->add_option("-n,--count", gen_count, "Number of scenarios")->check(CLI::PositiveNumber);
  generate->add_option("--flights", gen_flights, "Flights per scenario")->check(CLI::Range(2, 64));
  generate->add_option("--duration", gen_duration, "Scenario length, s");
  generate->add_option("-o,--out-dir", gen_dir, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a DGN policy");
  std::vector<std::string> tr_scenarios;
  std::size_t tr_synthetic = 0;
  std::string tr_pattern = "all", tr_preset = "desk", tr_config, tr_out, tr_curves, tr_episode_log;
  std::size_t tr_batches = 1;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_explore, tr_exploit;
  train_cmd->add_option("-s,--scenarios", tr_scenarios, "Scenario files or directories")->check(CLI::ExistingPath);
  train_cmd->add_option("--synthetic", tr_synthetic, "Train on N synthetic 2-flight scenarios (seeds 1..N)");
  train_cmd->add_option("--pattern", tr_pattern, "all (AllN) or seq (MSeqN)")->check(CLI::IsMember({"all", "seq"}));
  train_cmd->add_option("-m,--batches", tr_batches, "M for MSeqN")->check(CLI::PositiveNumber);
  train_cmd->add_option("--preset", tr_preset, "Base configuration")->check(CLI::IsMember({"desk", "full"}));
  train_cmd->add_option("-c,--config", tr_config, "JSON overrides merged onto the preset")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", tr_seed, "Training seed (also seeds initialization)");
  train_cmd->add_option("--exploration-episodes", tr_explore, "Override exploration episodes");
  train_cmd->add_option("--exploitation-episodes", tr_exploit, "Override exploitation episodes");
  train_cmd->add_option("-o,--out", tr_out, "Checkpoint path")->required();
  train_cmd->add_option("--curves", tr_curves, "Curves CSV path");
  train_cmd->add_option("--episode-log", tr_episode_log, "Per-step JSON lines log");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint greedily");
  std::string ev_checkpoint, ev_log, ev_policy = "greedy";
  std::vector<std::string> ev_scenarios;
  std::size_t ev_synthetic = 0;
  std::uint64_t ev_synthetic_seed = 10001;
  bool ev_online = false;
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "Checkpoint path")->check(CLI::ExistingFile);
  eval_cmd->add_option("-s,--scenarios", ev_scenarios, "Scenario files or directories")->check(CLI::ExistingPath);
  eval_cmd->add_option("--synthetic", ev_synthetic, "Evaluate on N synthetic 2-flight scenarios");
  eval_cmd->add_option("--synthetic-seed", ev_synthetic_seed, "First synthetic seed");
  eval_cmd->add_option("--policy", ev_policy, "greedy or noaction")->check(CLI::IsMember({"greedy", "noaction"}));
  eval_cmd->add_flag("--online", ev_online, "Use the online weights instead of the target weights");
  eval_cmd->add_option("--log", ev_log, "Per-step JSON lines log");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the advisory API over a scenario");
  std::string sv_scenario = env_or("ATCDR_SCENARIO", ""), sv_checkpoint = env_or("ATCDR_CHECKPOINT", "");
  std::string sv_host = "127.0.0.1", sv_log, sv_mode = "advisor";
  int sv_port = std::stoi(env_or("ATCDR_PORT", "8080"));
  serve_cmd->add_option("-s,--scenario", sv_scenario, "Scenario JSON (env ATCDR_SCENARIO)");
  serve_cmd->add_option("--checkpoint", sv_checkpoint, "Checkpoint (env ATCDR_CHECKPOINT)");
  serve_cmd->add_option("-p,--port", sv_port, "Port (env ATCDR_PORT)")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", sv_host, "Bind address");
  serve_cmd->add_option("--log", sv_log, "Session log path (line-delimited JSON)");
  serve_cmd->add_option("--mode", sv_mode, "Initial mode")->check(CLI::IsMember({"advisor", "full_automation"}));

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "Re-execute a recorded session log");
  std::string rp_scenario, rp_checkpoint, rp_log, rp_out;
  bool rp_check = false, rp_serve = false;
  int rp_port = std::stoi(env_or("ATCDR_PORT", "8080"));
  replay_cmd->add_option("-s,--scenario", rp_scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--checkpoint", rp_checkpoint, "Checkpoint used by the session")->check(CLI::ExistingFile);
  replay_cmd->add_option("--log", rp_log, "Recorded session log")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("-o,--out", rp_out, "Write the reproduced log here");
  replay_cmd->add_flag("--check", rp_check, "Exit 1 unless the reproduced log is identical");
  replay_cmd->add_flag("--serve", rp_serve, "Serve the replayed session afterwards");
  replay_cmd->add_option("-p,--port", rp_port, "Port when serving")->check(CLI::Range(1, 65535));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*detect) {
      const Scenario sc = load_scenario(det_scenario);
      EnvConfig cfg;
      cfg.max_neighbors = det_k;
      CdrEnv env(sc, cfg);
      auto emit = [&](double t) {
        for (const auto& ev : env.events()) {
          nlohmann::json j = event_to_json(ev);
          j["t"] = t;
          std::cout << j.dump() << "\n";
        }
      };
      if (det_tracks.empty()) {
        emit(env.time());
      } else {
        std::map<std::string, double> last;
        std::optional<double> batch_t;
        for (const auto& line : read_lines(det_tracks)) {
          const TrackUpdate u = TrackUpdate::from_json(nlohmann::json::parse(line));
          const auto k = env.index_of(u.flight);
          if (!k) throw Error("unknown flight " + u.flight, "not_found");
          if (last.count(u.flight) && !(u.t > last[u.flight]))
            throw Error("stale track for " + u.flight, "stale_timestamp");
          last[u.flight] = u.t;
          if (batch_t && u.t != *batch_t) emit(*batch_t);
          batch_t = u.t;
          FlightState s = u.state();
          s.flight_id = u.flight;
          env.set_state(*k, s);
        }
        if (batch_t) emit(*batch_t);
      }
      return 0;
    }

    if (*generate) {
      fs::create_directories(gen_dir);
      for (std::size_t n = 0; n < gen_count; ++n) {
        const Scenario sc = generate_synthetic_scenario(gen_seed + n, gen_flights, gen_duration);
        const fs::path p = fs::path(gen_dir) / (sc.id + ".json");
        save_scenario(sc, p);
        std::cout << p.string() << "\n";
      }
      return 0;
    }

    if (*train_cmd) {
      std::vector<Scenario> scenarios = load_scenarios(tr_scenarios);
      const auto synth = synthetic_set(tr_synthetic, 1, 2, 900);
      scenarios.insert(scenarios.end(), synth.begin(), synth.end());
      if (scenarios.empty()) throw Error("train: give --scenarios or --synthetic", "invalid");
      TrainConfig cfg = base_config(tr_preset, tr_config);
      if (tr_seed) cfg.seed = cfg.net.seed = *tr_seed;
      if (tr_explore) cfg.exploration_episodes = cfg.seq_exploration_episodes = *tr_explore;
      if (tr_exploit) cfg.exploitation_episodes = cfg.seq_exploitation_episodes = *tr_exploit;
      std::ofstream episode_log;
      TrainOptions opts;
      if (!tr_episode_log.empty()) {
        episode_log = open_out(tr_episode_log);
        opts.episode_log = &episode_log;
      }
      opts.on_episode = [](const CurveRow& r) {
        if ((r.episode + 1) % 100 == 0)
          std::cerr << "episode " << r.episode + 1 << " reward " << r.mean_reward << " losses " << r.losses << "\n";
      };
      const TrainPattern pattern = tr_pattern == "all" ? TrainPattern::AllN : TrainPattern::MSeqN;
      TrainResult res = train(scenarios, pattern, cfg, tr_batches, opts);
      save_checkpoint(res.model, tr_out);
      if (!tr_curves.empty()) open_out(tr_curves) << curves_csv(res.curves);
      nlohmann::json stages = nlohmann::json::array();
      for (const auto& s : res.stages)
        stages.push_back({{"stage", s.stage}, {"scenarios", s.scenarios}, {"episodes", s.episodes},
                          {"start_hash", s.start_hash}, {"end_hash", s.end_hash}});
      std::cout << nlohmann::json{{"checkpoint", tr_out}, {"episodes", res.curves.size()}, {"stages", stages}}.dump(2)
                << "\n";
      return 0;
    }

    if (*eval_cmd) {
      std::vector<Scenario> scenarios = load_scenarios(ev_scenarios);
      const auto synth = synthetic_set(ev_synthetic, ev_synthetic_seed, 2, 900);
      scenarios.insert(scenarios.end(), synth.begin(), synth.end());
      if (scenarios.empty()) throw Error("eval: give --scenarios or --synthetic", "invalid");
      std::ofstream log;
      if (!ev_log.empty()) log = open_out(ev_log);
      std::ostream* logp = ev_log.empty() ? nullptr : &log;
      EvalMetrics m;
      if (ev_policy == "noaction") {
        m = evaluate_policy(scenarios, EnvConfig{}, no_action_policy(), logp);
      } else {
        if (ev_checkpoint.empty()) throw Error("eval: --checkpoint is required for the greedy policy", "invalid");
        m = evaluate(policy_model(ev_checkpoint, ev_online), scenarios, logp);
      }
      std::cout << m.to_json().dump(2) << "\n";
      return 0;
    }

    if (*serve_cmd) {
      if (sv_scenario.empty()) throw Error("serve: --scenario or ATCDR_SCENARIO is required", "invalid");
      DgnModel model = sv_checkpoint.empty() ? DgnModel(TrainConfig::desk_scale().net) : policy_model(sv_checkpoint, false);
      if (sv_checkpoint.empty()) std::cerr << "no checkpoint given: serving an untrained network\n";
      std::ofstream log;
      if (!sv_log.empty()) log = open_out(sv_log);
      Session session(load_scenario(sv_scenario), std::move(model), {}, sv_log.empty() ? nullptr : &log);
      if (sv_mode != "advisor") session.set_mode(parse_mode(sv_mode));
      return serve(session, sv_host, sv_port);
    }

    if (*replay_cmd) {
      DgnModel model =
          rp_checkpoint.empty() ? DgnModel(TrainConfig::desk_scale().net) : policy_model(rp_checkpoint, false);
      const auto recorded = read_lines(rp_log);
      Session session(load_scenario(rp_scenario), std::move(model));
      replay_into(session, recorded);
      const auto reproduced = session.log_lines();
      if (!rp_out.empty()) {
        auto out = open_out(rp_out);
        for (const auto& l : reproduced) out << l << "\n";
      }
      const bool same = reproduced == recorded;
      std::cerr << (same ? "replay identical" : "replay differs") << " (" << reproduced.size() << " entries)\n";
      if (rp_serve) return serve(session, "127.0.0.1", rp_port);
      return rp_check && !same ? 1 : 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "atcdr/actions.hpp"
#include "atcdr/env.hpp"
#include "atcdr/error.hpp"
#include "atcdr/learner.hpp"
#include "atcdr/transparency.hpp"

namespace atcdr {

enum class Mode : std::uint8_t { Advisor, FullAutomation };

inline const char* to_string(Mode m) { return m == Mode::Advisor ? "advisor" : "full_automation"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "advisor") return Mode::Advisor;
  if (s == "full_automation") return Mode::FullAutomation;
  throw Error("unknown mode '" + s + "' (expected advisor or full_automation)", "invalid");
}

/// Radar track of one flight at time `t`.
struct TrackUpdate {
  std::string flight;
  double x{};
  double y{};
  double alt{};
  double chi_deg{};
  double h_speed{};
  double v_speed{};
  double t{};

  FlightState state() const { return {flight, x, y, alt, wrap_two_pi(deg_to_rad(chi_deg)), h_speed, v_speed, t}; }

  nlohmann::json to_json() const {
    return {{"flight", flight},       {"x_m", x},
            {"y_m", y},               {"alt_ft", alt},
            {"chi_deg", chi_deg},   {"h_speed_mps", h_speed},
            {"v_speed_ftps", v_speed}, {"t_s", t}};
  }

  static TrackUpdate from_json(const nlohmann::json& j) {
    try {
      TrackUpdate u;
      u.flight = j.at("flight").get<std::string>();
      u.x = j.at("x_m").get<double>();
      u.y = j.at("y_m").get<double>();
      u.alt = j.at("alt_ft").get<double>();
      u.chi_deg = j.at("chi_deg").get<double>();
      u.h_speed = j.at("h_speed_mps").get<double>();
      u.v_speed = j.value("v_speed_ftps", 0.0);
      u.t = j.at("t_s").get<double>();
      return u;
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("track update: ") + e.what(), "parse");
    }
  }
};

enum class Conformance : std::uint8_t { Conforming, NonConforming, Unknown };

inline const char* to_string(Conformance c) {
  switch (c) {
    case Conformance::Conforming: return "conforming";
    case Conformance::NonConforming: return "non_conforming";
    case Conformance::Unknown: return "unknown";
  }
  return "?";
}

struct ConformanceTolerance {
  double course_deg = 3.0;
  double speed_mps = 2.0;
  double v_speed_ftps = 3.0;
};

/// State the maneuver model predicts `dt` seconds after `action` is issued.
inline FlightState expected_state(FlightSim f, const FlightPlan& plan, ActionId action, const EnvConfig& cfg) {
  expire_offset(f, plan);
  apply_action(f, plan, action, cfg);
  advance(f, plan, cfg.dt, cfg);
  return f.state;
}

/// Compares an observed track with the predicted one: course, horizontal
/// speed and vertical rate must all lie within tolerance.
inline Conformance conformance_monitor(const FlightState& expected, const std::optional<FlightState>& observed,
                                       const ConformanceTolerance& tol = {}) {
  if (!observed) return Conformance::Unknown;
  const bool course = std::abs(rad_to_deg(wrap_pi(observed->chi - expected.chi))) <= tol.course_deg;
  const bool speed = std::abs(observed->h_speed - expected.h_speed) <= tol.speed_mps;
  const bool vrate = std::abs(observed->v_speed - expected.v_speed) <= tol.v_speed_ftps;
  return course && speed && vrate ? Conformance::Conforming : Conformance::NonConforming;
}

/// Prescription made at `t0` for a flight: the track at `t0` (with its
/// pending maneuvers) and the follow-up track, if any.
inline Conformance conformance_monitor(const FlightSim& at_t0, const FlightPlan& plan, ActionId action,
                                       const std::optional<FlightState>& observed, const EnvConfig& cfg = {},
                                       const ConformanceTolerance& tol = {}) {
  return conformance_monitor(expected_state(at_t0, plan, action, cfg), observed, tol);
}

/// Track-only variant: the flight is assumed on its plan if conformant, else holding course.
inline Conformance conformance_monitor(const FlightState& track_t0, const FlightPlan& plan, ActionId action,
                                       const std::optional<FlightState>& observed, const EnvConfig& cfg = {},
                                       const ConformanceTolerance& tol = {}) {
  FlightSim f;
  f.entered = true;
  f.state = track_t0;
  f.next_wp = initial_next_waypoint(plan, track_t0.position());
  f.lateral = conformance(track_t0, plan, cfg.separation) == Basis::Plan ? LateralMode::FollowPlan
                                                                          : LateralMode::HoldCourse;
  return conformance_monitor(f, plan, action, observed, cfg, tol);
}

/// One operator session over a scenario: advisor or full-automation mode,
/// a stepping clock, track ingestion and a line-delimited JSON log. All
/// mutations take the writer lock; queries share a reader lock.
class Session {
 public:
  Session(Scenario scenario, DgnModel model, EnvConfig cfg = {}, std::ostream* log = nullptr,
          std::size_t what_if_depth = 5)
      : env_(std::move(scenario), with_k(cfg, model)), model_(std::move(model)), sink_(log), depth_(what_if_depth) {
    write({{"type", "session"},
           {"scenario", env_.scenario().id},
           {"mode", to_string(mode_)},
           {"t", env_.time()},
           {"params_hash", params_hash(model_.online)}});
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;
  ~Session() { pause(); }

  Mode mode() const {
    std::shared_lock lock(mu_);
    return mode_;
  }

  double time() const {
    std::shared_lock lock(mu_);
    return env_.time();
  }

  bool done() const {
    std::shared_lock lock(mu_);
    return env_.done();
  }

  bool playing() const { return playing_.load(); }

  nlohmann::json state() const {
    std::shared_lock lock(mu_);
    nlohmann::json flights = nlohmann::json::array();
    for (std::size_t k = 0; k < env_.num_agents(); ++k) {
      const FlightSim& f = env_.flights()[k];
      const FlightState& s = f.state;
      const auto c = conformance_.find(env_.ids()[k]);
      flights.push_back({{"id", env_.ids()[k]},
                         {"active", f.active()},
                         {"exited", f.exited},
                         {"x_m", s.x},
                         {"y_m", s.y},
                         {"alt_ft", s.alt},
                         {"chi_deg", rad_to_deg(s.chi)},
                         {"h_speed_mps", s.h_speed},
                         {"v_speed_ftps", s.v_speed},
                         {"next_wp", f.next_wp},
                         {"maneuvering", f.maneuvering()},
                         {"conformance", c == conformance_.end() ? "unknown" : to_string(c->second)}});
    }
    nlohmann::json pending = nlohmann::json::array();
    for (const auto& [k, a] : pending_)
      pending.push_back({{"flight", env_.ids()[k]}, {"action", to_index(a)}, {"label", action_label(a)}});
    return {{"scenario", env_.scenario().id},
            {"t", env_.time()},
            {"mode", to_string(mode_)},
            {"playing", playing_.load()},
            {"done", env_.done()},
            {"flights", flights},
            {"pending", pending},
            {"advisory_queue", advisory_queue_locked()}};
  }

  nlohmann::json conflicts() const {
    std::shared_lock lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& ev : env_.events()) {
      nlohmann::json j = event_to_json(ev);
      j["id"] = conflict_id(ev.id_i, ev.id_j);
      out.push_back(std::move(j));
    }
    return out;
  }

  /// Ranked actions for one flight, with what-ifs for the best few.
  nlohmann::json advisories(const std::string& flight) const {
    std::shared_lock lock(mu_);
    const std::size_t k = agent_index(flight);
    if (!env_.flights()[k].active()) throw Error("flight " + flight + " is not active", "invalid");
    const auto ranked = ranked_locked(k, depth_);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& r : ranked) list.push_back(r.to_json());
    return {{"flight", flight}, {"t", env_.time()}, {"advisories", list}};
  }

  /// Conflict and resolution payloads for the pair named "<idA>--<idB>".
  nlohmann::json transparency(const std::string& id) const {
    std::shared_lock lock(mu_);
    const auto sep = id.find("--");
    if (sep == std::string::npos) throw Error("conflict id must look like A--B", "invalid");
    const auto ev = find_event(env_, id.substr(0, sep), id.substr(sep + 2));
    if (!ev) throw Error("no current conflict " + id, "not_found");
    nlohmann::json res = nlohmann::json::array();
    for (std::size_t k : {ev->i, ev->j}) {
      const auto p = pending_.find(k);
      const std::optional<ActionId> chosen = p == pending_.end() ? std::nullopt : std::optional<ActionId>(p->second);
      res.push_back(resolution_report(model_, env_, k, chosen, depth_).to_json());
    }
    return {{"t", env_.time()}, {"conflict", conflict_report(env_, *ev).to_json()}, {"resolutions", res}};
  }

  /// Operator instruction for the next step (advisor mode only).
  nlohmann::json apply(const std::string& flight, std::size_t action_index) {
    std::unique_lock lock(mu_);
    if (mode_ != Mode::Advisor) throw Error("apply is rejected in full automation mode", "mode_rejected");
    const std::size_t k = agent_index(flight);
    if (!env_.flights()[k].active()) throw Error("flight " + flight + " is not active", "invalid");
    const ActionId a = action_id(action_index);
    pending_[k] = a;
    nlohmann::json j = {{"type", "apply"},
                        {"t", env_.time()},
                        {"flight", flight},
                        {"action", action_index},
                        {"label", action_label(a)},
                        {"rank", rank_of_locked(k, a)}};
    write(j);
    return j;
  }

  void set_mode(Mode m) {
    std::unique_lock lock(mu_);
    mode_ = m;
    if (m == Mode::FullAutomation) pending_.clear();
    write({{"type", "mode"}, {"t", env_.time()}, {"mode", to_string(m)}});
  }

  /// Advances one step and returns the log entry written for it.
  nlohmann::json step() {
    std::unique_lock lock(mu_);
    return step_locked();
  }

  /// Steps every `interval` until paused or the scenario ends.
  void play(std::chrono::milliseconds interval) {
    pause();
    playing_ = true;
    clock_ = std::jthread([this, interval](std::stop_token stop) {
      while (!stop.stop_requested()) {
        {
          std::unique_lock lock(mu_);
          if (env_.done()) break;
          step_locked();
        }
        std::this_thread::sleep_for(interval);
      }
      playing_ = false;
    });
  }

  void pause() {
    if (clock_.joinable()) {
      clock_.request_stop();
      clock_.join();
    }
    playing_ = false;
  }

  /// Replaces a flight's state with a radar track and re-runs detection.
  /// Timestamps must increase strictly per flight.
  nlohmann::json ingest(const TrackUpdate& u) {
    std::unique_lock lock(mu_);
    const std::size_t k = agent_index(u.flight);
    const auto last = last_track_.find(k);
    if (last != last_track_.end() && !(u.t > last->second))
      throw Error("stale track for " + u.flight + ": t=" + format_double(u.t) + " not after " + format_double(last->second),
                  "stale_timestamp");
    if (!env_.flights()[k].active()) throw Error("flight " + u.flight + " is not active", "invalid");
    last_track_[k] = u.t;
    write({{"type", "ingest"}, {"t", env_.time()}, {"update", u.to_json()}});
    FlightState s = u.state();
    s.flight_id = env_.ids()[k];
    env_.set_state(k, s);
    nlohmann::json out = {{"flight", u.flight}, {"t", env_.time()}};
    const auto check = checks_.find(k);
    if (check != checks_.end() && std::abs(u.t - check->second.due) < 0.5 * env_.config().dt) {
      const Conformance c = conformance_monitor(check->second.expected, s, tol_);
      conformance_[u.flight] = c;
      write({{"type", "conformance"},
             {"t", env_.time()},
             {"flight", u.flight},
             {"action", to_index(check->second.action)},
             {"issued_t", check->second.issued},
             {"status", to_string(c)}});
      out["conformance"] = to_string(c);
      checks_.erase(check);
    }
    out["advisory_queue"] = advisory_queue_locked();
    return out;
  }

  std::vector<std::string> log_lines() const {
    std::shared_lock lock(mu_);
    return lines_;
  }

  const CdrEnv& env_unlocked() const { return env_; }

 private:
  struct PendingCheck {
    ActionId action{kNoAction};
    double issued{};
    double due{};
    FlightState expected;
  };

  static EnvConfig with_k(EnvConfig cfg, const DgnModel& m) {
    cfg.max_neighbors = m.cfg.max_neighbors;
    return cfg;
  }

  std::size_t agent_index(const std::string& flight) const {
    const auto k = env_.index_of(flight);
    if (!k) throw Error("unknown flight " + flight, "not_found");
    return *k;
  }

  std::vector<RankedAction> ranked_locked(std::size_t k, std::size_t with_what_if) const {
    const Matrix q = model_.q_values(env_.observation());
    const Eigen::RowVectorXd row = q.row(static_cast<Eigen::Index>(k));
    auto ranked = rank_actions(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    for (std::size_t r = 0; r < std::min(with_what_if, ranked.size()); ++r)
      ranked[r].what_if = what_if(env_, k, ranked[r].action);
    return ranked;
  }

  std::size_t rank_of_locked(std::size_t k, ActionId a) const {
    for (const auto& r : ranked_locked(k, 0))
      if (r.action == a) return r.rank;
    return 0;
  }

  /// Top advisory for every agent that currently has a neighbour.
  nlohmann::json advisory_queue_locked() const {
    nlohmann::json out = nlohmann::json::array();
    const auto acting = acting_agents(env_);
    bool any = false;
    for (std::size_t k = 0; k < env_.num_agents(); ++k) any = any || env_.observation().neighbor_count(k) > 0;
    if (!any) return out;
    const Matrix q = model_.q_values(env_.observation());
    for (std::size_t k = 0; k < env_.num_agents(); ++k) {
      if (!env_.flights()[k].active() || env_.observation().neighbor_count(k) == 0) continue;
      const std::size_t best = argmax_row(q, k);
      out.push_back({{"flight", env_.ids()[k]},
                     {"action", best},
                     {"label", action_label(action_id(best))},
                     {"q", q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(best))},
                     {"maneuvering", !acting[k]}});
    }
    return out;
  }

  nlohmann::json step_locked() {
    if (env_.done()) throw Error("scenario finished", "done");
    const double t0 = env_.time();
    std::vector<std::optional<ActionId>> joint(env_.num_agents());
    for (std::size_t k = 0; k < joint.size(); ++k)
      if (env_.flights()[k].active()) joint[k] = kNoAction;
    std::vector<std::size_t> ranks(joint.size(), 0);
    std::vector<std::uint8_t> decided(joint.size(), 0);
    if (mode_ == Mode::FullAutomation) {
      const auto acting = acting_agents(env_);
      std::mt19937_64 unused(0);
      joint = choose_joint(model_, env_, acting, 0.0, unused);
      for (std::size_t k = 0; k < joint.size(); ++k)
        if (acting[k]) {
          decided[k] = 1;
          ranks[k] = 1;
        }
    } else {
      for (const auto& [k, a] : pending_) {
        if (!env_.flights()[k].active()) continue;
        joint[k] = a;
        decided[k] = 1;
        ranks[k] = rank_of_locked(k, a);
      }
    }
    std::vector<FlightState> expected(joint.size());
    for (std::size_t k = 0; k < joint.size(); ++k)
      if (decided[k]) expected[k] = expected_state(env_.flights()[k], env_.plan(k), *joint[k], env_.config());
    env_.step(joint);
    pending_.clear();

    nlohmann::json actions = nlohmann::json::array();
    for (std::size_t k = 0; k < joint.size(); ++k) {
      if (!decided[k]) continue;
      const std::optional<FlightState> observed =
          env_.flights()[k].active() ? std::optional<FlightState>(env_.flights()[k].state) : std::nullopt;
      const Conformance c = conformance_monitor(expected[k], observed, tol_);
      conformance_[env_.ids()[k]] = c;
      checks_[k] = PendingCheck{*joint[k], t0, env_.time(), expected[k]};
      actions.push_back({{"flight", env_.ids()[k]},
                         {"action", to_index(*joint[k])},
                         {"label", action_label(*joint[k])},
                         {"mode", to_string(mode_)},
                         {"rank", ranks[k]},
                         {"override", ranks[k] != 1},
                         {"conformance", to_string(c)}});
    }
    nlohmann::json events = nlohmann::json::array();
    for (const auto& ev : env_.events()) events.push_back(event_to_json(ev));
    nlohmann::json j = {{"type", "step"},
                        {"t0", t0},
                        {"t", env_.time()},
                        {"actions", actions},
                        {"events", events},
                        {"advisory_queue", advisory_queue_locked()},
                        {"done", env_.done()}};
    write(j);
    return j;
  }

  void write(const nlohmann::json& j) {
    lines_.push_back(j.dump());
    if (sink_) *sink_ << lines_.back() << "\n" << std::flush;
  }

  mutable std::shared_mutex mu_;
  CdrEnv env_;
  DgnModel model_;
  std::ostream* sink_;
  std::size_t depth_;
  Mode mode_{Mode::Advisor};
  ConformanceTolerance tol_;
  std::map<std::size_t, ActionId> pending_;
  std::map<std::size_t, double> last_track_;
  std::map<std::size_t, PendingCheck> checks_;
  std::map<std::string, Conformance> conformance_;
  std::vector<std::string> lines_;
  std::atomic<bool> playing_{false};
  std::jthread clock_;
};

/// Re-executes the mutations recorded in a session log (mode, apply,
/// ingest and step entries) on `s`.
inline void replay_into(Session& s, const std::vector<std::string>& lines) {
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[n]);
    } catch (const nlohmann::json::exception& e) {
      throw Error("session log line " + std::to_string(n + 1) + ": " + e.what(), "parse");
    }
    const std::string type = j.value("type", "");
    if (type == "mode") {
      s.set_mode(parse_mode(j.at("mode").get<std::string>()));
    } else if (type == "apply") {
      s.apply(j.at("flight").get<std::string>(), j.at("action").get<std::size_t>());
    } else if (type == "ingest") {
      s.ingest(TrackUpdate::from_json(j.at("update")));
    } else if (type == "step") {
      s.step();
    }
  }
}

/// Log of a fresh session replaying `lines`; equals `lines` for a log
/// recorded with the same scenario and model.
inline std::vector<std::string> replay_session(const Scenario& scenario, const DgnModel& model,
                                               const std::vector<std::string>& lines, EnvConfig cfg = {}) {
  Session s(scenario, model, cfg);
  replay_into(s, lines);
  return s.log_lines();
}

}  // namespace atcdr

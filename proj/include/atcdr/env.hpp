#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atcdr/actions.hpp"
#include "atcdr/conflict.hpp"
#include "atcdr/error.hpp"
#include "atcdr/geo.hpp"
#include "atcdr/scenario.hpp"

namespace atcdr {

inline constexpr std::size_t kObservationSize = 24;
inline constexpr std::size_t kEdgeSize = 11;
inline constexpr std::size_t kObservedWaypoints = 4;

using ObservationVector = std::array<double, kObservationSize>;
using EdgeVector = std::array<double, kEdgeSize>;

/// Denominators of every normalised feature.
struct NormalizationConstants {
  double max_alt = 45000.0;        // ft
  double min_h_speed = 100.0;      // m/s
  double max_h_speed = 350.0;      // m/s
  double d_exit = 100000.0;        // m
  double hd = 100000.0;            // m, waypoint and current horizontal distance
  double vd = 10000.0;             // ft, altitude differences
  double t_cpa = 600.0;            // s
  double d_h_cpa = 9260.0 * 4.0;   // m
  double v_d_cpa = 2000.0;         // ft
  double d_cp = 9260.0 * 4.0;      // m
  double t_cp = 600.0;             // s
  double f = kPi;                  // rad, course change
  double v = kClimbRate;           // ft/s, vertical speed change

  void validate() const {
    if (!(max_alt > 0 && d_exit > 0 && hd > 0 && vd > 0 && t_cpa > 0 && d_h_cpa > 0 && v_d_cpa > 0 && d_cp > 0 &&
          t_cp > 0 && f > 0 && v > 0 && min_h_speed >= 0 && max_h_speed > min_h_speed))
      throw Error("normalization constants must be positive with max_h_speed > min_h_speed", "invalid");
  }
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Local observation of one flight. `next_wp` is the index of the next plan
/// waypoint still to be flown; missing waypoints are zero-padded.
inline ObservationVector build_observation(const FlightState& s, const FlightPlan& plan, std::size_t next_wp,
                                           const NormalizationConstants& n = {}) {
  ObservationVector o{};
  const Waypoint& exit = plan.exit_point();
  const double psi = bearing(s.position(), exit.position());
  o[0] = clamp01(s.alt / n.max_alt);
  o[1] = std::cos(s.chi);
  o[2] = std::sin(s.chi);
  o[3] = clamp01((s.h_speed - n.min_h_speed) / (n.max_h_speed - n.min_h_speed));
  o[4] = std::cos(s.chi - psi);
  o[5] = std::sin(s.chi - psi);
  o[6] = clamp01(distance(s.position(), exit.position()) / n.d_exit);
  o[7] = clamp01(std::abs(s.alt - exit.alt) / n.vd);
  for (std::size_t k = 0; k < kObservedWaypoints; ++k) {
    const std::size_t idx = next_wp + k;
    if (idx >= plan.waypoints.size()) break;
    const Waypoint& w = plan.waypoints[idx];
    const double dcourse = s.chi - bearing(s.position(), w.position());
    double* slot = &o[8 + 4 * k];
    slot[0] = std::cos(dcourse);
    slot[1] = std::sin(dcourse);
    slot[2] = clamp01(distance(s.position(), w.position()) / n.hd);
    slot[3] = clamp01(std::abs(s.alt - w.alt) / n.vd);
  }
  return o;
}

/// Edge features of a pair from the geometry seen by the subject aircraft.
inline EdgeVector edge_vector(const CpaGeometry& g, const NormalizationConstants& n = {}) {
  return {
      std::clamp(g.t_cpa / n.t_cpa, -1.0, 1.0),
      clamp01(g.d_h_cpa / n.d_h_cpa),
      std::cos(g.a_ij),
      std::sin(g.a_ij),
      std::cos(g.b_ij),
      std::sin(g.b_ij),
      clamp01(g.d_v_cpa / n.v_d_cpa),
      g.d_cp ? clamp01(*g.d_cp / n.d_cp) : 1.0,
      g.t_cp ? clamp01(*g.t_cp / n.t_cp) : 1.0,
      clamp01(g.d_h_now / n.hd),
      clamp01(g.d_v_now / n.vd),
  };
}

/// Edge list for `agent`: slot 0 is the all-zero self edge, then one edge per
/// ranked neighbour (truncated to k), then zero padding. Size k + 1.
inline std::vector<EdgeVector> build_edges(std::size_t agent, std::span<const std::size_t> ranked,
                                           std::span<const ConflictEvent> events, std::size_t k,
                                           const NormalizationConstants& n = {}) {
  std::vector<EdgeVector> out(k + 1, EdgeVector{});
  for (std::size_t s = 0; s < std::min(k, ranked.size()); ++s) {
    const std::size_t j = ranked[s];
    auto it = std::find_if(events.begin(), events.end(), [&](const ConflictEvent& ev) {
      return ev.involves(agent) && ev.involves(j) && agent != j;
    });
    if (it == events.end())
      throw Error("build_edges: no event for neighbour " + std::to_string(j) + " of agent " + std::to_string(agent),
                  "internal");
    out[s + 1] = edge_vector(geometry_from(*it, agent), n);
  }
  return out;
}

/// Binary (k+1) x n selector: row 0 picks the agent itself, row r picks its
/// r-th ranked neighbour, rows beyond the neighbourhood are zero.
class AdjacencyMatrix {
 public:
  AdjacencyMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return cells_.at(r * cols_ + c); }
  void set(std::size_t r, std::size_t c) {
    std::fill_n(cells_.begin() + static_cast<std::ptrdiff_t>(r * cols_), cols_, std::uint8_t{0});
    cells_.at(r * cols_ + c) = 1;
  }

  /// Column selected by row `r`, or -1 for an empty row.
  int slot(std::size_t r) const {
    for (std::size_t c = 0; c < cols_; ++c)
      if (at(r, c)) return static_cast<int>(c);
    return -1;
  }

  friend bool operator==(const AdjacencyMatrix&, const AdjacencyMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> cells_;
};

inline AdjacencyMatrix build_adjacency(std::size_t agent, std::span<const std::size_t> ranked, std::size_t n,
                                       std::size_t k) {
  if (k < 1) throw Error("build_adjacency: k must be at least 1", "invalid");
  AdjacencyMatrix c(k + 1, n);
  c.set(0, agent);
  for (std::size_t s = 0; s < std::min(k, ranked.size()); ++s) c.set(s + 1, ranked[s]);
  return c;
}

/// Joint observation of all agents: features plus the compact adjacency
/// (`slots[i*(k+1)+r]` is the agent selected by row r of C_i, or -1).
struct GraphObservation {
  std::size_t n{};
  std::size_t k{};
  std::vector<ObservationVector> obs;
  std::vector<EdgeVector> edges;
  std::vector<int> slots;

  std::size_t width() const { return k + 1; }
  int slot(std::size_t agent, std::size_t r) const { return slots[agent * width() + r]; }
  const EdgeVector& edge(std::size_t agent, std::size_t r) const { return edges[agent * width() + r]; }

  std::size_t neighbor_count(std::size_t agent) const {
    std::size_t c = 0;
    for (std::size_t r = 1; r < width(); ++r) c += slot(agent, r) >= 0;
    return c;
  }

  AdjacencyMatrix adjacency(std::size_t agent) const {
    AdjacencyMatrix c(width(), n);
    for (std::size_t r = 0; r < width(); ++r)
      if (slot(agent, r) >= 0) c.set(r, static_cast<std::size_t>(slot(agent, r)));
    return c;
  }

  friend bool operator==(const GraphObservation&, const GraphObservation&) = default;
};

/// Inputs of the per-agent reward, all taken after the transition.
struct RewardTerms {
  double course_change{};     // |commanded course change| this step, rad
  bool h_speed_changed{false};
  double v_speed_change{};    // |vertical speed change| this step, ft/s
  double chi_minus_psi{};     // rad, wrapped to [-pi, pi)
  double n_alt_diff_exit{};
  double n_dist_exit{};
  int alerts{};
  int losses{};
};

inline double reward(const RewardTerms& r, const NormalizationConstants& n = {}) {
  return -r.course_change / n.f - 0.5 * std::abs(r.chi_minus_psi) / kPi - 0.5 * r.n_alt_diff_exit - r.n_dist_exit -
         (r.h_speed_changed ? 1.0 : 0.0) - r.v_speed_change / n.v - 10.0 * r.alerts - 5.0 * r.losses;
}

inline RewardTerms reward_terms(const FlightState& prev, const FlightState& next, const FlightPlan& plan,
                                double commanded_course_change, int alerts, int losses,
                                const NormalizationConstants& n = {}) {
  const Waypoint& exit = plan.exit_point();
  RewardTerms r;
  r.course_change = std::abs(commanded_course_change);
  r.h_speed_changed = next.h_speed != prev.h_speed;
  r.v_speed_change = std::abs(next.v_speed - prev.v_speed);
  r.chi_minus_psi = wrap_pi(next.chi - bearing(next.position(), exit.position()));
  r.n_alt_diff_exit = clamp01(std::abs(next.alt - exit.alt) / n.vd);
  r.n_dist_exit = clamp01(distance(next.position(), exit.position()) / n.d_exit);
  r.alerts = alerts;
  r.losses = losses;
  return r;
}

struct EnvConfig {
  SeparationParams separation;
  NormalizationConstants norm;
  std::size_t max_neighbors = 3;  // K
  double dt = 30.0;               // s
  double capture_radius = kMetersPerNm;
};

enum class LateralMode : std::uint8_t { FollowPlan, HoldCourse, CourseOffset };

/// Simulated aircraft: kinematic state plus the maneuver state machine.
struct FlightSim {
  FlightState state;
  std::size_t next_wp{1};
  LateralMode lateral{LateralMode::FollowPlan};
  double offset_remaining{};  // s left on a course offset
  double speed_remaining{};   // s left on a speed instruction (the change itself persists)
  std::optional<double> target_alt;
  std::optional<std::size_t> direct_target;
  bool entered{false};
  bool exited{false};
  double flown_m{};
  std::vector<Vec2> track;
  std::size_t actions_taken{};

  bool active() const { return entered && !exited; }

  /// A course offset, speed instruction or level change is still executing.
  bool maneuvering() const {
    return (lateral == LateralMode::CourseOffset && offset_remaining > 0.0) || speed_remaining > 0.0 ||
           target_alt.has_value();
  }
};

/// Applies `action` at the current instant. Returns the commanded course change (rad).
inline double apply_action(FlightSim& f, const FlightPlan& plan, ActionId id, const EnvConfig& cfg) {
  const Action& a = action_of(id);
  FlightState& s = f.state;
  const double prev_chi = s.chi;
  switch (a.kind) {
    case ActionKind::NoAction:
      if (f.lateral != LateralMode::CourseOffset)
        f.lateral = conformance(s, plan, cfg.separation) == Basis::Plan ? LateralMode::FollowPlan : LateralMode::HoldCourse;
      break;
    case ActionKind::FlightLevelUp:
    case ActionKind::FlightLevelDown: {
      const double sign = a.kind == ActionKind::FlightLevelUp ? 1.0 : -1.0;
      f.target_alt = std::max(0.0, s.alt + sign * kFeetPerLevel);
      s.v_speed = sign * kClimbRate;
      break;
    }
    case ActionKind::Course:
      s.chi = wrap_two_pi(s.chi + deg_to_rad(a.delta));
      f.lateral = LateralMode::CourseOffset;
      f.offset_remaining = a.duration;
      f.direct_target.reset();
      break;
    case ActionKind::Speed:
      s.h_speed = std::max(0.0, s.h_speed + a.delta);
      f.speed_remaining = a.duration;
      break;
    case ActionKind::DirectTo: {
      const std::size_t last = plan.waypoints.size() - 1;
      const std::size_t idx = std::min(f.next_wp + static_cast<std::size_t>(a.waypoint) - 1, last);
      f.next_wp = idx;
      f.direct_target = idx;
      f.lateral = LateralMode::FollowPlan;
      f.offset_remaining = 0.0;
      if (distance(s.position(), plan.waypoints[idx].position()) > 0.0)
        s.chi = bearing(s.position(), plan.waypoints[idx].position());
      break;
    }
  }
  if (a.kind != ActionKind::NoAction) ++f.actions_taken;
  return std::abs(wrap_pi(s.chi - prev_chi));
}

/// Index of the next waypoint for a flight placed at `p` on or near its plan.
inline std::size_t initial_next_waypoint(const FlightPlan& plan, Vec2 p) {
  const PlanProjection cp = closest_point_on_plan(plan, p);
  std::size_t next = cp.segment + 1;
  if (cp.fraction >= 1.0 && next + 1 < plan.waypoints.size()) ++next;
  return next;
}

/// Ends an expired course offset: waypoints passed abeam during the offset
/// are sequenced (up to the exit point) and the flight turns direct to the next one.
inline void expire_offset(FlightSim& f, const FlightPlan& plan) {
  if (f.lateral == LateralMode::CourseOffset && f.offset_remaining <= 0.0) {
    f.lateral = LateralMode::FollowPlan;
    if (f.next_wp < plan.exit_index)
      f.next_wp = std::min(std::max(f.next_wp, initial_next_waypoint(plan, f.state.position())), plan.exit_index);
    if (f.next_wp < plan.waypoints.size() &&
        distance(f.state.position(), plan.waypoints[f.next_wp].position()) > 0.0)
      f.state.chi = bearing(f.state.position(), plan.waypoints[f.next_wp].position());
  }
}

/// Moves a flight forward by `dt` seconds under its current maneuver state.
inline void advance(FlightSim& f, const FlightPlan& plan, double dt, const EnvConfig& cfg) {
  FlightState& s = f.state;
  if (f.target_alt) {
    const double remaining = *f.target_alt - s.alt;
    if (std::abs(remaining) <= std::abs(s.v_speed) * dt) {
      s.alt = *f.target_alt;
      s.v_speed = 0.0;
      f.target_alt.reset();
    } else {
      s.alt += s.v_speed * dt;
    }
  } else {
    s.alt = std::max(0.0, s.alt + s.v_speed * dt);
  }

  const auto& w = plan.waypoints;
  double dist = s.h_speed * dt;
  auto sequence = [&]() {
    if (f.next_wp == plan.exit_index) {
      f.exited = true;
      return;
    }
    if (f.direct_target && *f.direct_target == f.next_wp) f.direct_target.reset();
    ++f.next_wp;
    if (f.next_wp >= w.size()) f.lateral = LateralMode::HoldCourse;
  };

  if (f.lateral == LateralMode::FollowPlan) {
    while (dist > 0.0 && !f.exited && f.lateral == LateralMode::FollowPlan) {
      const Vec2 target = w[f.next_wp].position();
      const double d = distance(s.position(), target);
      if (d <= dist) {
        s.x = target.x;
        s.y = target.y;
        f.flown_m += d;
        dist -= d;
        f.track.push_back(target);
        sequence();
        if (!f.exited && f.next_wp < w.size() && distance(s.position(), w[f.next_wp].position()) > 0.0)
          s.chi = bearing(s.position(), w[f.next_wp].position());
      } else {
        s.chi = bearing(s.position(), target);
        const Vec2 p = s.position() + dist * heading_vector(s.chi);
        s.x = p.x;
        s.y = p.y;
        f.flown_m += dist;
        dist = 0.0;
      }
    }
  }
  if (!f.exited && dist > 0.0) {
    const Vec2 p = s.position() + dist * heading_vector(s.chi);
    s.x = p.x;
    s.y = p.y;
    f.flown_m += dist;
    if (f.next_wp < w.size() && distance(p, w[f.next_wp].position()) < cfg.capture_radius) sequence();
  }
  if (f.lateral == LateralMode::CourseOffset) f.offset_remaining -= dt;
  if (f.speed_remaining > 0.0) f.speed_remaining = std::max(0.0, f.speed_remaining - dt);
  if (f.track.empty() || !(f.track.back() == s.position())) f.track.push_back(s.position());
  s.t += dt;
}

struct StepResult {
  std::vector<double> rewards;       // one per agent, 0 for agents inactive at step start
  std::vector<std::uint8_t> acted;   // 1 when the agent was active at step start
  std::vector<int> alerts;           // per agent, after the step
  std::vector<int> losses;
  bool done{false};
};

/// The multi-agent CD&R environment: deterministic 30 s stepping, detection,
/// observations, edges, adjacency and rewards.
class CdrEnv {
 public:
  explicit CdrEnv(Scenario scenario, EnvConfig cfg = {})
      : scenario_(std::make_shared<const Scenario>(std::move(scenario))), cfg_(cfg) {
    scenario_->validate();
    cfg_.separation.validate();
    cfg_.norm.validate();
    if (cfg_.max_neighbors < 1) throw Error("max_neighbors must be at least 1", "invalid");
    ids_.reserve(scenario_->flights.size());
    for (const auto& f : scenario_->flights) ids_.push_back(f.id());
    reset();
  }

  const GraphObservation& reset() {
    t_ = 0.0;
    flights_.assign(scenario_->flights.size(), FlightSim{});
    for (std::size_t k = 0; k < flights_.size(); ++k) {
      flights_[k].state = scenario_->flights[k].initial;
      if (scenario_->flights[k].entry_time <= 0.0) enter(k);
    }
    refresh();
    return obs_;
  }

  /// Advances by dt. `joint[k]` must be set exactly for active agents.
  StepResult step(std::span<const std::optional<ActionId>> joint) {
    if (joint.size() != flights_.size()) throw Error("step: expected one entry per agent", "invalid");
    for (std::size_t k = 0; k < flights_.size(); ++k) {
      if (joint[k] && !flights_[k].active())
        throw Error("step: action for inactive agent " + ids_[k], "invalid");
      if (!joint[k] && flights_[k].active()) throw Error("step: missing action for agent " + ids_[k], "invalid");
    }
    StepResult out;
    const std::size_t n = flights_.size();
    out.rewards.assign(n, 0.0);
    out.acted.assign(n, 0);
    std::vector<FlightState> prev(n);
    std::vector<double> dchi(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (!flights_[k].active()) continue;
      const FlightPlan& plan = scenario_->flights[k].plan;
      expire_offset(flights_[k], plan);
      prev[k] = flights_[k].state;
      dchi[k] = apply_action(flights_[k], plan, *joint[k], cfg_);
      out.acted[k] = 1;
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (flights_[k].active()) advance(flights_[k], scenario_->flights[k].plan, cfg_.dt, cfg_);
    }
    t_ += cfg_.dt;
    for (std::size_t k = 0; k < n; ++k) {
      const auto& sf = scenario_->flights[k];
      if (!flights_[k].entered && sf.entry_time <= t_) {
        enter(k);
        const double lag = t_ - sf.entry_time;
        if (lag > 0.0) advance(flights_[k], sf.plan, lag, cfg_);
      }
    }
    refresh();
    out.alerts = alerts_;
    out.losses = losses_;
    for (std::size_t k = 0; k < n; ++k) {
      if (!out.acted[k]) continue;
      const FlightPlan& plan = scenario_->flights[k].plan;
      out.rewards[k] = reward(reward_terms(prev[k], flights_[k].state, plan, dchi[k], alerts_[k], losses_[k], cfg_.norm),
                              cfg_.norm);
    }
    out.done = done();
    return out;
  }

  bool done() const {
    if (t_ >= scenario_->duration) return true;
    for (std::size_t k = 0; k < flights_.size(); ++k) {
      if (!flights_[k].exited) return false;
    }
    return true;
  }

  /// Observation of the current state with a frozen neighbourhood: edge
  /// features are recomputed for the given slots, whatever the current events.
  GraphObservation observation_for_slots(std::span<const int> slots) const {
    GraphObservation g = obs_;
    const std::size_t w = g.width();
    if (slots.size() != g.slots.size()) throw Error("observation_for_slots: slot count mismatch", "invalid");
    g.slots.assign(slots.begin(), slots.end());
    for (std::size_t i = 0; i < g.n; ++i) {
      g.edges[i * w] = EdgeVector{};
      for (std::size_t r = 1; r < w; ++r) {
        const int j = g.slots[i * w + r];
        EdgeVector e{};
        if (j >= 0 && flights_[i].active() && flights_[static_cast<std::size_t>(j)].active()) {
          e = edge_vector(pair_geometry_of(i, static_cast<std::size_t>(j)), cfg_.norm);
        }
        g.edges[i * w + r] = e;
      }
    }
    return g;
  }

  CpaGeometry pair_geometry_of(std::size_t i, std::size_t j) const {
    for (const auto& ev : events_) {
      if (ev.involves(i) && ev.involves(j)) return geometry_from(ev, i);
    }
    return pair_geometry(flights_[i].state, scenario_->flights[i].plan, flights_[j].state,
                         scenario_->flights[j].plan, cfg_.separation);
  }

  /// Overwrites an aircraft's kinematic state (track ingestion) and re-runs detection.
  void set_state(std::size_t k, const FlightState& s) {
    FlightSim& f = flights_.at(k);
    f.state = s;
    f.state.t = t_;
    f.target_alt.reset();
    f.track.push_back(s.position());
    f.next_wp = std::max(f.next_wp, initial_next_waypoint(scenario_->flights[k].plan, s.position()));
    f.next_wp = std::min(f.next_wp, scenario_->flights[k].plan.waypoints.size() - 1);
    refresh();
  }

  double time() const { return t_; }
  std::size_t num_agents() const { return flights_.size(); }
  const Scenario& scenario() const { return *scenario_; }
  const EnvConfig& config() const { return cfg_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<FlightSim>& flights() const { return flights_; }
  const FlightPlan& plan(std::size_t k) const { return scenario_->flights.at(k).plan; }
  const std::vector<ConflictEvent>& events() const { return events_; }
  const std::vector<std::vector<std::size_t>>& neighbor_lists() const { return neighbors_; }
  const GraphObservation& observation() const { return obs_; }
  int alerts(std::size_t k) const { return alerts_.at(k); }
  int losses(std::size_t k) const { return losses_.at(k); }

  std::optional<std::size_t> index_of(const std::string& id) const {
    for (std::size_t k = 0; k < ids_.size(); ++k)
      if (ids_[k] == id) return k;
    return std::nullopt;
  }

 private:
  void enter(std::size_t k) {
    FlightSim& f = flights_[k];
    const auto& sf = scenario_->flights[k];
    f.entered = true;
    f.state = sf.initial;
    f.state.t = std::max(sf.entry_time, 0.0);
    f.next_wp = initial_next_waypoint(sf.plan, f.state.position());
    f.lateral = conformance(f.state, sf.plan, cfg_.separation) == Basis::Plan ? LateralMode::FollowPlan
                                                                                : LateralMode::HoldCourse;
    f.track = {f.state.position()};
  }

  void refresh() {
    const std::size_t n = flights_.size();
    std::vector<std::size_t> active;
    std::vector<FlightState> states;
    std::vector<const FlightPlan*> plans;
    for (std::size_t k = 0; k < n; ++k) {
      if (!flights_[k].active()) continue;
      active.push_back(k);
      states.push_back(flights_[k].state);
      states.back().t = t_;
      plans.push_back(&scenario_->flights[k].plan);
    }
    events_ = detect_all(states, std::span<const FlightPlan* const>(plans), cfg_.separation);
    for (auto& ev : events_) {
      ev.i = active[ev.i];
      ev.j = active[ev.j];
    }
    neighbors_ = atcdr::neighbor_lists(events_, ids_);
    alerts_.assign(n, 0);
    losses_.assign(n, 0);
    for (const auto& ev : events_) {
      if (ev.cls == EventClass::Alert) {
        ++alerts_[ev.i];
        ++alerts_[ev.j];
      } else if (ev.cls == EventClass::Loss) {
        ++losses_[ev.i];
        ++losses_[ev.j];
      }
    }
    const std::size_t kk = cfg_.max_neighbors;
    obs_.n = n;
    obs_.k = kk;
    obs_.obs.assign(n, ObservationVector{});
    obs_.edges.assign(n * (kk + 1), EdgeVector{});
    obs_.slots.assign(n * (kk + 1), -1);
    for (std::size_t i = 0; i < n; ++i) {
      obs_.slots[i * (kk + 1)] = static_cast<int>(i);
      if (!flights_[i].active()) continue;
      obs_.obs[i] = build_observation(flights_[i].state, scenario_->flights[i].plan, flights_[i].next_wp, cfg_.norm);
      const auto edges = build_edges(i, neighbors_[i], events_, kk, cfg_.norm);
      std::copy(edges.begin(), edges.end(), obs_.edges.begin() + static_cast<std::ptrdiff_t>(i * (kk + 1)));
      for (std::size_t r = 0; r < std::min(kk, neighbors_[i].size()); ++r)
        obs_.slots[i * (kk + 1) + r + 1] = static_cast<int>(neighbors_[i][r]);
    }
  }

  std::shared_ptr<const Scenario> scenario_;
  EnvConfig cfg_;
  std::vector<std::string> ids_;
  double t_{};
  std::vector<FlightSim> flights_;
  std::vector<ConflictEvent> events_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<int> alerts_;
  std::vector<int> losses_;
  GraphObservation obs_;
};

/// One episode-log line for agent `k` after a step.
inline nlohmann::json episode_log_line(const CdrEnv& env, std::size_t k, std::optional<ActionId> action,
                                       double reward_value) {
  const FlightState& s = env.flights()[k].state;
  std::size_t conflicts = 0;
  for (const auto& ev : env.events())
    if (ev.involves(k) && ev.cls == EventClass::Conflict) ++conflicts;
  return {
      {"t", env.time()},
      {"agent", env.ids()[k]},
      {"state",
       {{"x_m", s.x},
        {"y_m", s.y},
        {"alt_ft", s.alt},
        {"chi_deg", rad_to_deg(s.chi)},
        {"h_speed_mps", s.h_speed},
        {"v_speed_ftps", s.v_speed}}},
      {"action", action ? nlohmann::json(to_index(*action)) : nlohmann::json(nullptr)},
      {"reward", reward_value},
      {"alerts", env.alerts(k)},
      {"losses", env.losses(k)},
      {"conflicts", conflicts},
  };
}

}  // namespace atcdr

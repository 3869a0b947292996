#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atcdr/actions.hpp"
#include "atcdr/conflict.hpp"
#include "atcdr/dgn.hpp"
#include "atcdr/env.hpp"
#include "atcdr/error.hpp"
#include "atcdr/learner.hpp"

namespace atcdr {

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

/// Where a flight's projected track first meets its plan, or comes closest to it.
struct TrackPlanDiscrepancy {
  std::string flight;
  bool intersects{false};
  double time_s{};        // from now, along the projected track
  TrajPoint track_point;  // absolute time in .t
  Vec2 plan_point;
  double horizontal_m{};
  double vertical_ft{};  // projected altitude minus filed altitude at the plan point

  nlohmann::json to_json() const {
    return {{"flight", flight},
            {"reference", intersects ? "intersection" : "closest_point"},
            {"time_s", time_s},
            {"track_point", {{"x_m", track_point.x}, {"y_m", track_point.y}, {"alt_ft", track_point.alt}}},
            {"plan_point", {{"x_m", plan_point.x}, {"y_m", plan_point.y}}},
            {"horizontal_m", horizontal_m},
            {"vertical_ft", vertical_ft}};
  }
};

namespace detail {

inline double segment_param(Vec2 a, Vec2 b, Vec2 p) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  return len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
}

inline double filed_alt(const FlightPlan& plan, std::size_t seg, double f) {
  return plan.waypoints[seg].alt + f * (plan.waypoints[seg + 1].alt - plan.waypoints[seg].alt);
}

}  // namespace detail

/// Compares the flight's current-course projection over its detection
/// horizon with the horizontal profile of its plan.
inline TrackPlanDiscrepancy track_plan_discrepancy(const FlightState& s, const FlightPlan& plan,
                                                   const SeparationParams& sep = {}) {
  if (plan.waypoints.size() < 2) throw Error("track_plan_discrepancy: plan needs two waypoints", "invalid");
  const double h = horizon(s, sep);
  const Vec2 a = s.position();
  const Vec2 b = a + h * s.velocity();
  const Vec2 ab = b - a;
  const auto& w = plan.waypoints;

  struct Candidate {
    double u;  // parameter along the track segment
    double dist;
    std::size_t seg;
    double f;  // parameter along the plan segment
  };
  std::optional<Candidate> hit;
  Candidate near{0.0, std::numeric_limits<double>::infinity(), 0, 0.0};
  auto consider = [&](double u, std::size_t seg, double f) {
    const Vec2 pt = a + u * ab;
    const Vec2 pp = w[seg].position() + f * (w[seg + 1].position() - w[seg].position());
    const double d = distance(pt, pp);
    if (d < near.dist - 1e-9 || (std::abs(d - near.dist) <= 1e-9 && u < near.u)) near = {u, d, seg, f};
  };
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    const Vec2 q0 = w[k].position();
    const Vec2 q1 = w[k + 1].position();
    if (norm(ab) > 0.0 && segments_intersect(a, b, q0, q1)) {
      const Vec2 qs = q1 - q0;
      const double denom = cross(ab, qs);
      double u;
      if (std::abs(denom) > 1e-12 * norm(ab) * std::max(norm(qs), 1.0)) {
        u = cross(q0 - a, qs) / denom;
      } else {
        u = std::min(detail::segment_param(a, b, q0), detail::segment_param(a, b, q1));
      }
      u = std::clamp(u, 0.0, 1.0);
      const double f = detail::segment_param(q0, q1, a + u * ab);
      if (!hit || u < hit->u) hit = Candidate{u, 0.0, k, f};
    }
    consider(0.0, k, detail::segment_param(q0, q1, a));
    consider(1.0, k, detail::segment_param(q0, q1, b));
    consider(detail::segment_param(a, b, q0), k, 0.0);
    consider(detail::segment_param(a, b, q1), k, 1.0);
  }
  const Candidate c = hit ? *hit : near;
  TrackPlanDiscrepancy out;
  out.flight = s.flight_id;
  out.intersects = hit.has_value();
  out.time_s = c.u * h;
  const Vec2 pt = a + c.u * ab;
  out.track_point = {pt.x, pt.y, s.alt + s.v_speed * out.time_s, s.t + out.time_s};
  out.plan_point = w[c.seg].position() + c.f * (w[c.seg + 1].position() - w[c.seg].position());
  out.horizontal_m = hit ? 0.0 : c.dist;
  out.vertical_ft = out.track_point.alt - detail::filed_alt(plan, c.seg, c.f);
  return out;
}

struct AircraftPosition {
  std::string flight;
  TrajPoint point;

  nlohmann::json to_json() const {
    return {{"flight", flight}, {"x_m", point.x}, {"y_m", point.y}, {"alt_ft", point.alt}};
  }
};

struct DistanceToCpa {
  std::string flight;
  double horizontal_m{};
  double vertical_ft{};  // CPA altitude minus current altitude
  double time_s{};

  nlohmann::json to_json() const {
    return {{"flight", flight}, {"horizontal_m", horizontal_m}, {"vertical_ft", vertical_ft}, {"time_s", time_s}};
  }
};

struct ConflictPoint {
  double time_s{};  // from now
  std::array<AircraftPosition, 2> positions;

  nlohmann::json to_json() const {
    return {{"time_s", time_s}, {"positions", {positions[0].to_json(), positions[1].to_json()}}};
  }
};

/// Situation-awareness payload for one detected event.
struct ConflictReport {
  std::string conflict_id;  // "<id_i>--<id_j>"
  EventClass cls{EventClass::Conflict};
  double time_s{};
  std::array<TrackPlanDiscrepancy, 2> track_plan_discrepancy;  // (a)
  std::array<Basis, 2> detection_basis{};                      // (b)
  CpaGeometry cpa_geometry;                                    // (c), seen from the first aircraft
  std::array<DistanceToCpa, 2> distance_to_cpa;                // (d)
  std::optional<ConflictPoint> first_conflict_point;           // (e)
  std::optional<ConflictPoint> last_conflict_point;
  double current_horizontal_m{};  // (f)
  double current_vertical_ft{};
  std::array<VerticalPhase, 2> vertical_phase{};  // (g)
  std::array<std::string, 2> flights;

  nlohmann::json to_json() const {
    const CpaGeometry& g = cpa_geometry;
    auto point = [](const std::optional<ConflictPoint>& p) { return p ? p->to_json() : nlohmann::json(nullptr); };
    return {
        {"conflict_id", conflict_id},
        {"class", to_string(cls)},
        {"time_s", time_s},
        {"track_plan_discrepancy", {track_plan_discrepancy[0].to_json(), track_plan_discrepancy[1].to_json()}},
        {"detection_basis", {{flights[0], to_string(detection_basis[0])}, {flights[1], to_string(detection_basis[1])}}},
        {"cpa_geometry",
         {{"t_cpa_s", g.t_cpa},
          {"d_h_cpa_m", g.d_h_cpa},
          {"d_v_cpa_ft", g.d_v_cpa},
          {"a_ij_rad", g.a_ij},
          {"b_ij_rad", g.b_ij},
          {"d_cp_m", optional_json(g.d_cp)},
          {"t_cp_s", optional_json(g.t_cp)}}},
        {"distance_to_cpa", {distance_to_cpa[0].to_json(), distance_to_cpa[1].to_json()}},
        {"conflict_points", {{"first", point(first_conflict_point)}, {"last", point(last_conflict_point)}}},
        {"current_distance", {{"horizontal_m", current_horizontal_m}, {"vertical_ft", current_vertical_ft}}},
        {"vertical_phase", {{flights[0], to_string(vertical_phase[0])}, {flights[1], to_string(vertical_phase[1])}}},
    };
  }
};

inline std::string conflict_id(const std::string& a, const std::string& b) { return a + "--" + b; }

/// Builds the report for `ev` from the pair's current states and plans.
inline ConflictReport conflict_report(const ConflictEvent& ev, const FlightState& si, const FlightPlan& plan_i,
                                      const FlightState& sj, const FlightPlan& plan_j, const SeparationParams& sep = {}) {
  ConflictReport r;
  r.conflict_id = conflict_id(ev.id_i, ev.id_j);
  r.flights = {ev.id_i, ev.id_j};
  r.cls = ev.cls;
  r.time_s = si.t;
  r.track_plan_discrepancy = {track_plan_discrepancy(si, plan_i, sep), track_plan_discrepancy(sj, plan_j, sep)};
  r.detection_basis = {ev.basis_i, ev.basis_j};
  r.cpa_geometry = ev.geometry;
  const CpaGeometry& g = ev.geometry;
  r.distance_to_cpa = {DistanceToCpa{ev.id_i, distance(si.position(), g.cpa_i.xy()), g.cpa_i.alt - si.alt, g.t_cpa},
                       DistanceToCpa{ev.id_j, distance(sj.position(), g.cpa_j.xy()), g.cpa_j.alt - sj.alt, g.t_cpa}};
  const Projection pi = project_trajectory(si, plan_i, sep);
  const Projection pj = project_trajectory(sj, plan_j, sep);
  auto at = [&](const std::optional<double>& dt) -> std::optional<ConflictPoint> {
    if (!dt) return std::nullopt;
    const double t = si.t + *dt;
    return ConflictPoint{*dt, {AircraftPosition{ev.id_i, position_at(pi, t)}, AircraftPosition{ev.id_j, position_at(pj, t)}}};
  };
  r.first_conflict_point = at(g.first_conflict_t);
  r.last_conflict_point = at(g.last_conflict_t);
  r.current_horizontal_m = g.d_h_now;
  r.current_vertical_ft = g.d_v_now;
  r.vertical_phase = {ev.phase_i, ev.phase_j};
  return r;
}

inline ConflictReport conflict_report(const CdrEnv& env, const ConflictEvent& ev) {
  FlightState si = env.flights().at(ev.i).state;
  FlightState sj = env.flights().at(ev.j).state;
  si.t = sj.t = env.time();
  return conflict_report(ev, si, env.plan(ev.i), sj, env.plan(ev.j), env.config().separation);
}

/// Finds the current event between two flights by id, in either order.
inline std::optional<ConflictEvent> find_event(const CdrEnv& env, const std::string& a, const std::string& b) {
  for (const auto& ev : env.events())
    if ((ev.id_i == a && ev.id_j == b) || (ev.id_i == b && ev.id_j == a)) return ev;
  return std::nullopt;
}

struct ExitDeviation {
  double horizontal_m{};
  double vertical_ft{};  // altitude minus exit-point altitude

  nlohmann::json to_json() const { return {{"horizontal_m", horizontal_m}, {"vertical_ft", vertical_ft}}; }
};

/// Deviation from the exit point implied by the flight's state: zero
/// laterally while following the plan, otherwise the miss distance of its
/// current course (or of its position once it has left).
inline ExitDeviation exit_deviation(const FlightSim& f, const FlightPlan& plan) {
  const Waypoint& exit = plan.exit_point();
  ExitDeviation d;
  d.vertical_ft = (f.target_alt ? *f.target_alt : f.state.alt) - exit.alt;
  const Vec2 p = f.state.position();
  if (f.exited) {
    d.horizontal_m = distance(p, exit.position());
  } else if (f.lateral != LateralMode::FollowPlan) {
    const Vec2 u = heading_vector(f.state.chi);
    const Vec2 r = exit.position() - p;
    d.horizontal_m = dot(r, u) > 0.0 ? std::abs(cross(u, r)) : norm(r);
  }
  return d;
}

/// Event between the acting flight and another one, first seen during a rollout.
struct InducedEvent {
  std::string with;
  EventClass cls{EventClass::Conflict};
  double time_s{};  // from the start of the rollout
  ConflictReport report;

  nlohmann::json to_json() const {
    return {{"with", with}, {"class", to_string(cls)}, {"time_s", time_s}, {"report", report.to_json()}};
  }
};

/// Foreseen effects of one action against the NoAction baseline.
struct WhatIf {
  std::string flight;
  ActionId action{kNoAction};
  double horizon_s{};
  double added_nm{};
  double course_deviation_deg{};
  std::vector<InducedEvent> induced_conflicts;      // pairs without any event in the baseline
  std::vector<InducedEvent> induced_losses_alerts;  // losses/alerts absent from the baseline
  ExitDeviation exit_deviation;

  nlohmann::json to_json() const {
    nlohmann::json conflicts = nlohmann::json::array();
    for (const auto& e : induced_conflicts) conflicts.push_back(e.to_json());
    nlohmann::json la = nlohmann::json::array();
    for (const auto& e : induced_losses_alerts) la.push_back({{"with", e.with}, {"class", to_string(e.cls)}, {"time_s", e.time_s}});
    return {{"flight", flight},
            {"action", to_index(action)},
            {"label", action_label(action)},
            {"horizon_s", horizon_s},
            {"added_nm", added_nm},
            {"course_deviation_deg", course_deviation_deg},
            {"induced_conflicts", conflicts},
            {"induced_losses_alerts", la},
            {"exit_point_deviation", exit_deviation.to_json()}};
  }
};

namespace detail {

struct PairTrace {
  std::optional<InducedEvent> first_any;
  std::optional<InducedEvent> first_alert;
  std::optional<InducedEvent> first_loss;
};

struct Rollout {
  CdrEnv env;
  std::vector<double> chi;
  std::map<std::size_t, PairTrace> pairs;  // keyed by the other flight
};

inline Rollout rollout(const CdrEnv& start, std::size_t agent, ActionId action, std::size_t steps) {
  Rollout r{start, {}, {}};
  const double t0 = start.time();
  for (std::size_t s = 0; s < steps && !r.env.done(); ++s) {
    std::vector<std::optional<ActionId>> joint(r.env.num_agents());
    for (std::size_t k = 0; k < joint.size(); ++k)
      if (r.env.flights()[k].active()) joint[k] = kNoAction;
    if (s == 0 && joint[agent]) joint[agent] = action;
    r.env.step(joint);
    r.chi.push_back(r.env.flights()[agent].state.chi);
    for (const auto& ev : r.env.events()) {
      if (!ev.involves(agent)) continue;
      PairTrace& tr = r.pairs[ev.other(agent)];
      auto make = [&] {
        return InducedEvent{r.env.ids()[ev.other(agent)], ev.cls, r.env.time() - t0, conflict_report(r.env, ev)};
      };
      if (!tr.first_any) tr.first_any = make();
      if (ev.cls == EventClass::Alert && !tr.first_alert) tr.first_alert = make();
      if (ev.cls == EventClass::Loss && !tr.first_loss) tr.first_loss = make();
    }
  }
  return r;
}

}  // namespace detail

/// Number of steps covering the agent's detection horizon.
inline std::size_t what_if_steps(const CdrEnv& env, std::size_t agent) {
  const double h = horizon(env.flights().at(agent).state, env.config().separation);
  return static_cast<std::size_t>(std::ceil(h / env.config().dt - 1e-9));
}

/// Simulates `action` for `agent` with every other flight nominal over the
/// agent's detection horizon and compares with the NoAction rollout. The
/// environment passed in is not modified.
inline WhatIf what_if(const CdrEnv& env, std::size_t agent, ActionId action, std::optional<std::size_t> steps = {}) {
  if (agent >= env.num_agents()) throw Error("what_if: unknown agent", "not_found");
  if (!env.flights()[agent].active()) throw Error("what_if: agent " + env.ids()[agent] + " is not active", "invalid");
  (void)action_of(action);
  const std::size_t n = steps.value_or(what_if_steps(env, agent));
  const detail::Rollout act = detail::rollout(env, agent, action, n);
  const detail::Rollout base = detail::rollout(env, agent, kNoAction, n);

  WhatIf w;
  w.flight = env.ids()[agent];
  w.action = action;
  w.horizon_s = act.env.time() - env.time();
  w.added_nm = additional_nm(act.env, agent) - additional_nm(base.env, agent);
  for (std::size_t s = 0; s < std::min(act.chi.size(), base.chi.size()); ++s)
    w.course_deviation_deg = std::max(w.course_deviation_deg, std::abs(wrap_pi(act.chi[s] - base.chi[s])) * 180.0 / kPi);
  std::vector<std::size_t> existing;
  for (const auto& ev : env.events())
    if (ev.involves(agent)) existing.push_back(ev.other(agent));
  for (const auto& [other, tr] : act.pairs) {
    const auto b = base.pairs.find(other);
    const detail::PairTrace* bt = b == base.pairs.end() ? nullptr : &b->second;
    const bool was_there = std::find(existing.begin(), existing.end(), other) != existing.end();
    if (!was_there && !bt && tr.first_any) w.induced_conflicts.push_back(*tr.first_any);
    if (tr.first_loss && !(bt && bt->first_loss)) {
      w.induced_losses_alerts.push_back(*tr.first_loss);
    } else if (tr.first_alert && !(bt && (bt->first_alert || bt->first_loss))) {
      w.induced_losses_alerts.push_back(*tr.first_alert);
    }
  }
  w.exit_deviation = exit_deviation(act.env.flights()[agent], env.plan(agent));
  return w;
}

struct RankedAction {
  std::size_t rank{};  // 1 = best
  ActionId action{kNoAction};
  double q{};
  std::optional<WhatIf> what_if;

  nlohmann::json to_json() const {
    return {{"rank", rank},
            {"action", to_index(action)},
            {"label", action_label(action)},
            {"q", q},
            {"what_if", what_if ? what_if->to_json() : nlohmann::json(nullptr)}};
  }
};

/// Actions by descending Q, ties by action index. `what_ifs`, when given,
/// holds one entry per action index.
inline std::vector<RankedAction> rank_actions(std::span<const double> q, std::span<const WhatIf> what_ifs = {}) {
  if (q.empty()) throw Error("rank_actions: empty Q row", "invalid");
  if (!what_ifs.empty() && what_ifs.size() != q.size())
    throw Error("rank_actions: one what-if per action required", "invalid");
  std::vector<std::size_t> order(q.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
  std::vector<RankedAction> out;
  for (std::size_t r = 0; r < order.size(); ++r) {
    RankedAction ra{r + 1, action_id(order[r]), q[order[r]], std::nullopt};
    if (!what_ifs.empty()) ra.what_if = what_ifs[order[r]];
    out.push_back(std::move(ra));
  }
  return out;
}

struct HeatmapEntry {
  std::size_t agent{};
  std::string flight;
  double weight{};

  nlohmann::json to_json() const { return {{"flight", flight}, {"weight", weight}}; }
};

/// Second-layer attention of `agent` over its neighbours, averaged over
/// heads; the self slot and padded slots are dropped and the rest renormalised.
inline std::vector<HeatmapEntry> attention_heatmap(const DgnModel& model, const GraphObservation& g, std::size_t agent,
                                                   std::span<const std::string> ids = {}) {
  if (agent >= g.n) throw Error("attention_heatmap: unknown agent", "not_found");
  if (g.neighbor_count(agent) == 0) throw Error("attention_heatmap: agent has no neighbours", "no_neighbors");
  const DgnForward f = q_forward(model.cfg, model.online, GraphBatch::from(g));
  std::vector<HeatmapEntry> out;
  double total = 0.0;
  for (std::size_t r = 1; r < g.width(); ++r) {
    const int j = g.slot(agent, r);
    if (j < 0) continue;
    double w = 0.0;
    for (std::size_t h = 0; h < model.cfg.heads; ++h) w += f.attention(2, agent, h, r, model.cfg.heads);
    w /= static_cast<double>(model.cfg.heads);
    const auto ju = static_cast<std::size_t>(j);
    out.push_back({ju, ju < ids.size() ? ids[ju] : std::to_string(ju), w});
    total += w;
  }
  for (auto& e : out) e.weight = total > 0.0 ? e.weight / total : 1.0 / static_cast<double>(out.size());
  return out;
}

/// Resolution payload for one agent: the chosen action, its foreseen
/// effects, the attention heatmap and the ranked alternatives.
struct ResolutionReport {
  std::string flight;
  ActionId action{kNoAction};
  double duration_s{};
  WhatIf effects;
  std::optional<std::vector<HeatmapEntry>> attention_heatmap;
  std::vector<RankedAction> alternatives;

  nlohmann::json to_json() const {
    nlohmann::json induced = nlohmann::json::array();
    for (const auto& e : effects.induced_conflicts) induced.push_back(e.to_json());
    nlohmann::json la = nlohmann::json::array();
    for (const auto& e : effects.induced_losses_alerts)
      la.push_back({{"with", e.with}, {"class", to_string(e.cls)}, {"time_s", e.time_s}});
    nlohmann::json heat = nullptr;
    if (attention_heatmap) {
      heat = nlohmann::json::array();
      for (const auto& e : *attention_heatmap) heat.push_back(e.to_json());
    }
    nlohmann::json alts = nlohmann::json::array();
    for (const auto& a : alternatives) alts.push_back(a.to_json());
    return {{"flight", flight},
            {"action", {{"id", to_index(action)}, {"label", action_label(action)}, {"duration_s", duration_s}}},
            {"added_nm", effects.added_nm},
            {"course_deviation_deg", effects.course_deviation_deg},
            {"induced_conflicts", induced},
            {"induced_losses_alerts", la},
            {"attention_heatmap", heat},
            {"exit_point_deviation", effects.exit_deviation.to_json()},
            {"alternatives", alts}};
  }
};

/// Seconds an action takes to execute: its duration for course and speed
/// changes, the climb or descent time for level changes, zero otherwise.
inline double action_duration_s(ActionId id) {
  const Action& a = action_of(id);
  if (a.has_duration()) return a.duration;
  if (a.kind == ActionKind::FlightLevelUp || a.kind == ActionKind::FlightLevelDown) return kFeetPerLevel / kClimbRate;
  return 0.0;
}

/// `chosen` defaults to the greedy action. What-ifs are computed for the
/// `with_what_if` best-ranked alternatives (all of them by default).
inline ResolutionReport resolution_report(const DgnModel& model, const CdrEnv& env, std::size_t agent,
                                          std::optional<ActionId> chosen = {},
                                          std::size_t with_what_if = kNumActions) {
  if (agent >= env.num_agents()) throw Error("resolution_report: unknown agent", "not_found");
  const Matrix q = model.q_values(env.observation());
  const Eigen::RowVectorXd row = q.row(static_cast<Eigen::Index>(agent));
  const std::span<const double> qs(row.data(), static_cast<std::size_t>(row.size()));
  ResolutionReport r;
  r.flight = env.ids()[agent];
  r.alternatives = rank_actions(qs);
  r.action = chosen.value_or(r.alternatives.front().action);
  r.duration_s = action_duration_s(r.action);
  r.effects = what_if(env, agent, r.action);
  for (std::size_t k = 0; k < std::min(with_what_if, r.alternatives.size()); ++k) {
    RankedAction& a = r.alternatives[k];
    a.what_if = a.action == r.action ? r.effects : what_if(env, agent, a.action);
  }
  if (env.observation().neighbor_count(agent) > 0)
    r.attention_heatmap = attention_heatmap(model, env.observation(), agent, env.ids());
  return r;
}

}  // namespace atcdr

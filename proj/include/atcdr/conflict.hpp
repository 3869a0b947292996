#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "atcdr/error.hpp"
#include "atcdr/geo.hpp"

namespace atcdr {

enum class Basis : std::uint8_t { Plan, Track };
enum class EventClass : std::uint8_t { Loss, Alert, Conflict };
enum class VerticalPhase : std::uint8_t { Level, Climb, Descend };

inline const char* to_string(Basis b) { return b == Basis::Plan ? "plan" : "track"; }
inline const char* to_string(EventClass c) {
  switch (c) {
    case EventClass::Loss: return "loss";
    case EventClass::Alert: return "alert";
    case EventClass::Conflict: return "conflict";
  }
  return "?";
}
inline const char* to_string(VerticalPhase p) {
  switch (p) {
    case VerticalPhase::Level: return "level";
    case VerticalPhase::Climb: return "climb";
    case VerticalPhase::Descend: return "descend";
  }
  return "?";
}

inline VerticalPhase vertical_phase(double v_speed) {
  if (v_speed > 0.0) return VerticalPhase::Climb;
  if (v_speed < 0.0) return VerticalPhase::Descend;
  return VerticalPhase::Level;
}

/// Separation minima and detection thresholds.
struct SeparationParams {
  double h_min = 9260.0;          // m, 5 NM
  double v_min_low = 1000.0;      // ft, below the band boundary
  double v_min_high = 2000.0;     // ft, at or above the band boundary
  bool rvsm = false;              // moves the band boundary from FL290 to FL410
  double alert_horizon = 10.0;    // s
  double d_h = 2000.0;            // m, plan conformance distance
  double c_h = deg_to_rad(20.0);  // rad, plan conformance course difference
  double t_h_level = 600.0;       // s, projection horizon for level flight
  double vcpa_window = 60.0;      // s, search half-width around the vertical CPA

  double band_boundary() const { return rvsm ? 41000.0 : 29000.0; }

  /// Vertical minimum applicable to a pair whose lower aircraft is at `lower_alt`.
  double vertical_minimum(double lower_alt) const {
    return lower_alt < band_boundary() ? v_min_low : v_min_high;
  }

  void validate() const {
    if (!(h_min > 0 && v_min_low > 0 && v_min_high > 0 && alert_horizon > 0 && d_h > 0 && c_h > 0 &&
          t_h_level > 0 && vcpa_window > 0))
      throw Error("separation parameters must be strictly positive", "invalid");
  }
};

struct TrajPoint {
  double x{};
  double y{};
  double alt{};
  double t{};

  Vec2 xy() const { return {x, y}; }
};

/// Straight constant-velocity piece of a projected trajectory.
struct ProjectionSegment {
  TrajPoint p0;
  TrajPoint p1;
  Basis basis{Basis::Track};

  double duration() const { return p1.t - p0.t; }

  Vec2 velocity() const {
    const double dt = duration();
    return dt > 0.0 ? (1.0 / dt) * (p1.xy() - p0.xy()) : Vec2{};
  }

  double climb_rate() const {
    const double dt = duration();
    return dt > 0.0 ? (p1.alt - p0.alt) / dt : 0.0;
  }

  TrajPoint at(double t) const {
    const double dt = duration();
    const double f = dt > 0.0 ? std::clamp((t - p0.t) / dt, 0.0, 1.0) : 0.0;
    return {p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y), p0.alt + f * (p1.alt - p0.alt), t};
  }

  double course() const {
    const Vec2 d = p1.xy() - p0.xy();
    return (d.x == 0.0 && d.y == 0.0) ? 0.0 : bearing(p0.xy(), p1.xy());
  }
};

using Projection = std::vector<ProjectionSegment>;

/// Position on a projection at absolute time `t` (clamped to its time span).
inline TrajPoint position_at(const Projection& proj, double t) {
  for (const auto& s : proj)
    if (t <= s.p1.t) return s.at(t);
  return proj.back().at(t);
}

inline const ProjectionSegment& segment_at(const Projection& proj, double t) {
  for (const auto& s : proj)
    if (t <= s.p1.t) return s;
  return proj.back();
}

/// Projection horizon: time to the next flight level boundary when climbing or
/// descending, otherwise the level-flight horizon.
inline double horizon(const FlightState& s, const SeparationParams& p = {}) {
  if (s.v_speed == 0.0) return p.t_h_level;
  const double level = kFeetPerLevel;
  double dist;
  if (s.v_speed > 0.0) {
    dist = (std::floor(s.alt / level) + 1.0) * level - s.alt;
  } else {
    dist = s.alt - (std::ceil(s.alt / level) - 1.0) * level;
  }
  return dist / std::abs(s.v_speed);
}

/// Decides whether a flight is following its plan (Plan) or must be projected
/// along its current track (Track).
inline Basis conformance(const FlightState& s, const FlightPlan& plan, const SeparationParams& p = {}) {
  if (plan.waypoints.empty()) throw Error("conformance: empty plan", "invalid");
  if (plan.waypoints.size() == 1) {
    return distance(s.position(), plan.waypoints[0].position()) < p.d_h ? Basis::Plan : Basis::Track;
  }
  const PlanProjection cp = closest_point_on_plan(plan, s.position());
  if (cp.distance < p.d_h && std::abs(wrap_pi(s.chi - cp.chi)) < p.c_h) return Basis::Plan;

  const Vec2 a = s.position();
  const Vec2 b = a + horizon(s, p) * s.velocity();
  const auto& w = plan.waypoints;
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    if (segments_intersect(a, b, w[k].position(), w[k + 1].position())) return Basis::Plan;
  }
  return Basis::Track;
}

/// Nominal trajectory projection over the flight's horizon. Plan-conformant
/// flights are walked along the plan from the closest plan point; others keep
/// their current course. Both keep current horizontal and vertical speeds.
inline Projection project_trajectory(const FlightState& s, const FlightPlan& plan, const SeparationParams& p = {}) {
  const double h = horizon(s, p);
  const Basis basis = conformance(s, plan, p);
  const double t0 = s.t;
  auto alt_at = [&](double t) { return s.alt + s.v_speed * (t - t0); };

  if (s.h_speed <= 0.0) {
    return {ProjectionSegment{{s.x, s.y, s.alt, t0}, {s.x, s.y, alt_at(t0 + h), t0 + h}, basis}};
  }
  if (basis == Basis::Track || plan.waypoints.size() < 2) {
    const Vec2 end = s.position() + h * s.velocity();
    return {ProjectionSegment{{s.x, s.y, s.alt, t0}, {end.x, end.y, alt_at(t0 + h), t0 + h}, Basis::Track}};
  }

  Projection out;
  const auto& w = plan.waypoints;
  const PlanProjection cp = closest_point_on_plan(plan, s.position());
  Vec2 cur = cp.point;
  double t = t0;
  double remaining = s.h_speed * h;
  std::size_t next = cp.segment + 1;
  double last_course = cp.chi;
  while (remaining > 0.0 && next < w.size()) {
    const Vec2 target = w[next].position();
    const double len = distance(cur, target);
    if (len <= 1e-9) {
      ++next;
      continue;
    }
    last_course = bearing(cur, target);
    const double step = std::min(len, remaining);
    const Vec2 end = cur + (step / len) * (target - cur);
    const double t_end = (step == remaining) ? t0 + h : t + step / s.h_speed;
    out.push_back({{cur.x, cur.y, alt_at(t), t}, {end.x, end.y, alt_at(t_end), t_end}, Basis::Plan});
    remaining -= step;
    cur = end;
    t = t_end;
    ++next;
    if (step < len) break;
  }
  if (remaining > 1e-9) {
    // Plan exhausted: continue straight along the final plan course.
    const Vec2 end = cur + remaining * heading_vector(last_course);
    out.push_back({{cur.x, cur.y, alt_at(t), t}, {end.x, end.y, alt_at(t0 + h), t0 + h}, Basis::Plan});
  }
  if (out.empty()) {
    out.push_back({{cur.x, cur.y, s.alt, t0}, {cur.x, cur.y, alt_at(t0 + h), t0 + h}, Basis::Plan});
  }
  return out;
}

/// Horizontal closest point of approach of two constant-velocity segments.
struct HorizontalCpa {
  double t{};  // absolute time
  double d{};  // meters
};

/// Constant-velocity minimiser t = -(dp.dv)/|dv|^2 restricted to the temporal
/// overlap of both segments, optionally narrowed to [lo, hi]. Returns d = +inf
/// when the segments do not overlap in time.
inline HorizontalCpa cpa_horizontal(const ProjectionSegment& a, const ProjectionSegment& b,
                                    double lo = -std::numeric_limits<double>::infinity(),
                                    double hi = std::numeric_limits<double>::infinity()) {
  const double ta = std::max({a.p0.t, b.p0.t, lo});
  const double tb = std::min({a.p1.t, b.p1.t, hi});
  if (ta > tb) return {ta, std::numeric_limits<double>::infinity()};
  const Vec2 dp = b.at(ta).xy() - a.at(ta).xy();
  const Vec2 dv = b.velocity() - a.velocity();
  const double vv = dot(dv, dv);
  if (vv <= 1e-18) return {ta, norm(dp)};
  const double tau = std::clamp(-dot(dp, dv) / vv, 0.0, tb - ta);
  return {ta + tau, norm(dp + tau * dv)};
}

/// Sub-interval of [lo, hi] where the horizontal distance of two segments is
/// strictly below `h_min`, if any.
inline std::optional<std::pair<double, double>> horizontal_violation(const ProjectionSegment& a,
                                                                     const ProjectionSegment& b, double lo,
                                                                     double hi, double h_min) {
  const double ta = std::max({a.p0.t, b.p0.t, lo});
  const double tb = std::min({a.p1.t, b.p1.t, hi});
  if (ta > tb) return std::nullopt;
  const Vec2 dp = b.at(ta).xy() - a.at(ta).xy();
  const Vec2 dv = b.velocity() - a.velocity();
  const double A = dot(dv, dv);
  const double B = 2.0 * dot(dp, dv);
  const double C = dot(dp, dp) - h_min * h_min;
  if (A <= 1e-18) {
    if (C < 0.0) return std::make_pair(ta, tb);
    return std::nullopt;
  }
  const double disc = B * B - 4.0 * A * C;
  if (disc <= 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double r0 = (-B - sq) / (2.0 * A);
  const double r1 = (-B + sq) / (2.0 * A);
  const double s0 = std::max(ta, ta + r0);
  const double s1 = std::min(tb, ta + r1);
  if (s0 >= s1 && !(s0 == s1 && C < 0.0)) return std::nullopt;
  return std::make_pair(s0, s1);
}

/// Geometry of a pair, seen from aircraft i. Times are relative to "now".
struct CpaGeometry {
  double t_cpa{};
  double d_h_cpa{};
  double d_v_cpa{};
  double a_ij{};  // intersection angle, course of j relative to course of i
  double b_ij{};  // bearing from j to i at the CPA, relative to j's course
  std::optional<double> d_cp;  // absent when courses never cross ahead
  std::optional<double> t_cp;
  std::optional<double> first_conflict_t;
  std::optional<double> last_conflict_t;
  double d_h_now{};
  double d_v_now{};
  TrajPoint cpa_i;  // positions at the CPA (absolute time in .t)
  TrajPoint cpa_j;
};

struct ConflictEvent {
  std::size_t i{};
  std::size_t j{};
  std::string id_i;
  std::string id_j;
  EventClass cls{EventClass::Conflict};
  CpaGeometry geometry;     // seen from i
  CpaGeometry geometry_ji;  // seen from j
  Basis basis_i{Basis::Plan};
  Basis basis_j{Basis::Plan};
  VerticalPhase phase_i{VerticalPhase::Level};
  VerticalPhase phase_j{VerticalPhase::Level};

  bool involves(std::size_t k) const { return i == k || j == k; }
  std::size_t other(std::size_t k) const { return k == i ? j : i; }
};

namespace detail {

struct Crossing {
  std::optional<double> d_cp;
  std::optional<double> t_cp;
};

inline Crossing crossing_point(const FlightState& si, const FlightState& sj) {
  const Vec2 ui = heading_vector(si.chi);
  const Vec2 uj = heading_vector(sj.chi);
  const double denom = cross(ui, uj);
  if (std::abs(denom) < 1e-9) return {};
  const Vec2 r = sj.position() - si.position();
  const double s_i = cross(r, uj) / denom;
  const double s_j = cross(r, ui) / denom;
  std::optional<double> best;
  if (si.h_speed > 0.0 && s_i >= 0.0) best = s_i / si.h_speed;
  if (sj.h_speed > 0.0 && s_j >= 0.0) {
    const double t = s_j / sj.h_speed;
    if (!best || t < *best) best = t;
  }
  if (!best) return {};
  const Vec2 pi = si.position() + *best * si.velocity();
  const Vec2 pj = sj.position() + *best * sj.velocity();
  return {distance(pi, pj), best};
}

struct Window {
  double lo{};
  double hi{};
  bool empty() const { return lo > hi; }
};

/// Absolute-time window where the pair violates the vertical minimum, per the
/// level/level and vertical-CPA cases.
inline Window vertical_window(const FlightState& si, const FlightState& sj, double now, double t_end,
                              const SeparationParams& p) {
  const double dalt0 = si.alt - sj.alt;
  const double dvs = si.v_speed - sj.v_speed;
  if (si.v_speed == 0.0 && sj.v_speed == 0.0) {
    if (std::abs(dalt0) < p.vertical_minimum(std::min(si.alt, sj.alt))) return {now, t_end};
    return {1.0, 0.0};
  }
  const double span = t_end - now;
  const double tau_v = dvs == 0.0 ? 0.0 : std::clamp(-dalt0 / dvs, 0.0, span);
  const double dalt_v = dalt0 + dvs * tau_v;
  const double lower = std::min(si.alt + si.v_speed * tau_v, sj.alt + sj.v_speed * tau_v);
  const double vmin = p.vertical_minimum(lower);
  if (!(std::abs(dalt_v) < vmin)) return {1.0, 0.0};
  double lo = 0.0;
  double hi = span;
  if (dvs != 0.0) {
    const double r0 = (-vmin - dalt0) / dvs;
    const double r1 = (vmin - dalt0) / dvs;
    lo = std::max(lo, std::min(r0, r1));
    hi = std::min(hi, std::max(r0, r1));
  }
  lo = std::max(lo, tau_v - p.vcpa_window);
  hi = std::min(hi, tau_v + p.vcpa_window);
  return {now + lo, now + hi};
}

struct CpaSearch {
  HorizontalCpa cpa{0.0, std::numeric_limits<double>::infinity()};
  std::optional<double> first;
  std::optional<double> last;
};

inline CpaSearch search(const Projection& pi, const Projection& pj, Window w, double h_min) {
  CpaSearch out;
  for (const auto& a : pi) {
    for (const auto& b : pj) {
      const HorizontalCpa c = cpa_horizontal(a, b, w.lo, w.hi);
      if (c.d < out.cpa.d) out.cpa = c;
      if (auto v = horizontal_violation(a, b, w.lo, w.hi, h_min)) {
        if (!out.first || v->first < *out.first) out.first = v->first;
        if (!out.last || v->second > *out.last) out.last = v->second;
      }
    }
  }
  return out;
}

inline CpaGeometry make_geometry(const FlightState& si, const FlightState& sj, const Projection& pi,
                                 const Projection& pj, const CpaSearch& found, double now) {
  CpaGeometry g;
  const double t = found.cpa.t;
  g.t_cpa = t - now;
  g.cpa_i = position_at(pi, t);
  g.cpa_j = position_at(pj, t);
  g.d_h_cpa = distance(g.cpa_i.xy(), g.cpa_j.xy());
  g.d_v_cpa = std::abs(g.cpa_i.alt - g.cpa_j.alt);
  g.a_ij = wrap_two_pi(sj.chi - si.chi);
  const double chi_j = segment_at(pj, t).duration() > 0.0 && sj.h_speed > 0.0 ? segment_at(pj, t).course() : sj.chi;
  g.b_ij = g.d_h_cpa > 1e-9 ? wrap_two_pi(bearing(g.cpa_j.xy(), g.cpa_i.xy()) - chi_j) : 0.0;
  const Crossing c = crossing_point(si, sj);
  g.d_cp = c.d_cp;
  g.t_cp = c.t_cp;
  if (found.first) g.first_conflict_t = *found.first - now;
  if (found.last) g.last_conflict_t = *found.last - now;
  g.d_h_now = distance(si.position(), sj.position());
  g.d_v_now = std::abs(si.alt - sj.alt);
  return g;
}

inline double projection_end(const Projection& p) { return p.back().p1.t; }

}  // namespace detail

/// Pair detection on precomputed projections; see detect_pair.
inline std::optional<ConflictEvent> detect_projected(const FlightState& si, const Projection& pi,
                                                     const FlightState& sj, const Projection& pj,
                                                     const SeparationParams& p) {
  const double now = si.t;
  const double t_end = std::min(detail::projection_end(pi), detail::projection_end(pj));
  const double d_h_now = distance(si.position(), sj.position());
  const double d_v_now = std::abs(si.alt - sj.alt);
  const bool loss = d_h_now < p.h_min && d_v_now < p.vertical_minimum(std::min(si.alt, sj.alt));

  const detail::Window vw = detail::vertical_window(si, sj, now, t_end, p);
  detail::CpaSearch found;
  bool conflict = false;
  if (!vw.empty()) {
    found = detail::search(pi, pj, vw, p.h_min);
    conflict = found.cpa.d < p.h_min && found.first.has_value();
  }
  if (!conflict && !loss) return std::nullopt;
  if (!conflict) {
    found = detail::search(pi, pj, {now, t_end}, p.h_min);
    found.first = now;
    found.last = now;
  }

  ConflictEvent ev;
  ev.id_i = si.flight_id;
  ev.id_j = sj.flight_id;
  ev.geometry = detail::make_geometry(si, sj, pi, pj, found, now);
  ev.geometry_ji = detail::make_geometry(sj, si, pj, pi, found, now);
  ev.basis_i = pi.front().basis;
  ev.basis_j = pj.front().basis;
  ev.phase_i = vertical_phase(si.v_speed);
  ev.phase_j = vertical_phase(sj.v_speed);
  if (loss) {
    ev.cls = EventClass::Loss;
  } else if (ev.geometry.t_cpa >= 0.0 && ev.geometry.t_cpa <= p.alert_horizon) {
    ev.cls = EventClass::Alert;
  } else {
    ev.cls = EventClass::Conflict;
  }
  return ev;
}

/// Detects a loss, alert or predicted conflict between two flights, or nothing.
inline std::optional<ConflictEvent> detect_pair(const FlightState& si, const FlightPlan& plan_i,
                                                const FlightState& sj, const FlightPlan& plan_j,
                                                const SeparationParams& p = {}) {
  return detect_projected(si, project_trajectory(si, plan_i, p), sj, project_trajectory(sj, plan_j, p), p);
}

/// CPA geometry of any pair, conflicting or not, over the common projection
/// span. Used to refresh edge features of a frozen neighbourhood.
inline CpaGeometry pair_geometry(const FlightState& si, const FlightPlan& plan_i, const FlightState& sj,
                                 const FlightPlan& plan_j, const SeparationParams& p = {}) {
  const Projection pi = project_trajectory(si, plan_i, p);
  const Projection pj = project_trajectory(sj, plan_j, p);
  const double t_end = std::min(detail::projection_end(pi), detail::projection_end(pj));
  detail::CpaSearch found = detail::search(pi, pj, {si.t, t_end}, p.h_min);
  found.first.reset();
  found.last.reset();
  return detail::make_geometry(si, sj, pi, pj, found, si.t);
}

/// Geometry of an event seen from agent `k` (one of the pair).
inline const CpaGeometry& geometry_from(const ConflictEvent& ev, std::size_t k) {
  return k == ev.j ? ev.geometry_ji : ev.geometry;
}

/// All pairwise events among the given flights (index order, i < j).
inline std::vector<ConflictEvent> detect_all(std::span<const FlightState> states,
                                             std::span<const FlightPlan* const> plans,
                                             const SeparationParams& p = {}) {
  if (states.size() != plans.size()) throw Error("detect_all: states/plans size mismatch", "invalid");
  std::vector<Projection> proj;
  proj.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) proj.push_back(project_trajectory(states[k], *plans[k], p));
  std::vector<ConflictEvent> events;
  for (std::size_t a = 0; a < states.size(); ++a) {
    for (std::size_t b = a + 1; b < states.size(); ++b) {
      if (auto ev = detect_projected(states[a], proj[a], states[b], proj[b], p)) {
        ev->i = a;
        ev->j = b;
        events.push_back(std::move(*ev));
      }
    }
  }
  return events;
}

inline std::vector<ConflictEvent> detect_all(std::span<const FlightState> states, std::span<const FlightPlan> plans,
                                             const SeparationParams& p = {}) {
  std::vector<const FlightPlan*> ptrs;
  ptrs.reserve(plans.size());
  for (const auto& pl : plans) ptrs.push_back(&pl);
  return detect_all(states, std::span<const FlightPlan* const>(ptrs), p);
}

/// Sort key placing losses first (by current distance), then alerts and
/// conflicts by time to CPA, then conflicts whose CPA lies in the past.
inline std::tuple<int, double> neighbor_priority(const ConflictEvent& ev) {
  const CpaGeometry& g = ev.geometry;
  switch (ev.cls) {
    case EventClass::Loss: return {0, g.d_h_now};
    case EventClass::Alert: return {1, g.t_cpa};
    case EventClass::Conflict:
      if (g.t_cpa >= 0.0) return {2, g.t_cpa};
      return {3, -g.t_cpa};
  }
  return {4, 0.0};
}

/// Ranked neighbour indices of agent `k`. Ties fall back to flight id.
inline std::vector<std::size_t> neighbors(std::span<const ConflictEvent> events, std::size_t k,
                                          std::span<const std::string> ids) {
  std::vector<const ConflictEvent*> mine;
  for (const auto& ev : events)
    if (ev.involves(k)) mine.push_back(&ev);
  std::sort(mine.begin(), mine.end(), [&](const ConflictEvent* a, const ConflictEvent* b) {
    const auto ka = neighbor_priority(*a);
    const auto kb = neighbor_priority(*b);
    if (ka != kb) return ka < kb;
    return ids[a->other(k)] < ids[b->other(k)];
  });
  std::vector<std::size_t> out;
  out.reserve(mine.size());
  for (const auto* ev : mine) out.push_back(ev->other(k));
  return out;
}

inline std::vector<std::vector<std::size_t>> neighbor_lists(std::span<const ConflictEvent> events,
                                                            std::span<const std::string> ids) {
  std::vector<std::vector<std::size_t>> out(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) out[k] = neighbors(events, k, ids);
  return out;
}

/// One line of the conflict-event log.
inline nlohmann::json event_to_json(const ConflictEvent& ev) {
  const CpaGeometry& g = ev.geometry;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {
      {"i", ev.id_i},
      {"j", ev.id_j},
      {"class", to_string(ev.cls)},
      {"t_cpa_s", g.t_cpa},
      {"d_h_cpa_m", g.d_h_cpa},
      {"d_v_cpa_ft", g.d_v_cpa},
      {"a_ij_rad", g.a_ij},
      {"b_ij_rad", g.b_ij},
      {"d_cp_m", opt(g.d_cp)},
      {"t_cp_s", opt(g.t_cp)},
      {"first_conflict_s", opt(g.first_conflict_t)},
      {"last_conflict_s", opt(g.last_conflict_t)},
      {"d_h_now_m", g.d_h_now},
      {"d_v_now_ft", g.d_v_now},
      {"basis_i", to_string(ev.basis_i)},
      {"basis_j", to_string(ev.basis_j)},
      {"phase_i", to_string(ev.phase_i)},
      {"phase_j", to_string(ev.phase_j)},
  };
}

}  // namespace atcdr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "atcdr/error.hpp"

namespace atcdr {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kMetersPerNm = 1852.0;
inline constexpr double kFeetPerLevel = 1000.0;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into [0, 2*pi).
inline double wrap_two_pi(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

/// Wraps an angle into [-pi, pi).
inline double wrap_pi(double a) { return wrap_two_pi(a + kPi) - kPi; }

struct Vec2 {
  double x{};
  double y{};

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline Vec2 operator*(Vec2 v, double s) { return s * v; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(b - a); }

/// Bearing of `to` seen from `from`, clockwise from North, in [0, 2*pi).
inline double bearing(Vec2 from, Vec2 to) {
  const Vec2 d = to - from;
  return wrap_two_pi(std::atan2(d.x, d.y));
}

/// Unit vector along a course measured clockwise from North (x east, y north).
inline Vec2 heading_vector(double chi) { return {std::sin(chi), std::cos(chi)}; }

/// Equirectangular tangent frame; x grows east, y grows north, both in meters.
struct LocalFrame {
  double origin_lat{};  // degrees
  double origin_lon{};  // degrees
};

inline Vec2 project(double lat, double lon, const LocalFrame& frame) {
  const double k = deg_to_rad(1.0) * kEarthRadiusM;
  return {(lon - frame.origin_lon) * k * std::cos(deg_to_rad(frame.origin_lat)),
          (lat - frame.origin_lat) * k};
}

struct LatLon {
  double lat{};
  double lon{};
};

inline LatLon unproject(Vec2 p, const LocalFrame& frame) {
  const double k = deg_to_rad(1.0) * kEarthRadiusM;
  return {frame.origin_lat + p.y / k,
          frame.origin_lon + p.x / (k * std::cos(deg_to_rad(frame.origin_lat)))};
}

/// Kinematic truth for one aircraft. Units: m, ft, rad, m/s, ft/s, s.
struct FlightState {
  std::string flight_id;
  double x{};
  double y{};
  double alt{};
  double chi{};      // course, clockwise from North
  double h_speed{};  // >= 0
  double v_speed{};
  double t{};

  Vec2 position() const { return {x, y}; }
  Vec2 velocity() const { return h_speed * heading_vector(chi); }

  friend bool operator==(const FlightState&, const FlightState&) = default;
};

struct Waypoint {
  std::string name;
  double x{};
  double y{};
  double alt{};  // filed altitude, ft
  double eto{};  // estimated time over, s

  Vec2 position() const { return {x, y}; }

  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

struct FlightPlan {
  std::vector<Waypoint> waypoints;
  std::size_t exit_index{};

  const Waypoint& exit_point() const { return waypoints.at(exit_index); }

  /// Throws Error when the plan breaks its structural invariants.
  void validate(const std::string& context = "plan") const {
    if (waypoints.size() < 2) throw Error(context + ": needs at least two waypoints", "invalid");
    if (exit_index >= waypoints.size()) throw Error(context + ": exit_index out of range", "invalid");
    for (std::size_t k = 1; k < waypoints.size(); ++k) {
      if (waypoints[k].eto < waypoints[k - 1].eto)
        throw Error(context + ": eto decreases at waypoint " + std::to_string(k), "invalid");
      if (distance(waypoints[k].position(), waypoints[k - 1].position()) <= 0.0)
        throw Error(context + ": co-located waypoints at " + std::to_string(k), "invalid");
    }
  }

  friend bool operator==(const FlightPlan&, const FlightPlan&) = default;
};

struct PlanPosition {
  double x{};
  double y{};
  double alt{};
  double chi{};
  bool clamped{false};
};

/// Position along the plan at time `t`, interpolated linearly between etos.
/// Times outside the plan are clamped to the nearest endpoint and flagged.
inline PlanPosition plan_position_at(const FlightPlan& plan, double t) {
  const auto& w = plan.waypoints;
  if (w.size() < 2) throw Error("plan_position_at: plan needs at least two waypoints", "invalid");
  auto seg_chi = [&](std::size_t k) { return bearing(w[k].position(), w[k + 1].position()); };

  if (t <= w.front().eto) {
    return {w.front().x, w.front().y, w.front().alt, seg_chi(0), t < w.front().eto};
  }
  if (t >= w.back().eto) {
    return {w.back().x, w.back().y, w.back().alt, seg_chi(w.size() - 2), t > w.back().eto};
  }
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    const Waypoint& a = w[k];
    const Waypoint& b = w[k + 1];
    if (t < b.eto && b.eto > a.eto) {
      const double f = (t - a.eto) / (b.eto - a.eto);
      return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.alt + f * (b.alt - a.alt), seg_chi(k), false};
    }
  }
  return {w.back().x, w.back().y, w.back().alt, seg_chi(w.size() - 2), false};
}

/// Total Euclidean length of a track in nautical miles.
inline double path_length_nm(std::span<const Vec2> points) {
  if (points.size() < 2) throw Error("path_length_nm: malformed track, need at least two points", "invalid");
  double total = 0.0;
  for (std::size_t k = 1; k < points.size(); ++k) total += distance(points[k - 1], points[k]);
  return total / kMetersPerNm;
}

/// Closest point of a plan's horizontal profile to a position.
struct PlanProjection {
  Vec2 point;
  std::size_t segment{};  // segment k joins waypoints k and k+1
  double fraction{};      // position along the segment in [0,1]
  double distance{};      // horizontal distance, m
  double along{};         // distance from the first waypoint along the profile, m
  double chi{};           // course of the segment
};

inline PlanProjection closest_point_on_plan(const FlightPlan& plan, Vec2 p) {
  const auto& w = plan.waypoints;
  PlanProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  double cumulative = 0.0;
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    const Vec2 a = w[k].position();
    const Vec2 b = w[k + 1].position();
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double len = std::sqrt(len2);
    const double f = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + f * ab;
    const double d = distance(p, q);
    if (d < best.distance) {
      best = {q, k, f, d, cumulative + f * len, bearing(a, b)};
    }
    cumulative += len;
  }
  return best;
}

/// Length of the plan profile from the first waypoint to waypoint `index`.
inline double plan_along_at_waypoint(const FlightPlan& plan, std::size_t index) {
  double s = 0.0;
  for (std::size_t k = 1; k <= index && k < plan.waypoints.size(); ++k)
    s += distance(plan.waypoints[k - 1].position(), plan.waypoints[k].position());
  return s;
}

/// Proper intersection test of two closed 2D segments.
inline bool segments_intersect(Vec2 p0, Vec2 p1, Vec2 q0, Vec2 q1) {
  const Vec2 r = p1 - p0;
  const Vec2 s = q1 - q0;
  const double denom = cross(r, s);
  const Vec2 qp = q0 - p0;
  constexpr double eps = 1e-12;
  if (std::abs(denom) < eps) {
    if (std::abs(cross(qp, r)) > eps * std::max(1.0, norm(r) * norm(qp))) return false;
    // Collinear: overlap of the projections onto r.
    const double rr = dot(r, r);
    if (rr == 0.0) return distance(p0, q0) < eps || distance(p0, q1) < eps;
    const double t0 = dot(qp, r) / rr;
    const double t1 = t0 + dot(s, r) / rr;
    return std::max(t0, t1) >= 0.0 && std::min(t0, t1) <= 1.0;
  }
  const double t = cross(qp, s) / denom;
  const double u = cross(qp, r) / denom;
  return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

}  // namespace atcdr

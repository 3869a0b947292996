#pragma once

// Hand-built scenarios and joint-action helpers shared by the tests.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atcdr/actions.hpp"
#include "atcdr/env.hpp"
#include "atcdr/scenario.hpp"

namespace atcdr::testing {

/// Level flight on a straight 6-waypoint plan starting at `start`.
inline ScenarioFlight straight_flight(const std::string& id, Vec2 start, double chi_deg, double speed, double alt,
                                      double span = 900) {
  ScenarioFlight f;
  const double chi = deg_to_rad(chi_deg);
  f.initial = {id, start.x, start.y, alt, chi, speed, 0, 0};
  for (int k = 0; k < 6; ++k) {
    const double t = span * k / 5.0;
    const Vec2 p = start + (speed * t) * heading_vector(chi);
    f.plan.waypoints.push_back({id + std::to_string(k), p.x, p.y, alt, t});
  }
  f.plan.exit_index = 5;
  f.entry_time = 0;
  f.exit_time = span;
  return f;
}

/// Level flight through the given points at constant speed.
inline ScenarioFlight polyline_flight(const std::string& id, const std::vector<Vec2>& points, double speed,
                                      double alt) {
  ScenarioFlight f;
  double t = 0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (k > 0) t += distance(points[k - 1], points[k]) / speed;
    f.plan.waypoints.push_back({id + std::to_string(k), points[k].x, points[k].y, alt, t});
  }
  f.plan.exit_index = points.size() - 1;
  const double chi = bearing(points[0], points[1]);
  f.initial = {id, points[0].x, points[0].y, alt, chi, speed, 0, 0};
  f.entry_time = 0;
  f.exit_time = t;
  return f;
}

/// Two level flights at FL300 flying head-on along y = 0 (or 60 km apart).
inline Scenario two_flights(bool conflicting) {
  Scenario s;
  s.id = "1600000000-TEST";
  s.aor_id = "TEST";
  s.duration = 1000;
  s.flights.push_back(straight_flight("A", {0, 0}, 90, 200, 30000));
  s.flights.push_back(straight_flight("B", {100000, conflicting ? 0.0 : 60000.0}, 270, 200, 30000));
  return s;
}

inline Scenario single_flight_scenario(ScenarioFlight f, double duration) {
  Scenario s;
  s.id = "1600000001-TEST";
  s.aor_id = "TEST";
  s.duration = duration;
  s.flights.push_back(std::move(f));
  return s;
}

inline std::vector<std::optional<ActionId>> joint(const CdrEnv& env, ActionId a = kNoAction) {
  std::vector<std::optional<ActionId>> out(env.num_agents());
  for (std::size_t k = 0; k < env.num_agents(); ++k)
    if (env.flights()[k].active()) out[k] = a;
  return out;
}

inline ActionId find_action(ActionKind kind, double delta = 0, int duration = 0, int wp = 0) {
  for (std::size_t k = 0; k < kNumActions; ++k) {
    const Action& a = action_space()[k];
    if (a.kind == kind && a.delta == delta && a.duration == duration && a.waypoint == wp) return action_id(k);
  }
  throw std::runtime_error("no such action");
}

}  // namespace atcdr::testing

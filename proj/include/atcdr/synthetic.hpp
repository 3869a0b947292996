#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "atcdr/conflict.hpp"
#include "atcdr/error.hpp"
#include "atcdr/geo.hpp"
#include "atcdr/scenario.hpp"

namespace atcdr {

struct SyntheticOptions {
  double sector_radius = 60000.0;  // m, spawn area around the origin
  double min_alt = 25000.0;
  double max_alt = 38000.0;
  double min_speed = 200.0;  // m/s
  double max_speed = 250.0;
  double min_meet = 180.0;  // s, time until the converging pair meets
  double max_meet = 420.0;
  int waypoints = 6;
  int max_retries = 200;
};

namespace detail {

/// Straight plan through `start` along `chi`, covering `speed * span` meters.
inline FlightPlan straight_plan(const std::string& id, Vec2 start, double chi, double speed, double alt, double span,
                                int count) {
  FlightPlan plan;
  const Vec2 u = heading_vector(chi);
  for (int k = 0; k < count; ++k) {
    const double f = static_cast<double>(k) / (count - 1);
    const Vec2 p = start + (f * speed * span) * u;
    plan.waypoints.push_back({id + "_WP" + std::to_string(k), p.x, p.y, alt, f * span});
  }
  plan.exit_index = plan.waypoints.size() - 1;
  return plan;
}

/// Canonical course: exactly what a save/load cycle reproduces.
inline double canonical_chi(double chi) { return deg_to_rad(canonical_course_deg(chi)); }

inline ScenarioFlight make_flight(const std::string& id, Vec2 start, double chi, double speed, double alt,
                                  double duration, const SyntheticOptions& o) {
  const double span = 0.9 * duration;
  ScenarioFlight f;
  f.plan = straight_plan(id, start, chi, speed, alt, span, o.waypoints);
  f.initial = {id, start.x, start.y, alt, chi, speed, 0.0, 0.0};
  f.entry_time = 0.0;
  f.exit_time = span;
  return f;
}

}  // namespace detail

/// Deterministic scenario with at least one conflict at t = 0. The first two
/// flights converge on a common point at the same level; the rest are random.
inline Scenario generate_synthetic_scenario(std::uint64_t seed, int n_flights, double duration,
                                            const SyntheticOptions& o = {}) {
  if (n_flights < 2) throw Error("generate_synthetic_scenario: n_flights must be at least 2", "invalid");
  if (!(duration > o.max_meet)) throw Error("generate_synthetic_scenario: duration too short", "invalid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto level = [&]() { return std::round(uniform(o.min_alt, o.max_alt) / kFeetPerLevel) * kFeetPerLevel; };

  for (int attempt = 0; attempt < o.max_retries; ++attempt) {
    Scenario s;
    s.id = std::to_string(1600000000 + seed % 100000000) + "-SYN" + std::to_string(n_flights);
    s.aor_id = "SYN";
    s.duration = duration;

    const double r_meet = uniform(0.0, 0.3 * o.sector_radius);
    const double b_meet = uniform(0.0, kTwoPi);
    const Vec2 meet = r_meet * heading_vector(b_meet);
    const double t_meet = uniform(o.min_meet, o.max_meet);
    const double alt = level();
    const double chi_a = detail::canonical_chi(uniform(0.0, kTwoPi));
    const double crossing = uniform(deg_to_rad(30.0), deg_to_rad(150.0)) * (unit(rng) < 0.5 ? 1.0 : -1.0);
    const double chi_b = detail::canonical_chi(chi_a + crossing);
    for (int k = 0; k < 2; ++k) {
      const double chi = k == 0 ? chi_a : chi_b;
      const double speed = std::round(uniform(o.min_speed, o.max_speed));
      const Vec2 start = meet - (speed * t_meet) * heading_vector(chi);
      s.flights.push_back(detail::make_flight("SYN" + std::to_string(k + 1), start, chi, speed, alt, duration, o));
    }
    for (int k = 2; k < n_flights; ++k) {
      const Vec2 start = uniform(0.0, o.sector_radius) * heading_vector(uniform(0.0, kTwoPi));
      const double chi = detail::canonical_chi(uniform(0.0, kTwoPi));
      const double speed = std::round(uniform(o.min_speed, o.max_speed));
      s.flights.push_back(
          detail::make_flight("SYN" + std::to_string(k + 1), start, chi, speed, level(), duration, o));
    }

    std::vector<FlightState> states;
    std::vector<FlightPlan> plans;
    for (const auto& f : s.flights) {
      states.push_back(f.initial);
      plans.push_back(f.plan);
    }
    const auto events = detect_all(states, plans);
    bool conflict = false;
    bool loss = false;
    for (const auto& ev : events) {
      conflict = conflict || ev.cls == EventClass::Conflict;
      loss = loss || ev.cls == EventClass::Loss;
    }
    if (conflict && !loss) return s;
  }
  throw Error("generate_synthetic_scenario: no conflicting layout after " + std::to_string(o.max_retries) +
                  " attempts (seed " + std::to_string(seed) + ")",
              "unsatisfiable");
}

}  // namespace atcdr

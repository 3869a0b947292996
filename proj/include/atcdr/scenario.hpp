#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atcdr/error.hpp"
#include "atcdr/geo.hpp"

namespace atcdr {

struct ScenarioFlight {
  FlightState initial;  // state at entry_time
  FlightPlan plan;
  double entry_time{};
  double exit_time{};

  const std::string& id() const { return initial.flight_id; }

  friend bool operator==(const ScenarioFlight&, const ScenarioFlight&) = default;
};

/// One episode definition; id follows the "timestamp-AoRID" convention.
struct Scenario {
  std::string id;
  std::string aor_id;
  double duration{};
  std::vector<ScenarioFlight> flights;

  void validate() const {
    if (!(duration > 0.0)) throw Error("scenario " + id + ": duration must be positive", "invalid");
    for (const auto& f : flights) {
      if (!(f.entry_time < f.exit_time) || f.exit_time > duration)
        throw Error("scenario " + id + ": flight " + f.id() + " needs entry < exit <= duration", "invalid");
      f.plan.validate("flight " + f.id());
    }
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Course as written to disk. Rounded to 1e-9 degree so that a
/// load/save cycle reproduces the same bytes.
inline double canonical_course_deg(double chi_rad) {
  const double deg = rad_to_deg(wrap_two_pi(chi_rad));
  const double rounded = std::round(deg * 1e9) / 1e9;
  return rounded >= 360.0 ? 0.0 : rounded;
}

namespace detail {

using nlohmann::json;

inline const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key, "missing field");
  return *it;
}

inline double require_number(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key, "expected a number");
  return v.get<double>();
}

inline std::string require_string(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& s) {
  using nlohmann::json;
  json flights = json::array();
  for (const auto& f : s.flights) {
    json wps = json::array();
    for (const auto& w : f.plan.waypoints) {
      wps.push_back({{"name", w.name}, {"x_m", w.x}, {"y_m", w.y}, {"alt_ft", w.alt}, {"eto_s", w.eto}});
    }
    flights.push_back({
        {"id", f.id()},
        {"entry_s", f.entry_time},
        {"exit_s", f.exit_time},
        {"state",
         {{"x_m", f.initial.x},
          {"y_m", f.initial.y},
          {"alt_ft", f.initial.alt},
          {"chi_deg", canonical_course_deg(f.initial.chi)},
          {"h_speed_mps", f.initial.h_speed},
          {"v_speed_ftps", f.initial.v_speed}}},
        {"plan", {{"exit_index", f.plan.exit_index}, {"waypoints", wps}}},
    });
  }
  return {{"id", s.id}, {"duration_s", s.duration}, {"aor_id", s.aor_id}, {"flights", flights}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  using detail::require;
  using detail::require_number;
  using detail::require_string;
  Scenario s;
  s.id = require_string(j, "id", "$");
  s.duration = require_number(j, "duration_s", "$");
  s.aor_id = require_string(j, "aor_id", "$");
  const auto& flights = require(j, "flights", "$");
  if (!flights.is_array()) throw ParseError("$.flights", "expected an array");
  for (std::size_t n = 0; n < flights.size(); ++n) {
    const auto& jf = flights[n];
    std::string path = "$.flights[" + std::to_string(n) + "]";
    ScenarioFlight f;
    f.initial.flight_id = require_string(jf, "id", path);
    path += "(" + f.initial.flight_id + ")";
    f.entry_time = require_number(jf, "entry_s", path);
    f.exit_time = require_number(jf, "exit_s", path);
    const auto& st = require(jf, "state", path);
    const std::string sp = path + ".state";
    f.initial.x = require_number(st, "x_m", sp);
    f.initial.y = require_number(st, "y_m", sp);
    f.initial.alt = require_number(st, "alt_ft", sp);
    f.initial.chi = wrap_two_pi(deg_to_rad(require_number(st, "chi_deg", sp)));
    f.initial.h_speed = require_number(st, "h_speed_mps", sp);
    f.initial.v_speed = require_number(st, "v_speed_ftps", sp);
    f.initial.t = f.entry_time;
    if (f.initial.h_speed < 0.0) throw ParseError(sp + ".h_speed_mps", "must be non-negative");
    const auto& pl = require(jf, "plan", path);
    const std::string pp = path + ".plan";
    const auto& exit_index = require(pl, "exit_index", pp);
    if (!exit_index.is_number_integer() || exit_index.get<long long>() < 0)
      throw ParseError(pp + ".exit_index", "expected a non-negative integer");
    f.plan.exit_index = exit_index.get<std::size_t>();
    const auto& wps = require(pl, "waypoints", pp);
    if (!wps.is_array()) throw ParseError(pp + ".waypoints", "expected an array");
    for (std::size_t k = 0; k < wps.size(); ++k) {
      const std::string wp = pp + ".waypoints[" + std::to_string(k) + "]";
      Waypoint w;
      w.name = require_string(wps[k], "name", wp);
      w.x = require_number(wps[k], "x_m", wp);
      w.y = require_number(wps[k], "y_m", wp);
      w.alt = require_number(wps[k], "alt_ft", wp);
      w.eto = require_number(wps[k], "eto_s", wp);
      f.plan.waypoints.push_back(std::move(w));
    }
    try {
      f.plan.validate(pp);
    } catch (const Error& e) {
      throw ParseError(pp, e.what());
    }
    s.flights.push_back(std::move(f));
  }
  try {
    s.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError("$", e.what());
  }
  return s;
}

inline std::string scenario_to_string(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

inline void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing", "io");
  out << scenario_to_string(s);
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string(), "io");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("$", e.what());
  }
  return scenario_from_json(j);
}

}  // namespace atcdr

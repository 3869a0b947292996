#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "atcdr/error.hpp"

namespace atcdr {

enum class ActionKind : std::uint8_t { NoAction, FlightLevelUp, FlightLevelDown, Course, Speed, DirectTo };

/// Index into the fixed action repertoire.
enum class ActionId : std::uint8_t {};

constexpr std::size_t to_index(ActionId a) { return static_cast<std::size_t>(a); }

struct Action {
  ActionKind kind{ActionKind::NoAction};
  double delta{};     // course change in degrees, or speed change in m/s
  int waypoint{};     // 1..4 for DirectTo
  int duration{};     // s, Course and Speed only

  bool has_duration() const { return kind == ActionKind::Course || kind == ActionKind::Speed; }
};

inline constexpr double kSpeedStep = 3.6008;  // m/s
inline constexpr double kClimbRate = 17.0;    // ft/s
inline constexpr std::array<double, 4> kCourseSteps{10.0, -10.0, 20.0, -20.0};
inline constexpr std::array<int, 4> kDurations{30, 60, 120, 180};

/// 2 level changes + 16 course + 8 speed + 4 direct-to + no action.
inline constexpr std::size_t kNumActions = 31;

namespace detail {
constexpr std::array<Action, kNumActions> make_action_space() {
  std::array<Action, kNumActions> a{};
  std::size_t n = 0;
  a[n++] = {ActionKind::NoAction, 0.0, 0, 0};
  a[n++] = {ActionKind::FlightLevelUp, 0.0, 0, 0};
  a[n++] = {ActionKind::FlightLevelDown, 0.0, 0, 0};
  for (double d : kCourseSteps)
    for (int dur : kDurations) a[n++] = {ActionKind::Course, d, 0, dur};
  for (double d : {kSpeedStep, -kSpeedStep})
    for (int dur : kDurations) a[n++] = {ActionKind::Speed, d, 0, dur};
  for (int w = 1; w <= 4; ++w) a[n++] = {ActionKind::DirectTo, 0.0, w, 0};
  return a;
}
}  // namespace detail

/// The ordered repertoire. Index 0 is NoAction.
inline const std::array<Action, kNumActions>& action_space() {
  static constexpr auto space = detail::make_action_space();
  return space;
}

inline const Action& action_of(ActionId id) {
  if (to_index(id) >= kNumActions) throw Error("unknown action id " + std::to_string(to_index(id)), "invalid");
  return action_space()[to_index(id)];
}

inline constexpr ActionId kNoAction{0};

inline ActionId action_id(std::size_t index) {
  if (index >= kNumActions) throw Error("unknown action id " + std::to_string(index), "invalid");
  return static_cast<ActionId>(index);
}

inline std::string action_label(ActionId id) {
  const Action& a = action_of(id);
  auto num = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  switch (a.kind) {
    case ActionKind::NoAction: return "no_action";
    case ActionKind::FlightLevelUp: return "fl_up";
    case ActionKind::FlightLevelDown: return "fl_down";
    case ActionKind::Course:
      return std::string("course_") + (a.delta > 0 ? "+" : "") + num(a.delta) + "deg_" + std::to_string(a.duration) + "s";
    case ActionKind::Speed:
      return std::string("speed_") + (a.delta > 0 ? "+" : "") + num(a.delta) + "mps_" + std::to_string(a.duration) + "s";
    case ActionKind::DirectTo: return "direct_to_wp" + std::to_string(a.waypoint);
  }
  return "?";
}

}  // namespace atcdr

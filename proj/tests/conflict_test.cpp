#include <gtest/gtest.h>

#include <random>

#include "atcdr/conflict.hpp"
#include "atcdr/synthetic.hpp"

using namespace atcdr;

namespace {

FlightState state(const std::string& id, double x, double y, double alt, double chi_deg, double speed,
                  double vs = 0.0) {
  return {id, x, y, alt, deg_to_rad(chi_deg), speed, vs, 0.0};
}

/// Single straight leg starting at the state and running far along its course.
FlightPlan plan_along(const FlightState& s, double length = 400000.0) {
  const Vec2 end = s.position() + length * heading_vector(s.chi);
  FlightPlan p;
  p.waypoints = {{"P0", s.x, s.y, s.alt, 0}, {"P1", end.x, end.y, s.alt, length / std::max(s.h_speed, 1.0)}};
  p.exit_index = 1;
  return p;
}

ProjectionSegment cv_segment(Vec2 p, Vec2 v, double t0, double t1) {
  return {{p.x, p.y, 30000, t0}, {p.x + v.x * (t1 - t0), p.y + v.y * (t1 - t0), 30000, t1}, Basis::Track};
}

}  // namespace

TEST(Horizon, LevelAndVertical) {
  EXPECT_DOUBLE_EQ(horizon(state("A", 0, 0, 30000, 0, 200)), 600.0);
  EXPECT_NEAR(horizon(state("A", 0, 0, 30000, 0, 200, 17)), 1000.0 / 17.0, 1e-9);
  EXPECT_NEAR(horizon(state("A", 0, 0, 30500, 0, 200, -17)), 500.0 / 17.0, 1e-9);
}

TEST(Conformance, PlanAndTrackCases) {
  FlightPlan plan;
  plan.waypoints = {{"A", 0, 0, 30000, 0}, {"B", 0, 100000, 30000, 500}};
  plan.exit_index = 1;
  EXPECT_EQ(conformance(state("X", 1500, 20000, 30000, 10, 200), plan), Basis::Plan);
  EXPECT_EQ(conformance(state("X", 3000, 20000, 30000, 0, 200), plan), Basis::Track);
  // 5 km off the plan but heading across it.
  EXPECT_EQ(conformance(state("X", 5000, 20000, 30000, 300, 200), plan), Basis::Plan);
  // Close to the plan but with a large course difference and diverging.
  EXPECT_EQ(conformance(state("X", 1500, 20000, 30000, 90, 200), plan), Basis::Track);
}

TEST(Projection, TrackBasisKinematics) {
  FlightState s = state("X", 0, 0, 30000, 90, 200);
  FlightPlan far;
  far.waypoints = {{"A", 0, 50000, 30000, 0}, {"B", 100000, 50000, 30000, 500}};
  far.exit_index = 1;
  Projection p = project_trajectory(s, far);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].basis, Basis::Track);
  EXPECT_NEAR(p[0].p1.x, 120000.0, 1e-6);
  EXPECT_NEAR(p[0].p1.y, 0.0, 1e-6);
  EXPECT_DOUBLE_EQ(p[0].p1.t, 600.0);
}

TEST(Projection, PlanBasisCollinearWithSingleSegment) {
  FlightState s = state("X", 0, 10000, 30000, 0, 200);
  FlightPlan plan;
  plan.waypoints = {{"A", 0, 0, 30000, 0}, {"B", 0, 300000, 30000, 1500}};
  plan.exit_index = 1;
  Projection p = project_trajectory(s, plan);
  for (const auto& seg : p) {
    EXPECT_EQ(seg.basis, Basis::Plan);
    EXPECT_NEAR(seg.p0.x, 0.0, 1e-9);
    EXPECT_NEAR(seg.p1.x, 0.0, 1e-9);
  }
  EXPECT_NEAR(p.back().p1.y, 10000 + 120000, 1e-6);
}

TEST(Projection, EndpointMatchesEulerIntegration) {
  FlightPlan plan;
  plan.waypoints = {{"A", 0, 0, 30000, 0}, {"B", 30000, 0, 30000, 150}, {"C", 30000, 40000, 30000, 350},
                    {"D", 90000, 40000, 30000, 650}, {"E", 90000, 200000, 30000, 1500}};
  plan.exit_index = 4;
  FlightState s = state("X", 1000, 0, 30000, 90, 200, 5);
  Projection proj = project_trajectory(s, plan);
  // Follow the polyline with 1 s steps.
  Vec2 pos{1000, 0};
  double alt = s.alt;
  std::size_t next = 1;
  const double h = horizon(s);
  for (double t = 0; t < h - 1e-9; t += 1.0) {
    const double dt = std::min(1.0, h - t);
    double dist = s.h_speed * dt;
    while (dist > 0 && next < plan.waypoints.size()) {
      const Vec2 tgt = plan.waypoints[next].position();
      const double d = distance(pos, tgt);
      if (d <= dist) {
        pos = tgt;
        dist -= d;
        ++next;
      } else {
        pos = pos + (dist / d) * (tgt - pos);
        dist = 0;
      }
    }
    alt += s.v_speed * dt;
  }
  const TrajPoint end = proj.back().p1;
  EXPECT_LT(distance(end.xy(), pos), 1.0);
  EXPECT_NEAR(end.alt, alt, 1e-6);
}

TEST(Projection, StationaryIsDegenerate) {
  FlightState s = state("X", 0, 0, 30000, 0, 0);
  Projection p = project_trajectory(s, plan_along(state("X", 0, 0, 30000, 0, 200)));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].p0.xy(), p[0].p1.xy());
}

TEST(Cpa, HeadOnAndPerpendicular) {
  HorizontalCpa h = cpa_horizontal(cv_segment({0, 0}, {200, 0}, 0, 600), cv_segment({20000, 0}, {-200, 0}, 0, 600));
  EXPECT_NEAR(h.t, 50.0, 1e-9);
  EXPECT_NEAR(h.d, 0.0, 1e-9);
  HorizontalCpa p =
      cpa_horizontal(cv_segment({0, 0}, {100, 0}, 0, 600), cv_segment({5000, -5000}, {0, 100}, 0, 600));
  EXPECT_NEAR(p.t, 50.0, 1e-9);
  EXPECT_NEAR(p.d, 0.0, 1e-9);
}

TEST(Cpa, ParallelAndClamped) {
  HorizontalCpa par = cpa_horizontal(cv_segment({0, 0}, {100, 0}, 10, 600), cv_segment({0, 3000}, {100, 0}, 0, 600));
  EXPECT_DOUBLE_EQ(par.t, 10.0);
  EXPECT_NEAR(par.d, std::hypot(1000.0, 3000.0), 1e-9);
  HorizontalCpa diverging =
      cpa_horizontal(cv_segment({0, 0}, {-100, 0}, 0, 600), cv_segment({1000, 0}, {100, 0}, 0, 600));
  EXPECT_DOUBLE_EQ(diverging.t, 0.0);
  EXPECT_NEAR(diverging.d, 1000.0, 1e-9);
}

TEST(Cpa, BruteForceOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-50000, 50000), vel(-250, 250);
  for (int n = 0; n < 200; ++n) {
    Vec2 pa{pos(rng), pos(rng)}, pb{pos(rng), pos(rng)}, va{vel(rng), vel(rng)}, vb{vel(rng), vel(rng)};
    auto a = cv_segment(pa, va, 0, 600);
    auto b = cv_segment(pb, vb, 0, 600);
    HorizontalCpa h = cpa_horizontal(a, b);
    double best_t = 0, best_d = 1e300;
    for (int k = 0; k <= 6000; ++k) {
      double t = 0.1 * k;
      double d = distance(pa + t * va, pb + t * vb);
      if (d < best_d) best_d = d, best_t = t;
    }
    EXPECT_LE(std::abs(h.t - best_t), 0.5) << n;
    EXPECT_LE(std::abs(h.d - best_d), 5.0) << n;
  }
}

TEST(Cpa, ViolationIntervalMatchesSampling) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(-40000, 40000), vel(-250, 250);
  int checked = 0;
  for (int n = 0; n < 300; ++n) {
    Vec2 pa{pos(rng), pos(rng)}, pb{pos(rng), pos(rng)}, va{vel(rng), vel(rng)}, vb{vel(rng), vel(rng)};
    auto v = horizontal_violation(cv_segment(pa, va, 0, 600), cv_segment(pb, vb, 0, 600), 0, 600, 9260);
    std::optional<double> first, last;
    for (int k = 0; k <= 6000; ++k) {
      double t = 0.1 * k;
      if (distance(pa + t * va, pb + t * vb) < 9260) {
        if (!first) first = t;
        last = t;
      }
    }
    ASSERT_EQ(v.has_value(), first.has_value()) << n;
    if (v) {
      ++checked;
      EXPECT_LE(std::abs(v->first - *first), 0.1);
      EXPECT_LE(std::abs(v->second - *last), 0.1);
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Detect, ConflictAlertLoss) {
  // Same level, converging to 4 NM at t = 200 s.
  const double miss = 4 * kMetersPerNm;
  FlightState a = state("A", 0, 0, 30000, 90, 200);
  FlightState b = state("B", 40000 + 200 * 200, miss, 30000, 270, 200);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->cls, EventClass::Conflict);
  EXPECT_NEAR(ev->geometry.t_cpa, 200.0, 1e-6);
  EXPECT_NEAR(ev->geometry.d_h_cpa, miss, 1e-6);
  EXPECT_NEAR(ev->geometry.a_ij, kPi, 1e-9);

  FlightState e = state("E", 0, 0, 30000, 90, 200);
  FlightState f = state("F", 2000 + 11000, miss, 30000, 270, 200);
  // Currently sqrt(13000^2 + miss^2) apart, above 5 NM; CPA at 32.5 s.
  auto later = detect_pair(e, plan_along(e), f, plan_along(f));
  ASSERT_TRUE(later);
  EXPECT_EQ(later->cls, EventClass::Conflict);
  EXPECT_NEAR(later->geometry.t_cpa, 32.5, 1e-6);
}

TEST(Detect, AlertWithinTenSeconds) {
  // Head-on, 9100 m lateral miss at t = 5 s, currently just outside 5 NM.
  FlightState a = state("A", 0, 0, 30000, 90, 300);
  FlightState b = state("B", 3000, 9100, 30000, 270, 300);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  EXPECT_GT(ev->geometry.d_h_now, 9260.0);
  EXPECT_GE(ev->geometry.t_cpa, 0.0);
  EXPECT_LE(ev->geometry.t_cpa, 10.0);
  EXPECT_EQ(ev->cls, EventClass::Alert);
}

TEST(Detect, CurrentLoss) {
  FlightState a = state("A", 0, 0, 30000, 90, 200);
  FlightState b = state("B", 3 * kMetersPerNm, 0, 30000, 90, 200);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->cls, EventClass::Loss);
}

TEST(Detect, VerticallySeparatedLevelPairIsClear) {
  FlightState a = state("A", 0, 0, 30000, 90, 200);
  FlightState b = state("B", 40000, 0, 32000, 270, 200);
  EXPECT_FALSE(detect_pair(a, plan_along(a), b, plan_along(b)));
  FlightState c = state("C", 40000, 0, 31000, 270, 200);
  // Above FL290 the minimum is 2000 ft, so 1000 ft is not enough.
  EXPECT_TRUE(detect_pair(a, plan_along(a), c, plan_along(c)));
  SeparationParams rvsm;
  rvsm.rvsm = true;
  EXPECT_FALSE(detect_pair(a, plan_along(a), c, plan_along(c), rvsm));
}

TEST(Detect, ClimbingThroughLevel) {
  FlightState a = state("A", 0, 0, 25000, 90, 200);
  FlightState b = state("B", 30000, 0, 25900, 270, 200, -17);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->phase_i, VerticalPhase::Level);
  EXPECT_EQ(ev->phase_j, VerticalPhase::Descend);
}

TEST(Detect, SymmetricInPair) {
  std::mt19937_64 rng(5);
  Scenario s = generate_synthetic_scenario(17, 8, 1200);
  for (std::size_t i = 0; i < s.flights.size(); ++i) {
    for (std::size_t j = i + 1; j < s.flights.size(); ++j) {
      const auto& fi = s.flights[i];
      const auto& fj = s.flights[j];
      auto ij = detect_pair(fi.initial, fi.plan, fj.initial, fj.plan);
      auto ji = detect_pair(fj.initial, fj.plan, fi.initial, fi.plan);
      ASSERT_EQ(ij.has_value(), ji.has_value());
      if (!ij) continue;
      EXPECT_EQ(ij->cls, ji->cls);
      EXPECT_NEAR(ij->geometry.t_cpa, ji->geometry.t_cpa, 1e-6);
      EXPECT_NEAR(ij->geometry.d_h_cpa, ji->geometry.d_h_cpa, 1e-6);
      EXPECT_NEAR(ij->geometry.d_v_cpa, ji->geometry.d_v_cpa, 1e-6);
      EXPECT_NEAR(ij->geometry_ji.b_ij, ji->geometry.b_ij, 1e-9);
    }
  }
}

TEST(Detect, CrossingPointFeatures) {
  FlightState a = state("A", -10000, 0, 30000, 90, 100);
  FlightState b = state("B", 0, -10000, 30000, 0, 100);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  ASSERT_TRUE(ev->geometry.t_cp);
  EXPECT_NEAR(*ev->geometry.t_cp, 100.0, 1e-9);
  EXPECT_NEAR(*ev->geometry.d_cp, 0.0, 1e-9);
  EXPECT_NEAR(ev->geometry.first_conflict_t.value(), 100.0 - 9260.0 / (100 * std::sqrt(2.0)), 1e-6);
  EXPECT_NEAR(ev->geometry.last_conflict_t.value(), 100.0 + 9260.0 / (100 * std::sqrt(2.0)), 1e-6);
  // Parallel courses never cross.
  FlightState c = state("C", 0, 0, 30000, 90, 200);
  FlightState d = state("D", 0, 5000, 30000, 90, 180);
  auto par = detect_pair(c, plan_along(c), d, plan_along(d));
  ASSERT_TRUE(par);
  EXPECT_FALSE(par->geometry.d_cp);
  EXPECT_FALSE(par->geometry.t_cp);
}

TEST(Neighbors, ClassThenTimeOrdering) {
  auto make = [](std::size_t other, EventClass cls, double t_cpa, double d_now) {
    ConflictEvent ev;
    ev.i = 0;
    ev.j = other;
    ev.cls = cls;
    ev.geometry.t_cpa = t_cpa;
    ev.geometry.d_h_now = d_now;
    return ev;
  };
  std::vector<ConflictEvent> events{make(1, EventClass::Conflict, -20, 30000), make(2, EventClass::Conflict, 120, 40000),
                                    make(3, EventClass::Alert, 40, 12000), make(4, EventClass::Loss, 0, 3 * 1852.0)};
  std::vector<std::string> ids{"A", "B", "C", "D", "E"};
  EXPECT_EQ(neighbors(events, 0, ids), (std::vector<std::size_t>{4, 3, 2, 1}));
  EXPECT_EQ(neighbors(events, 2, ids), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(neighbors(std::vector<ConflictEvent>{}, 0, ids).empty());
}

TEST(Neighbors, TiesByFlightId) {
  ConflictEvent a, b;
  a.i = 0, a.j = 1, b.i = 0, b.j = 2;
  a.geometry.t_cpa = b.geometry.t_cpa = 100;
  std::vector<std::string> ids{"X", "ZZ", "AA"};
  EXPECT_EQ(neighbors(std::vector<ConflictEvent>{a, b}, 0, ids), (std::vector<std::size_t>{2, 1}));
}

TEST(DetectAll, EqualsPairwiseUnion) {
  Scenario s = generate_synthetic_scenario(3, 6, 1200);
  std::vector<FlightState> st;
  std::vector<FlightPlan> pl;
  for (const auto& f : s.flights) st.push_back(f.initial), pl.push_back(f.plan);
  auto all = detect_all(st, pl);
  std::size_t k = 0;
  for (std::size_t i = 0; i < st.size(); ++i) {
    for (std::size_t j = i + 1; j < st.size(); ++j) {
      auto ev = detect_pair(st[i], pl[i], st[j], pl[j]);
      if (!ev) continue;
      ASSERT_LT(k, all.size());
      EXPECT_EQ(all[k].i, i);
      EXPECT_EQ(all[k].j, j);
      EXPECT_EQ(all[k].cls, ev->cls);
      EXPECT_DOUBLE_EQ(all[k].geometry.t_cpa, ev->geometry.t_cpa);
      ++k;
    }
  }
  EXPECT_EQ(k, all.size());
  EXPECT_GE(all.size(), 1u);
}

TEST(EventLog, CarriesAllFields) {
  FlightState a = state("A", -10000, 0, 30000, 90, 100);
  FlightState b = state("B", 0, -10000, 30000, 0, 100);
  auto ev = detect_pair(a, plan_along(a), b, plan_along(b));
  ASSERT_TRUE(ev);
  auto j = event_to_json(*ev);
  for (const char* key : {"i", "j", "class", "t_cpa_s", "d_h_cpa_m", "d_v_cpa_ft", "a_ij_rad", "b_ij_rad", "d_cp_m",
                          "t_cp_s", "first_conflict_s", "last_conflict_s", "d_h_now_m", "d_v_now_ft", "basis_i",
                          "basis_j", "phase_i", "phase_j"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["class"], "conflict");
}

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only <substring>]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "atcdr/conflict.hpp"
#include "atcdr/learner.hpp"
#include "atcdr/synthetic.hpp"
#include "learner_support.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace atcdr;
using namespace atcdr::testing;

namespace {

struct Verdict {
  bool pass{};
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// CPA oracle

ProjectionSegment cv_segment(Vec2 p, Vec2 v, double t1) {
  return {{p.x, p.y, 30000, 0}, {p.x + v.x * t1, p.y + v.y * t1, 30000, t1}, Basis::Track};
}

Verdict cpa_oracle() {
  constexpr double kTol_t = 0.5, kTol_d = 5.0, kBudget_s = 10.0;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> pos(-60000, 60000), vel(-260, 260);
  double worst_t = 0, worst_d = 0;
  for (int n = 0; n < 200; ++n) {
    const Vec2 pa{pos(rng), pos(rng)}, pb{pos(rng), pos(rng)}, va{vel(rng), vel(rng)}, vb{vel(rng), vel(rng)};
    const HorizontalCpa h = cpa_horizontal(cv_segment(pa, va, 600), cv_segment(pb, vb, 600));
    double best_t = 0, best_d = 1e300;
    for (int k = 0; k <= 6000; ++k) {
      const double t = 0.1 * k;
      const double d = distance(pa + t * va, pb + t * vb);
      if (d < best_d) best_d = d, best_t = t;
    }
    worst_t = std::max(worst_t, std::abs(h.t - best_t));
    worst_d = std::max(worst_d, std::abs(h.d - best_d));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst_t <= kTol_t && worst_d <= kTol_d && secs < kBudget_s,
          fmt("200 pairs, max |dt| %.3f s (<= 0.5), max |dd| %.3f m (<= 5), %.2f s (< 10)", worst_t, worst_d, secs)};
}

// ---------------------------------------------------------------------------
// Detection classification

enum class Designed { Loss, Alert, Conflict, None };

struct Pair {
  FlightState a, b;
  Designed designed;
  double closing{};  // relative speed, m/s
};

FlightPlan straight_plan_for(const FlightState& s) {
  const Vec2 end = s.position() + 400000.0 * heading_vector(s.chi);
  FlightPlan p;
  p.waypoints = {{"P0", s.x, s.y, s.alt, 0}, {"P1", end.x, end.y, s.alt, 400000.0 / s.h_speed}};
  p.exit_index = 1;
  return p;
}

/// Class from positions sampled every 0.01 s over the 600 s level horizon.
std::optional<EventClass> dense_classify(const FlightState& a, const FlightState& b) {
  const double h_min = 9260.0;
  const double lower = std::min(a.alt, b.alt);
  const double v_min = lower < 29000.0 ? 1000.0 : 2000.0;
  const bool vertical = std::abs(a.alt - b.alt) < v_min;
  const Vec2 va = a.h_speed * heading_vector(a.chi), vb = b.h_speed * heading_vector(b.chi);
  if (distance(a.position(), b.position()) < h_min && vertical) return EventClass::Loss;
  if (!vertical) return std::nullopt;
  bool violated = false;
  double best_t = 0, best_d = 1e300;
  for (int k = 0; k <= 60000; ++k) {
    const double t = 0.01 * k;
    const double d = distance(a.position() + t * va, b.position() + t * vb);
    violated = violated || d < h_min;
    if (d < best_d) best_d = d, best_t = t;
  }
  if (!violated) return std::nullopt;
  return best_t <= 10.0 ? EventClass::Alert : EventClass::Conflict;
}

/// B placed so the pair reaches lateral miss `miss` at time `t_cpa`.
Pair make_pair(std::mt19937_64& rng, double t_cpa, double miss, double alt_a, double alt_b, Designed d) {
  std::uniform_real_distribution<double> course(0, 360), speed(180, 260), side(0, 1);
  FlightState a{"A", 0, 0, alt_a, deg_to_rad(course(rng)), speed(rng), 0, 0};
  FlightState b{"B", 0, 0, alt_b, deg_to_rad(course(rng)), speed(rng), 0, 0};
  const Vec2 vr = b.h_speed * heading_vector(b.chi) - a.h_speed * heading_vector(a.chi);
  const double s = std::hypot(vr.x, vr.y);
  Vec2 n{-vr.y / s, vr.x / s};
  if (side(rng) < 0.5) n = -1.0 * n;
  const Vec2 r0 = miss * n - t_cpa * vr;
  b.x = r0.x;
  b.y = r0.y;
  return {a, b, d, s};
}

std::vector<Pair> classification_pairs() {
  const double h = 9260.0;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Pair> out;
  auto d_now = [](const Pair& p) { return distance(p.a.position(), p.b.position()); };
  while (out.size() < 25) {  // predicted conflicts, some 1500 ft apart above FL290
    const bool stacked = out.size() % 3 == 0;
    Pair p = make_pair(rng, 60 + 440 * u(rng), 0.85 * h * u(rng), 31000, stacked ? 32500 : 31000, Designed::Conflict);
    if (d_now(p) > 1.05 * h) out.push_back(p);
  }
  while (out.size() < 50) {  // alerts: violation with CPA inside 10 s, not yet a loss
    Pair p = make_pair(rng, 5 + 4.5 * u(rng), h * (0.88 + 0.08 * u(rng)), 35000, 35000, Designed::Alert);
    if (d_now(p) > 1.02 * h) out.push_back(p);
  }
  while (out.size() < 75) {  // current losses
    Pair p = make_pair(rng, -200 + 800 * u(rng), 0.8 * h * u(rng), 24000, 24000 + 900 * u(rng), Designed::Loss);
    if (d_now(p) < 0.95 * h) out.push_back(p);
  }
  while (out.size() < 100) {  // clear: wide miss, vertical separation, diverging, or beyond the horizon
    const int kind = static_cast<int>(out.size() % 4);
    Pair p;
    if (kind == 0) p = make_pair(rng, 30 + 470 * u(rng), h * (1.15 + u(rng)), 30000, 30000, Designed::None);
    if (kind == 1) p = make_pair(rng, 30 + 470 * u(rng), 0.5 * h * u(rng), 25000, 26500, Designed::None);
    if (kind == 2) p = make_pair(rng, -(60 + 400 * u(rng)), 0.5 * h * u(rng), 30000, 30000, Designed::None);
    double entry = 1e9;  // start of the horizontal violation for the beyond-horizon kind
    if (kind == 3) {
      const double t = 900 + 300 * u(rng), miss = 0.5 * h * u(rng);
      p = make_pair(rng, t, miss, 30000, 30000, Designed::None);
      entry = t - std::sqrt(h * h - miss * miss) / p.closing;
    }
    if (d_now(p) > 1.1 * h && entry > 650) out.push_back(p);
  }
  return out;
}

Verdict detection_classification() {
  int agree = 0, design_agree = 0;
  int per_class[4] = {};
  for (const Pair& p : classification_pairs()) {
    const auto oracle = dense_classify(p.a, p.b);
    const auto ev = detect_pair(p.a, straight_plan_for(p.a), p.b, straight_plan_for(p.b));
    const std::optional<EventClass> got = ev ? std::optional<EventClass>(ev->cls) : std::nullopt;
    agree += got == oracle;
    const std::optional<EventClass> designed = p.designed == Designed::Loss    ? std::optional(EventClass::Loss)
                                               : p.designed == Designed::Alert ? std::optional(EventClass::Alert)
                                               : p.designed == Designed::Conflict
                                                   ? std::optional(EventClass::Conflict)
                                                   : std::nullopt;
    design_agree += oracle == designed;
    ++per_class[static_cast<int>(p.designed)];
  }
  return {agree == 100 && design_agree == 100,
          fmt("%d/100 match the 0.01 s oracle (%d loss, %d alert, %d conflict, %d clear); oracle agrees with "
              "construction on %d/100",
              agree, per_class[0], per_class[1], per_class[2], per_class[3], design_agree)};
}

// ---------------------------------------------------------------------------
// Network

Verdict gradient_check() {
  const DgnConfig c = toy_config(Variant::Edges);
  DgnParams p = init_params(c);
  randomize_biases(p, 9);
  const GraphObservation g = toy_graph(21);
  const GraphBatch b = GraphBatch::from(g);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Matrix weights(3, static_cast<Eigen::Index>(c.actions));
  for (Eigen::Index k = 0; k < weights.size(); ++k) weights(k) = nd(rng);
  const DgnForward f = q_forward(c, p, b);
  DgnParams grads = q_backward(c, p, f, b, weights);
  auto loss = [&](const DgnParams& q) { return (q_forward(c, q, b).q.array() * weights.array()).sum(); };
  const GradCheck gc = finite_difference_check(p, grads, loss);
  return {gc.max_rel_error < 1e-4 && gc.checked == p.parameter_count(),
          fmt("N=3, K=2, %zu parameters, max relative error %.2e (< 1e-4)", gc.checked, gc.max_rel_error)};
}

Verdict attention_invariants() {
  const DgnConfig c = toy_config();
  double worst_sum = 0, masked_max = 0, sym_gap = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DgnConfig cs = c;
    cs.seed = seed;
    const DgnParams p = init_params(cs);
    GraphObservation g = toy_graph(seed + 100);
    const DgnForward f = q_forward(cs, p, GraphBatch::from(g));
    for (int layer : {1, 2})
      for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t h = 0; h < c.heads; ++h) {
          double sum = 0;
          for (std::size_t r = 0; r < c.slots(); ++r) {
            const double a = f.attention(layer, i, h, r, c.heads);
            if (g.slot(i, r) < 0) masked_max = std::max(masked_max, std::abs(a));
            sum += a;
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }
    g.obs[2] = g.obs[1];
    g.edges[2] = g.edges[1];
    const DgnForward fs = q_forward(cs, p, GraphBatch::from(g));
    for (std::size_t h = 0; h < c.heads; ++h)
      sym_gap = std::max(sym_gap, std::abs(fs.attention(1, 0, h, 1, c.heads) - fs.attention(1, 0, h, 2, c.heads)));
  }
  return {worst_sum <= 1e-6 && masked_max == 0.0 && sym_gap <= 1e-12,
          fmt("20 nets, max |row sum - 1| %.1e, max masked weight %g, equal-key gap %.1e", worst_sum, masked_max,
              sym_gap)};
}

Verdict loss_arithmetic() {
  const DgnConfig cfg = toy_config();
  const Transition t = one_agent_transition(cfg, 0, 2, -0.5, 0.96, false);
  const Transition* items[] = {&t};
  const double w[] = {1.0};
  const LossOutput out = q_loss(cfg, constant_q(cfg, 0.1), constant_q(cfg, 1.0), items, w);
  const double want = std::pow(-0.5 + 0.96 * 1.0 - 0.1, 2);
  return {std::abs(out.loss - 0.1296) < 1e-12 && std::abs(want - 0.1296) < 1e-12,
          fmt("r=-0.5, gamma=0.96, max target Q=1.0, Q=0.1 -> loss %.12f (0.1296)", out.loss)};
}

Verdict per_statistics() {
  const std::vector<double> td{0.0, 0.3, 0.95, 2.0, 0.1, -1.2, 0.02};
  PrioritizedBuffer<int> buf(16);
  for (std::size_t i = 0; i < td.size(); ++i) buf.add(static_cast<int>(i));
  for (std::size_t i = 0; i < td.size(); ++i) buf.update(i, td[i]);
  std::vector<double> p(td.size());
  double total = 0;
  for (std::size_t i = 0; i < td.size(); ++i) total += p[i] = std::pow(std::abs(td[i]) + 0.05, 0.6);
  for (double& x : p) x /= total;
  std::mt19937_64 rng(31);
  const std::size_t draws = 100000;
  std::vector<double> counts(td.size(), 0.0);
  for (std::size_t k = 0; k < draws / 5; ++k)
    for (std::size_t i : buf.sample(5, 0.4, rng).indices) ++counts[i];
  double worst_z = 0;
  for (std::size_t i = 0; i < td.size(); ++i) {
    const double sigma = std::sqrt(draws * p[i] * (1 - p[i]));
    worst_z = std::max(worst_z, std::abs(counts[i] - draws * p[i]) / sigma);
  }
  const PerConfig c;
  const double b239 = c.beta(239), b240 = c.beta(240);
  return {worst_z <= 3.0 && std::abs(b240 - 1.0) < 1e-12 && b239 < 1.0,
          fmt("1e5 draws over 7 priorities, max deviation %.2f sigma (<= 3); beta(239)=%.4f, beta(240)=%.4f", worst_z,
              b239, b240)};
}

Verdict soft_update_contraction() {
  const DgnConfig c = toy_config();
  DgnParams online = init_params(c);
  DgnConfig c2 = c;
  c2.seed = c.seed + 1;
  DgnParams target = init_params(c2);
  auto gap = [&](DgnParams& t) {
    double s = 0;
    auto tv = t.views();
    auto ov = online.views();
    for (std::size_t k = 0; k < tv.size(); ++k) s += (tv[k].data - ov[k].data).squaredNorm();
    return std::sqrt(s);
  };
  const double g0 = gap(target);
  double worst = 0;
  for (int k = 1; k <= 300; ++k) {
    soft_update(target, online, 0.01);
    worst = std::max(worst, std::abs(gap(target) / g0 - std::pow(0.99, k)));
  }
  return {worst < 1e-9, fmt("300 updates at beta=0.01, max |ratio - 0.99^k| %.1e", worst)};
}

Verdict baseline_parity() {
  DgnConfig edges;
  DgnConfig se;
  se.variant = Variant::SharedEncoder;
  DgnParams pe = init_params(edges);
  DgnParams ps = init_params(se);
  const double ne = static_cast<double>(pe.parameter_count()), ns = static_cast<double>(ps.parameter_count());
  const double rel = std::abs(ns - ne) / ne;
  const CdrEnv env(two_flights(true));
  const GraphObservation& g = env.observation();
  const bool widths = edges.obs_dim == se.obs_dim && edges.edge_dim == se.edge_dim && g.obs[0].size() == edges.obs_dim &&
                      g.edges[1].size() == edges.edge_dim;
  return {rel <= 0.05 && widths, fmt("DGN-with-edges %.0f vs DGN+SE %.0f parameters (%+.2f%%); features %zu/%zu in both",
                                     ne, ns, 100.0 * (ns - ne) / ne, edges.obs_dim, edges.edge_dim)};
}

// ---------------------------------------------------------------------------
// Learner

std::vector<Scenario> synthetic(std::uint64_t first, std::size_t n) {
  std::vector<Scenario> out;
  for (std::size_t s = 0; s < n; ++s) out.push_back(generate_synthetic_scenario(first + s, 2, 900));
  return out;
}

int loss_free(const EvalMetrics& m) {
  int ok = 0;
  for (const auto& e : m.episodes) ok += !e.any_loss;
  return ok;
}

Verdict desk_scale_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = TrainConfig::desk_scale();
  const auto train_set = synthetic(1, 200);
  const auto eval_set = synthetic(10001, 20);
  const EvalMetrics before = evaluate(DgnModel(cfg.net, cfg.optimizer), eval_set);
  const TrainResult res = train(train_set, TrainPattern::AllN, cfg);
  const EvalMetrics after = evaluate(target_policy(res.model), eval_set);
  const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const int ok_after = loss_free(after), ok_before = loss_free(before);
  const std::size_t episodes = cfg.exploration_episodes + cfg.exploitation_episodes;

  // Context only: other initialisations and the do-nothing policy.
  int other_inits = 0;
  for (std::uint64_t seed = 2; seed <= 12; ++seed) {
    DgnConfig net = cfg.net;
    net.seed = seed;
    other_inits += loss_free(evaluate(DgnModel(net), eval_set));
  }
  const int no_action = loss_free(evaluate_policy(eval_set, EnvConfig{}, no_action_policy()));

  return {ok_after >= 16 && ok_before <= 4 && mins < 30.0 && episodes <= 2000,
          fmt("%zu episodes; loss-free on 20 held-out seeds: trained %d/20 (>= 16), untrained %d/20 (<= 4); trained "
              "resolves %.0f%% with %.2f actions, %.2f NM; %.1f min (< 30) [untrained inits 2-12 mean %.1f/20, "
              "NoAction %d/20]",
              episodes, ok_after, ok_before, after.conflicts_resolved_pct, after.avg_resolution_actions,
              after.avg_additional_nm, mins, other_inits / 11.0, no_action)};
}

Verdict determinism() {
  TrainConfig cfg = TrainConfig::desk_scale();
  cfg.net.hidden = 16;
  cfg.net.width = 8;
  cfg.batch = 16;
  cfg.buffer = 500;
  cfg.warmup_episodes = 2;
  cfg.train_steps_per_episode = 4;
  cfg.exploration_episodes = 12;
  cfg.exploitation_episodes = 3;
  cfg.seed = cfg.net.seed = 11;
  const auto scenarios = synthetic(1, 4);
  auto run = [&] {
    std::ostringstream log;
    TrainOptions opts;
    opts.episode_log = &log;
    const TrainResult r = train(scenarios, TrainPattern::AllN, cfg, 1, opts);
    return std::pair{curves_csv(r.curves), log.str()};
  };
  const auto a = run();
  const auto b = run();
  return {a == b && !a.second.empty(),
          fmt("two seeded runs: curves %zu bytes %s, episode log %zu bytes %s", a.first.size(),
              a.first == b.first ? "identical" : "DIFFER", a.second.size(),
              a.second == b.second ? "identical" : "DIFFER")};
}

/// Scripted actions for flight 0; additional NM against flown-then-planned path length.
double plumbing_gap(const Scenario& s, const std::vector<std::pair<int, ActionId>>& script, int steps, double& value) {
  CdrEnv env(s);
  std::vector<Vec2> track{env.flights()[0].state.position()};
  for (int k = 0; k < steps; ++k) {
    auto acts = joint(env);
    for (const auto& [at, a] : script)
      if (at == k) acts[0] = a;
    record_step(env, acts, track);
  }
  const auto& f = env.flights()[0];
  const FlightPlan& plan = env.plan(0);
  if (f.exited) throw std::runtime_error("flight exited during the script");
  std::vector<Vec2> flown_then_planned = track;
  for (std::size_t w = f.next_wp; w <= plan.exit_index; ++w) flown_then_planned.push_back(plan.waypoints[w].position());
  std::vector<Vec2> planned{track.front()};
  for (std::size_t w = 1; w <= plan.exit_index; ++w) planned.push_back(plan.waypoints[w].position());
  const double oracle = path_length_nm(flown_then_planned) - path_length_nm(planned);
  value = additional_nm(env, 0);
  return std::abs(value - oracle);
}

Verdict metrics_plumbing() {
  const std::vector<std::vector<std::pair<int, ActionId>>> scripts{
      {{0, find_action(ActionKind::Course, -20, 120)}},
      {{0, find_action(ActionKind::Course, 10, 60)}, {4, find_action(ActionKind::Course, -10, 30)}},
      {{1, find_action(ActionKind::Course, 20, 180)}, {3, find_action(ActionKind::Speed, kSpeedStep, 60)}},
      {{0, find_action(ActionKind::FlightLevelUp)}, {2, find_action(ActionKind::Course, -10, 120)}},
  };
  double worst = 0, value = 0;
  int cases = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (const auto& script : scripts) {
      worst = std::max(worst, plumbing_gap(generate_synthetic_scenario(seed, 2, 900), script, 10, value));
      ++cases;
    }
  const std::vector<Vec2> legs{{0, 0}, {20000, 20000}, {40000, 0}, {60000, 0}, {80000, 0}, {100000, 0}};
  const Scenario dogleg = single_flight_scenario(polyline_flight("A", legs, 200, 30000), 1000);
  double shortcut = 0;
  worst = std::max(worst, plumbing_gap(dogleg, {{0, find_action(ActionKind::DirectTo, 0, 0, 2)}}, 8, shortcut));
  ++cases;
  return {worst <= 1e-6 && shortcut < 0.0,
          fmt("%d scripted runs, max |additional NM - path-length oracle| %.1e NM (<= 1e-6); direct-to shortcut %.3f NM",
              cases, worst, shortcut)};
}

struct Criterion {
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only = argv[i + 1];

  const std::vector<Criterion> criteria{
      {"cpa-oracle", cpa_oracle},
      {"detection-classification", detection_classification},
      {"gradient-check", gradient_check},
      {"attention-invariants", attention_invariants},
      {"loss-arithmetic", loss_arithmetic},
      {"per-statistics", per_statistics},
      {"soft-target-update", soft_update_contraction},
      {"desk-scale-learning", desk_scale_learning},
      {"baseline-parity", baseline_parity},
      {"determinism", determinism},
      {"metrics-plumbing", metrics_plumbing},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::string(c.name).find(only) == std::string::npos) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ": " << v.detail << std::endl;
  }
  return failed ? 1 : 0;
}

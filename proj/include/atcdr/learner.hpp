#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atcdr/actions.hpp"
#include "atcdr/checkpoint.hpp"
#include "atcdr/dgn.hpp"
#include "atcdr/env.hpp"
#include "atcdr/error.hpp"
#include "atcdr/replay.hpp"
#include "atcdr/scenario.hpp"

namespace atcdr {

struct TrainConfig {
  double gamma = 0.96;
  std::size_t batch = 256;
  std::size_t buffer = 200000;
  double beta_target = 0.01;  // soft target update rate
  double eps_start = 0.6;
  double eps_min = 0.001;
  double eps_decay = 0.996;
  std::size_t train_steps_per_episode = 80;
  std::size_t exploration_episodes = 6000;  // AllN
  std::size_t exploitation_episodes = 2000;
  std::size_t seq_exploration_episodes = 3000;  // per MSeqN stage
  std::size_t seq_exploitation_episodes = 1000;
  std::size_t warmup_episodes = 200;
  PerConfig per;
  DgnConfig net;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;

  /// Small network and budget that trains a 2-flight encounter in minutes.
  static TrainConfig desk_scale() {
    TrainConfig c;
    c.batch = 64;
    c.buffer = 20000;
    c.eps_start = 1.0;
    c.eps_decay = 0.995;
    c.eps_min = 0.02;
    c.train_steps_per_episode = 20;
    c.exploration_episodes = 1400;
    c.exploitation_episodes = 100;
    c.seq_exploration_episodes = 700;
    c.seq_exploitation_episodes = 50;
    c.warmup_episodes = 20;
    c.net.hidden = 64;
    c.net.width = 32;
    c.net.heads = 4;
    c.net.key_dim = 8;
    c.net.init_std = 0.1;
    c.optimizer.kind = OptimizerKind::Adam;
    c.optimizer.lr = 1e-4;
    c.optimizer.clip_norm = 10.0;
    return c;
  }

  void validate() const {
    net.validate();
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("train config: gamma must lie in [0, 1]", "invalid");
    if (batch == 0 || buffer < batch) throw Error("train config: need 0 < batch <= buffer", "invalid");
    if (!(beta_target > 0.0 && beta_target <= 1.0)) throw Error("train config: beta_target must lie in (0, 1]", "invalid");
    if (!(eps_min >= 0.0 && eps_min <= eps_start && eps_start <= 1.0))
      throw Error("train config: need 0 <= eps_min <= eps_start <= 1", "invalid");
    if (!(eps_decay > 0.0 && eps_decay <= 1.0)) throw Error("train config: eps_decay must lie in (0, 1]", "invalid");
    if (!(optimizer.lr > 0.0)) throw Error("train config: learning rate must be positive", "invalid");
  }

  nlohmann::json to_json() const {
    return {
        {"gamma", gamma},
        {"batch", batch},
        {"buffer", buffer},
        {"beta_target", beta_target},
        {"eps_start", eps_start},
        {"eps_min", eps_min},
        {"eps_decay", eps_decay},
        {"train_steps_per_episode", train_steps_per_episode},
        {"exploration_episodes", exploration_episodes},
        {"exploitation_episodes", exploitation_episodes},
        {"seq_exploration_episodes", seq_exploration_episodes},
        {"seq_exploitation_episodes", seq_exploitation_episodes},
        {"warmup_episodes", warmup_episodes},
        {"per", {{"alpha", per.alpha}, {"eps", per.eps}, {"beta_start", per.beta_start}, {"beta_step", per.beta_step}}},
        {"net", net.to_json()},
        {"optimizer",
         {{"kind", optimizer.kind == OptimizerKind::Sgd ? "sgd" : "adam"},
          {"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"clip_norm", optimizer.clip_norm}}},
        {"seed", seed},
    };
  }

  /// Applies the keys present in `j` on top of `base`.
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base) {
    TrainConfig c = base;
    try {
      auto opt = [&](const nlohmann::json& o, const char* key, auto& field) {
        if (o.contains(key)) o.at(key).get_to(field);
      };
      opt(j, "gamma", c.gamma);
      opt(j, "batch", c.batch);
      opt(j, "buffer", c.buffer);
      opt(j, "beta_target", c.beta_target);
      opt(j, "eps_start", c.eps_start);
      opt(j, "eps_min", c.eps_min);
      opt(j, "eps_decay", c.eps_decay);
      opt(j, "train_steps_per_episode", c.train_steps_per_episode);
      opt(j, "exploration_episodes", c.exploration_episodes);
      opt(j, "exploitation_episodes", c.exploitation_episodes);
      opt(j, "seq_exploration_episodes", c.seq_exploration_episodes);
      opt(j, "seq_exploitation_episodes", c.seq_exploitation_episodes);
      opt(j, "warmup_episodes", c.warmup_episodes);
      opt(j, "seed", c.seed);
      if (j.contains("per")) {
        const auto& p = j.at("per");
        opt(p, "alpha", c.per.alpha);
        opt(p, "eps", c.per.eps);
        opt(p, "beta_start", c.per.beta_start);
        opt(p, "beta_step", c.per.beta_step);
      }
      if (j.contains("net")) {
        nlohmann::json merged = c.net.to_json();
        merged.update(j.at("net"));
        c.net = DgnConfig::from_json(merged);
      }
      if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        if (o.contains("kind")) {
          const auto kind = o.at("kind").get<std::string>();
          if (kind != "sgd" && kind != "adam") throw Error("train config: optimizer kind must be sgd or adam", "invalid");
          c.optimizer.kind = kind == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
        }
        opt(o, "lr", c.optimizer.lr);
        opt(o, "beta1", c.optimizer.beta1);
        opt(o, "beta2", c.optimizer.beta2);
        opt(o, "eps", c.optimizer.eps);
        opt(o, "clip_norm", c.optimizer.clip_norm);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("train config: ") + e.what(), "invalid");
    }
    c.validate();
    return c;
  }

  EnvConfig env() const {
    EnvConfig e;
    e.max_neighbors = net.max_neighbors;
    return e;
  }
};

/// Replay item. Agents in `mask` decided at `obs`; `next` is the joint
/// observation at their following decision, built with the adjacency of
/// `obs`. `rewards` holds the discounted return collected in between and
/// `discount` the factor applied to the bootstrap (gamma for a single step).
struct Transition {
  GraphObservation obs;
  GraphObservation next;
  std::vector<std::uint8_t> actions;  // action index per agent
  std::vector<double> rewards;
  std::vector<double> discount;
  std::vector<std::uint8_t> mask;      // agents that enter the loss
  std::vector<std::uint8_t> terminal;  // no bootstrap for this agent
};

/// epsilon-greedy over one Q row; ties in the argmax go to the lowest index.
template <class Rng>
std::size_t epsilon_greedy(std::span<const double> q, double eps, Rng& rng) {
  if (q.empty()) throw Error("epsilon_greedy: empty Q row", "invalid");
  if (!(eps >= 0.0 && eps <= 1.0)) throw Error("epsilon_greedy: epsilon must lie in [0, 1]", "invalid");
  if (eps > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < eps) return std::uniform_int_distribution<std::size_t>(0, q.size() - 1)(rng);
  }
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

inline std::size_t argmax_row(const Matrix& q, std::size_t row) {
  Eigen::Index best{};
  q.row(static_cast<Eigen::Index>(row)).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

struct EpsilonSchedule {
  double value;
  double min;
  double decay;

  void step() { value = std::max(min, decay * value); }
};

inline double td_target(double reward, double discount, double max_next_q, bool terminal) {
  return terminal ? reward : reward + discount * max_next_q;
}

struct LossOutput {
  double loss{};
  std::vector<double> td;  // per sample: mean |delta| over its agents, used as the PER error
  Matrix dq;               // dLoss/dQ for the online forward pass
  GraphBatch batch;
  DgnForward forward;
};

/// Importance-weighted Q-loss: mean over samples of w_s * mean over masked
/// agents of (y - Q(o, a))^2, with y = r + discount * max_a Q'(o', a) from
/// the target network on the successor observation under the stored adjacency.
inline LossOutput q_loss(const DgnConfig& cfg, const DgnParams& online, const DgnParams& target,
                         std::span<const Transition* const> items, std::span<const double> weights) {
  if (items.empty()) throw Error("q_loss: empty batch", "invalid");
  if (weights.size() != items.size()) throw Error("q_loss: one weight per sample required", "invalid");
  std::vector<const GraphObservation*> now, next;
  for (const auto* t : items) {
    if (t->next.slots != t->obs.slots) throw Error("q_loss: successor must reuse the stored adjacency", "invalid");
    now.push_back(&t->obs);
    next.push_back(&t->next);
  }
  LossOutput out;
  out.batch = GraphBatch::from(now);
  out.forward = q_forward(cfg, online, out.batch);
  const Matrix q_next = q_forward(cfg, target, GraphBatch::from(next)).q;
  out.dq = Matrix::Zero(out.forward.q.rows(), out.forward.q.cols());
  const double s_count = static_cast<double>(items.size());
  std::size_t offset = 0;
  for (std::size_t s = 0; s < items.size(); ++s) {
    const Transition& t = *items[s];
    std::size_t agents = 0;
    for (std::uint8_t m : t.mask) agents += m;
    if (agents == 0) throw Error("q_loss: sample without acting agents", "invalid");
    double sum_sq = 0.0;
    double sum_abs = 0.0;
    for (std::size_t i = 0; i < t.obs.n; ++i) {
      if (!t.mask[i]) continue;
      const Eigen::Index row = static_cast<Eigen::Index>(offset + i);
      const double y = td_target(t.rewards[i], t.discount[i], q_next.row(row).maxCoeff(), t.terminal[i] != 0);
      const double delta = y - out.forward.q(row, t.actions[i]);
      sum_sq += delta * delta;
      sum_abs += std::abs(delta);
      out.dq(row, t.actions[i]) = -2.0 * weights[s] * delta / (static_cast<double>(agents) * s_count);
    }
    out.loss += weights[s] * sum_sq / static_cast<double>(agents) / s_count;
    out.td.push_back(sum_abs / static_cast<double>(agents));
    offset += t.obs.n;
  }
  return out;
}

/// Agents that choose an action this step: active, with at least one
/// neighbour, and not executing an earlier maneuver. Everyone else flies
/// NoAction, which lets a pending maneuver run to completion.
inline std::vector<std::uint8_t> acting_agents(const CdrEnv& env) {
  const auto& obs = env.observation();
  std::vector<std::uint8_t> out(env.num_agents(), 0);
  for (std::size_t k = 0; k < env.num_agents(); ++k) {
    const auto& f = env.flights()[k];
    out[k] = f.active() && !f.maneuvering() && obs.neighbor_count(k) > 0;
  }
  return out;
}

using JointPolicy = std::function<std::vector<std::optional<ActionId>>(const CdrEnv&)>;

template <class Rng>
std::vector<std::optional<ActionId>> choose_joint(const DgnModel& model, const CdrEnv& env,
                                                  const std::vector<std::uint8_t>& acting, double eps, Rng& rng) {
  std::vector<std::optional<ActionId>> joint(env.num_agents());
  const bool any = std::any_of(acting.begin(), acting.end(), [](std::uint8_t a) { return a != 0; });
  Matrix q;
  if (any) q = model.q_values(env.observation());
  for (std::size_t k = 0; k < env.num_agents(); ++k) {
    if (!env.flights()[k].active()) continue;
    if (!acting[k]) {
      joint[k] = kNoAction;
      continue;
    }
    const Eigen::RowVectorXd row = q.row(static_cast<Eigen::Index>(k));
    joint[k] = action_id(epsilon_greedy(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), eps, rng));
  }
  return joint;
}

/// Greedy DGN policy under the acting-agent rule.
inline JointPolicy greedy_policy(const DgnModel& model) {
  return [&model](const CdrEnv& env) {
    std::mt19937_64 unused(0);
    return choose_joint(model, env, acting_agents(env), 0.0, unused);
  };
}

/// NoAction for every active agent.
inline JointPolicy no_action_policy() {
  return [](const CdrEnv& env) {
    std::vector<std::optional<ActionId>> joint(env.num_agents());
    for (std::size_t k = 0; k < env.num_agents(); ++k)
      if (env.flights()[k].active()) joint[k] = kNoAction;
    return joint;
  };
}

struct CurveRow {
  std::size_t episode{};
  double mean_reward{};
  std::size_t actions{};
  std::size_t alerts{};  // alert pair-steps
  std::size_t losses{};  // loss pair-steps
};

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string curves_csv(std::span<const CurveRow> rows) {
  std::string out = "episode,mean_reward,actions,alerts,losses\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode) + "," + format_double(r.mean_reward) + "," + std::to_string(r.actions) + "," +
           std::to_string(r.alerts) + "," + std::to_string(r.losses) + "\n";
  }
  return out;
}

/// Running per-episode counters shared by training and evaluation.
struct EpisodeTally {
  double reward_sum{};
  std::size_t reward_count{};
  std::size_t actions{};
  std::size_t alerts{};
  std::size_t losses{};

  void record(const CdrEnv& env, const std::vector<std::optional<ActionId>>& joint, const StepResult& res) {
    for (std::size_t k = 0; k < joint.size(); ++k) {
      if (!res.acted[k]) continue;
      reward_sum += res.rewards[k];
      ++reward_count;
      if (*joint[k] != kNoAction) ++actions;
    }
    for (const auto& ev : env.events()) {
      if (ev.cls == EventClass::Alert) ++alerts;
      if (ev.cls == EventClass::Loss) ++losses;
    }
  }

  CurveRow row(std::size_t episode) const {
    return {episode, reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0, actions, alerts, losses};
  }
};

enum class TrainPattern { AllN, MSeqN };

struct StageRecord {
  std::size_t stage{};
  std::size_t scenarios{};
  std::size_t episodes{};
  std::uint64_t start_hash{};  // online parameters when the stage starts
  std::uint64_t end_hash{};
};

struct TrainOptions {
  std::function<void(const CurveRow&)> on_episode;
  std::ostream* episode_log{nullptr};  // one JSON line per agent and step
};

/// One training stage: epsilon-greedy rollouts over a scenario batch,
/// prioritized replay, and gradient steps after warmup.
class Trainer {
 public:
  Trainer(DgnModel& model, const TrainConfig& cfg, std::uint64_t seed)
      : model_(model),
        cfg_(cfg),
        buffer_(cfg.buffer, cfg.per),
        rng_(seed),
        eps_{cfg.eps_start, cfg.eps_min, cfg.eps_decay} {}

  CurveRow run_episode(const Scenario& scenario, std::size_t episode, bool explore, const TrainOptions& opts = {}) {
    CdrEnv env(scenario, cfg_.env());
    const double eps = explore ? eps_.value : cfg_.eps_min;
    EpisodeTally tally;
    const std::size_t n = env.num_agents();
    std::vector<std::optional<Transition>> open(n);
    auto close = [&](std::size_t k, bool terminal) {
      Transition& t = *open[k];
      t.terminal[k] = terminal;
      t.next = terminal ? t.obs : env.observation_for_slots(t.obs.slots);
      buffer_.add(std::move(t));
      open[k].reset();
    };
    while (!env.done()) {
      const GraphObservation& obs = env.observation();
      const auto acting = acting_agents(env);
      for (std::size_t k = 0; k < n; ++k)
        if (acting[k] && open[k]) close(k, false);
      const auto joint = choose_joint(model_, env, acting, eps, rng_);
      for (std::size_t k = 0; k < n; ++k) {
        if (!acting[k]) continue;
        Transition t;
        t.obs = obs;
        t.actions.assign(n, 0);
        t.rewards.assign(n, 0.0);
        t.discount.assign(n, 1.0);
        t.mask.assign(n, 0);
        t.terminal.assign(n, 0);
        t.actions[k] = static_cast<std::uint8_t>(to_index(*joint[k]));
        t.mask[k] = 1;
        open[k] = std::move(t);
      }
      const StepResult res = env.step(joint);
      tally.record(env, joint, res);
      if (opts.episode_log)
        for (std::size_t k = 0; k < n; ++k)
          if (res.acted[k]) *opts.episode_log << episode_log_line(env, k, joint[k], res.rewards[k]).dump() << "\n";
      for (std::size_t k = 0; k < n; ++k) {
        if (!open[k]) continue;
        open[k]->rewards[k] += open[k]->discount[k] * res.rewards[k];
        open[k]->discount[k] *= cfg_.gamma;
        if (res.done || !env.flights()[k].active()) close(k, true);
      }
    }
    ++episodes_;
    if (episodes_ > cfg_.warmup_episodes && buffer_.size() >= cfg_.batch)
      for (std::size_t s = 0; s < cfg_.train_steps_per_episode; ++s) train_step();
    if (explore) eps_.step();
    return tally.row(episode);
  }

  double train_step() {
    const ReplaySample sample = buffer_.sample(cfg_.batch, cfg_.per.beta(beta_steps_), rng_);
    ++beta_steps_;
    std::vector<const Transition*> items;
    for (std::size_t i : sample.indices) items.push_back(&buffer_[i]);
    LossOutput out = q_loss(model_.cfg, model_.online, model_.target, items, sample.weights);
    DgnParams grads = q_backward(model_.cfg, model_.online, out.forward, out.batch, out.dq);
    model_.optimizer.step(model_.online, grads);
    soft_update(model_.target, model_.online, cfg_.beta_target);
    ++model_.train_step;
    for (std::size_t k = 0; k < sample.indices.size(); ++k) buffer_.update(sample.indices[k], out.td[k]);
    last_loss_ = out.loss;
    return out.loss;
  }

  double epsilon() const { return eps_.value; }
  double last_loss() const { return last_loss_; }
  const PrioritizedBuffer<Transition>& buffer() const { return buffer_; }

 private:
  DgnModel& model_;
  TrainConfig cfg_;
  PrioritizedBuffer<Transition> buffer_;
  std::mt19937_64 rng_;
  EpsilonSchedule eps_;
  std::size_t episodes_{};
  std::size_t beta_steps_{};
  double last_loss_{};
};

struct TrainResult {
  DgnModel model;
  std::vector<CurveRow> curves;
  std::vector<StageRecord> stages;
};

/// AllN trains once over every scenario; MSeqN splits the list into
/// `batches` contiguous groups and re-trains on each in turn, every stage
/// starting from a checkpoint of the previous one.
inline TrainResult train(std::span<const Scenario> scenarios, TrainPattern pattern, const TrainConfig& cfg,
                         std::size_t batches = 1, const TrainOptions& opts = {}) {
  if (scenarios.empty()) throw Error("train: no scenarios", "invalid");
  cfg.validate();
  if (pattern == TrainPattern::MSeqN && (batches == 0 || batches > scenarios.size()))
    throw Error("train: MSeqN needs 1 <= M <= number of scenarios", "invalid");
  const std::size_t stages = pattern == TrainPattern::AllN ? 1 : batches;
  const std::size_t explore = pattern == TrainPattern::AllN ? cfg.exploration_episodes : cfg.seq_exploration_episodes;
  const std::size_t exploit =
      pattern == TrainPattern::AllN ? cfg.exploitation_episodes : cfg.seq_exploitation_episodes;

  TrainResult out;
  out.model = DgnModel(cfg.net, cfg.optimizer);
  std::size_t episode = 0;
  for (std::size_t stage = 0; stage < stages; ++stage) {
    const std::size_t lo = stage * scenarios.size() / stages;
    const std::size_t hi = (stage + 1) * scenarios.size() / stages;
    const auto batch = scenarios.subspan(lo, hi - lo);
    if (stage > 0) out.model = deserialize_checkpoint(serialize_checkpoint(out.model), cfg.net);
    StageRecord rec{stage, batch.size(), explore + exploit, params_hash(out.model.online), 0};
    Trainer trainer(out.model, cfg, cfg.seed + stage);
    for (std::size_t e = 0; e < explore + exploit; ++e) {
      CurveRow row = trainer.run_episode(batch[e % batch.size()], episode++, e < explore, opts);
      if (opts.on_episode) opts.on_episode(row);
      out.curves.push_back(row);
    }
    rec.end_hash = params_hash(out.model.online);
    out.stages.push_back(rec);
  }
  return out;
}

/// Planned remaining route from a position: to the next waypoint, then
/// along the plan up to the exit point. Metres.
inline double route_remaining_m(const FlightPlan& plan, Vec2 p, std::size_t next_wp) {
  if (next_wp > plan.exit_index) return 0.0;
  return distance(p, plan.waypoints[next_wp].position()) + plan_along_at_waypoint(plan, plan.exit_index) -
         plan_along_at_waypoint(plan, next_wp);
}

/// Extra distance of agent k relative to its plan: flown so far plus the
/// planned remainder, minus the planned route from entry. NM, may be negative.
inline double additional_nm(const CdrEnv& env, std::size_t k) {
  const auto& f = env.flights()[k];
  const auto& sf = env.scenario().flights[k];
  const Vec2 start = sf.initial.position();
  const double planned = route_remaining_m(sf.plan, start, initial_next_waypoint(sf.plan, start));
  const double rest = f.exited ? 0.0 : route_remaining_m(sf.plan, f.state.position(), f.next_wp);
  return (f.flown_m + rest - planned) / kMetersPerNm;
}

struct ScenarioOutcome {
  std::string scenario_id;
  std::size_t initial_conflicts{};
  std::size_t resolved{};
  std::size_t actions{};
  std::vector<double> additional_nm;  // one entry per flight that took an action
  bool any_loss{false};
  CurveRow tally;
};

struct EvalMetrics {
  double conflicts_resolved_pct{};
  double avg_resolution_actions{};
  double avg_additional_nm{};
  std::vector<ScenarioOutcome> episodes;

  nlohmann::json to_json() const {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : episodes) {
      eps.push_back({{"scenario", e.scenario_id},
                     {"initial_conflicts", e.initial_conflicts},
                     {"resolved", e.resolved},
                     {"actions", e.actions},
                     {"additional_nm", e.additional_nm},
                     {"any_loss", e.any_loss},
                     {"mean_reward", e.tally.mean_reward},
                     {"alerts", e.tally.alerts},
                     {"losses", e.tally.losses}});
    }
    return {{"conflicts_resolved_pct", conflicts_resolved_pct},
            {"avg_resolution_actions", avg_resolution_actions},
            {"avg_additional_nm", avg_additional_nm},
            {"episodes", eps}};
  }
};

/// Runs one episode under `policy`. A conflict present at the start counts
/// as resolved when the pair never loses separation and has no event left
/// at the end of the episode.
inline ScenarioOutcome run_policy_episode(const Scenario& scenario, const EnvConfig& env_cfg, const JointPolicy& policy,
                                          std::ostream* log = nullptr, std::size_t episode = 0) {
  CdrEnv env(scenario, env_cfg);
  ScenarioOutcome out;
  out.scenario_id = scenario.id;
  using Pair = std::pair<std::size_t, std::size_t>;
  std::vector<Pair> initial;
  for (const auto& ev : env.events())
    if (ev.cls != EventClass::Loss) initial.emplace_back(std::min(ev.i, ev.j), std::max(ev.i, ev.j));
  std::vector<std::uint8_t> failed(initial.size(), 0);
  auto mark = [&](bool final_check) {
    for (const auto& ev : env.events()) {
      const Pair p{std::min(ev.i, ev.j), std::max(ev.i, ev.j)};
      for (std::size_t c = 0; c < initial.size(); ++c)
        if (initial[c] == p && (final_check || ev.cls == EventClass::Loss)) failed[c] = 1;
    }
  };
  EpisodeTally tally;
  std::vector<std::size_t> per_agent(env.num_agents(), 0);
  while (!env.done()) {
    const auto joint = policy(env);
    const StepResult res = env.step(joint);
    tally.record(env, joint, res);
    for (std::size_t k = 0; k < joint.size(); ++k)
      if (joint[k] && *joint[k] != kNoAction) ++per_agent[k];
    if (log)
      for (std::size_t k = 0; k < env.num_agents(); ++k)
        if (res.acted[k]) *log << episode_log_line(env, k, joint[k], res.rewards[k]).dump() << "\n";
    mark(false);
    if (std::any_of(env.events().begin(), env.events().end(),
                    [](const ConflictEvent& ev) { return ev.cls == EventClass::Loss; }))
      out.any_loss = true;
  }
  mark(true);
  out.initial_conflicts = initial.size();
  out.resolved = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 0));
  out.actions = tally.actions;
  for (std::size_t k = 0; k < env.num_agents(); ++k)
    if (per_agent[k] > 0) out.additional_nm.push_back(additional_nm(env, k));
  out.tally = tally.row(episode);
  return out;
}

/// Resolved percentage pools conflicts over all scenarios (100 when there
/// are none); actions average per scenario; additional NM averages over
/// every flight that took an action.
inline EvalMetrics evaluate_policy(std::span<const Scenario> scenarios, const EnvConfig& env_cfg,
                                   const JointPolicy& policy, std::ostream* log = nullptr) {
  EvalMetrics m;
  std::size_t conflicts = 0, resolved = 0, actions = 0, affected = 0;
  double extra = 0.0;
  for (std::size_t e = 0; e < scenarios.size(); ++e) {
    m.episodes.push_back(run_policy_episode(scenarios[e], env_cfg, policy, log, e));
    const auto& o = m.episodes.back();
    conflicts += o.initial_conflicts;
    resolved += o.resolved;
    actions += o.actions;
    for (double d : o.additional_nm) extra += d;
    affected += o.additional_nm.size();
  }
  m.conflicts_resolved_pct = conflicts ? 100.0 * static_cast<double>(resolved) / static_cast<double>(conflicts) : 100.0;
  m.avg_resolution_actions = scenarios.empty() ? 0.0 : static_cast<double>(actions) / static_cast<double>(scenarios.size());
  m.avg_additional_nm = affected ? extra / static_cast<double>(affected) : 0.0;
  return m;
}

/// Deployed policy after training: the Polyak-averaged target weights.
inline DgnModel target_policy(const DgnModel& trained) {
  DgnModel m = trained;
  m.online = trained.target;
  return m;
}

inline EvalMetrics evaluate(const DgnModel& model, std::span<const Scenario> scenarios, std::ostream* log = nullptr) {
  EnvConfig env_cfg;
  env_cfg.max_neighbors = model.cfg.max_neighbors;
  return evaluate_policy(scenarios, env_cfg, greedy_policy(model), log);
}

}  // namespace atcdr

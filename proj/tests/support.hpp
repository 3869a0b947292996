#pragma once

// Shared oracles for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "atcdr/dgn.hpp"

namespace atcdr::testing {

using Vec = std::vector<double>;

inline Vec dense_ref(const Dense& d, const Vec& x) {
  Vec y(static_cast<std::size_t>(d.w.rows()));
  for (Eigen::Index r = 0; r < d.w.rows(); ++r) {
    double s = d.b(r);
    for (Eigen::Index c = 0; c < d.w.cols(); ++c) s += d.w(r, c) * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = s;
  }
  return y;
}

inline Vec relu_ref(Vec v) {
  for (double& x : v) x = std::max(0.0, x);
  return v;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec slice(const Vec& v, std::size_t off, std::size_t len) {
  return Vec(v.begin() + static_cast<std::ptrdiff_t>(off), v.begin() + static_cast<std::ptrdiff_t>(off + len));
}

struct RefConv {
  std::vector<Vec> h;                 // per agent
  std::vector<std::vector<Vec>> att;  // per agent, per head, per slot
};

/// Unvectorised attention convolution: one agent, one head, one slot at a time.
inline RefConv conv_ref(const ConvParams& p, const std::vector<std::vector<Vec>>& inputs,
                        const std::vector<std::vector<bool>>& present, const DgnConfig& cfg) {
  RefConv out;
  const std::size_t n = inputs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec q = dense_ref(p.query, inputs[i][0]);
    Vec mixed(cfg.att_dim(), 0.0);
    std::vector<Vec> att_i;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Vec logits(cfg.slots(), 0.0), w(cfg.slots(), 0.0);
      double mx = -1e300;
      for (std::size_t r = 0; r < cfg.slots(); ++r) {
        if (!present[i][r]) continue;
        const Vec k = dense_ref(p.key, inputs[i][r]);
        double dot = 0;
        for (std::size_t d = 0; d < cfg.key_dim; ++d) dot += q[h * cfg.key_dim + d] * k[h * cfg.key_dim + d];
        logits[r] = dot / std::sqrt(static_cast<double>(cfg.key_dim));
        mx = std::max(mx, logits[r]);
      }
      double sum = 0;
      for (std::size_t r = 0; r < cfg.slots(); ++r)
        if (present[i][r]) sum += (w[r] = std::exp(logits[r] - mx));
      for (std::size_t r = 0; r < cfg.slots(); ++r) {
        if (!present[i][r]) continue;
        w[r] /= sum;
        const Vec v = dense_ref(p.value, inputs[i][r]);
        for (std::size_t d = 0; d < cfg.key_dim; ++d) mixed[h * cfg.key_dim + d] += w[r] * v[h * cfg.key_dim + d];
      }
      att_i.push_back(w);
    }
    out.h.push_back(relu_ref(dense_ref(p.out, mixed)));
    out.att.push_back(att_i);
  }
  return out;
}

struct RefForward {
  std::vector<Vec> q;
  RefConv conv1;
  RefConv conv2;
};

/// Per-agent reference of the whole pipeline, written directly from the
/// layer definitions without the batched gather.
inline RefForward forward_ref(const DgnConfig& cfg, const DgnParams& p, const GraphObservation& g) {
  const std::size_t n = g.n;
  const std::size_t w = g.width();
  const std::size_t L = cfg.width;
  auto enc = [](const Dense& a, const Dense& b, const Vec& x) { return relu_ref(dense_ref(b, relu_ref(dense_ref(a, x)))); };

  std::vector<Vec> ho(n), se(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vec o(g.obs[j].begin(), g.obs[j].end());
    if (cfg.variant == Variant::Edges) {
      ho[j] = enc(p.enc1, p.enc2, o);
    } else {
      for (std::size_t r = 1; r < w; ++r) o.insert(o.end(), g.edge(j, r).begin(), g.edge(j, r).end());
      se[j] = enc(p.enc1, p.enc2, o);
    }
  }
  std::vector<std::vector<Vec>> hc(n, std::vector<Vec>(w)), he(n, std::vector<Vec>(w));
  std::vector<std::vector<bool>> present(n, std::vector<bool>(w));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < w; ++r) {
      const int s = g.slot(i, r);
      present[i][r] = s >= 0;
      if (cfg.variant == Variant::Edges) {
        he[i][r] = enc(p.edge1, p.edge2, Vec(g.edge(i, r).begin(), g.edge(i, r).end()));
        hc[i][r] = concat(s >= 0 ? ho[static_cast<std::size_t>(s)] : Vec(L, 0.0), he[i][r]);
      } else {
        hc[i][r] = s >= 0 ? se[static_cast<std::size_t>(s)] : Vec(2 * L, 0.0);
      }
    }
  }
  RefForward out;
  out.conv1 = conv_ref(p.conv1, hc, present, cfg);
  std::vector<std::vector<Vec>> fc(n, std::vector<Vec>(w));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < w; ++r) {
      const int s = g.slot(i, r);
      const Vec h1 = s >= 0 ? out.conv1.h[static_cast<std::size_t>(s)] : Vec(L, 0.0);
      Vec tail;
      if (cfg.variant == Variant::Edges) {
        tail = he[i][r];
      } else {
        tail = s >= 0 ? slice(se[static_cast<std::size_t>(s)], L, L) : Vec(L, 0.0);
      }
      fc[i][r] = concat(h1, tail);
    }
  }
  out.conv2 = conv_ref(p.conv2, fc, present, cfg);
  for (std::size_t i = 0; i < n; ++i)
    out.q.push_back(dense_ref(p.head, concat(concat(hc[i][0], out.conv1.h[i]), out.conv2.h[i])));
  return out;
}

/// Small graph with three agents and K = 2: agent 0 sees both others, agent 1
/// sees agent 0 only, agent 2 has no neighbours.
inline GraphObservation toy_graph(std::uint64_t seed, std::size_t k = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GraphObservation g;
  g.n = 3;
  g.k = k;
  g.obs.resize(3);
  for (auto& o : g.obs)
    for (double& x : o) x = u(rng);
  g.edges.assign(3 * (k + 1), EdgeVector{});
  g.slots.assign(3 * (k + 1), -1);
  const std::vector<std::vector<int>> nb{{0, 1, 2}, {1, 0}, {2}};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t r = 0; r < nb[i].size() && r <= k; ++r) {
      g.slots[i * (k + 1) + r] = nb[i][r];
      if (r > 0)
        for (double& x : g.edges[i * (k + 1) + r]) x = u(rng);
    }
  }
  return g;
}

inline DgnConfig toy_config(Variant v = Variant::Edges) {
  DgnConfig c;
  c.variant = v;
  c.max_neighbors = 2;
  c.hidden = 6;
  c.width = 4;
  c.heads = 2;
  c.key_dim = 3;
  c.actions = 5;
  c.init_std = 0.5;
  c.seed = 3;
  return c;
}

/// Moves every bias off zero so no ReLU sits exactly at its kink for
/// all-zero input rows (self edges, padding).
inline void randomize_biases(DgnParams& p, std::uint64_t seed, double std = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std);
  for (auto& v : p.views())
    if (v.dims.size() == 1)
      for (Eigen::Index k = 0; k < v.data.size(); ++k) v.data(k) = nd(rng);
}

struct GradCheck {
  double max_rel_error{};
  std::size_t checked{};
};

/// Central finite differences of loss(params) against `analytic` for every
/// parameter element. Relative error uses max(|a|, |n|, 1e-6) as denominator.
template <class LossFn>
GradCheck finite_difference_check(DgnParams params, DgnParams& analytic, LossFn loss, double eps = 1e-5) {
  GradCheck out;
  auto pv = params.views();
  auto gv = analytic.views();
  for (std::size_t t = 0; t < pv.size(); ++t) {
    for (Eigen::Index k = 0; k < pv[t].data.size(); ++k) {
      const double orig = pv[t].data(k);
      pv[t].data(k) = orig + eps;
      const double up = loss(params);
      pv[t].data(k) = orig - eps;
      const double down = loss(params);
      pv[t].data(k) = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = gv[t].data(k);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace atcdr::testing

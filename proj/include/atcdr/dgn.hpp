#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "atcdr/actions.hpp"
#include "atcdr/env.hpp"
#include "atcdr/error.hpp"

namespace atcdr {

enum class Variant : std::uint8_t { Edges, SharedEncoder };

inline const char* to_string(Variant v) { return v == Variant::Edges ? "dgn" : "dgn_se"; }

/// Architecture of the Q-network. Defaults follow the full-size model.
struct DgnConfig {
  Variant variant = Variant::Edges;
  std::size_t obs_dim = kObservationSize;
  std::size_t edge_dim = kEdgeSize;
  std::size_t max_neighbors = 3;  // K
  std::size_t hidden = 512;       // encoder hidden units
  std::size_t width = 128;        // L
  std::size_t heads = 8;          // m
  std::size_t key_dim = 16;       // d_K
  std::size_t actions = kNumActions;
  double init_std = 0.01;
  std::uint64_t seed = 1;

  std::size_t slots() const { return max_neighbors + 1; }
  std::size_t att_dim() const { return heads * key_dim; }
  std::size_t se_input() const { return obs_dim + max_neighbors * edge_dim; }

  void validate() const {
    if (obs_dim == 0 || edge_dim == 0 || max_neighbors == 0 || hidden == 0 || width == 0 || heads == 0 ||
        key_dim == 0 || actions == 0)
      throw Error("dgn config: all dimensions must be positive", "invalid");
    if (!(init_std > 0.0)) throw Error("dgn config: init_std must be positive", "invalid");
  }

  nlohmann::json to_json() const {
    return {{"variant", to_string(variant)}, {"obs_dim", obs_dim},   {"edge_dim", edge_dim},
            {"max_neighbors", max_neighbors}, {"hidden", hidden},     {"width", width},
            {"heads", heads},                 {"key_dim", key_dim},   {"actions", actions},
            {"init_std", init_std},           {"seed", seed}};
  }

  static DgnConfig from_json(const nlohmann::json& j) {
    DgnConfig c;
    c.variant = j.at("variant").get<std::string>() == "dgn_se" ? Variant::SharedEncoder : Variant::Edges;
    c.obs_dim = j.at("obs_dim");
    c.edge_dim = j.at("edge_dim");
    c.max_neighbors = j.at("max_neighbors");
    c.hidden = j.at("hidden");
    c.width = j.at("width");
    c.heads = j.at("heads");
    c.key_dim = j.at("key_dim");
    c.actions = j.at("actions");
    c.init_std = j.at("init_std");
    c.seed = j.at("seed");
    return c;
  }

  /// Hash of the shape-determining fields (FNV-1a).
  std::uint64_t hash() const {
    nlohmann::json j = to_json();
    j.erase("init_std");
    j.erase("seed");
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Affine map y = x W^T + b, rows of x are samples.
struct Dense {
  Matrix w;  // out x in
  RowVector b;

  Matrix forward(const Matrix& x) const {
    Matrix y = x * w.transpose();
    y.rowwise() += b;
    return y;
  }
};

struct ConvParams {
  Dense query;  // f_W
  Dense key;    // f_K
  Dense value;  // f_V
  Dense out;    // f_O, followed by ReLU
};

/// Flat named view of one parameter tensor.
struct TensorView {
  std::string name;
  std::vector<std::size_t> dims;
  Eigen::Map<Eigen::VectorXd> data;
};

struct DgnParams {
  Dense enc1;  // observation encoder (or the single encoder of the SE variant)
  Dense enc2;
  Dense edge1;  // edge encoder, empty in the SE variant
  Dense edge2;
  ConvParams conv1;
  ConvParams conv2;
  Dense head;

  std::vector<TensorView> views() {
    std::vector<TensorView> out;
    auto add_dense = [&](const std::string& name, Dense& d) {
      if (d.w.size() == 0) return;
      out.push_back({name + ".w", {static_cast<std::size_t>(d.w.rows()), static_cast<std::size_t>(d.w.cols())},
                     Eigen::Map<Eigen::VectorXd>(d.w.data(), d.w.size())});
      out.push_back({name + ".b", {static_cast<std::size_t>(d.b.size())},
                     Eigen::Map<Eigen::VectorXd>(d.b.data(), d.b.size())});
    };
    const bool se = edge1.w.size() == 0;
    add_dense(se ? "se_encoder.0" : "obs_encoder.0", enc1);
    add_dense(se ? "se_encoder.1" : "obs_encoder.1", enc2);
    add_dense("edge_encoder.0", edge1);
    add_dense("edge_encoder.1", edge2);
    for (int l = 1; l <= 2; ++l) {
      ConvParams& c = l == 1 ? conv1 : conv2;
      const std::string p = "conv" + std::to_string(l);
      add_dense(p + ".f_w", c.query);
      add_dense(p + ".f_k", c.key);
      add_dense(p + ".f_v", c.value);
      add_dense(p + ".f_o", c.out);
    }
    add_dense("q_head", head);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& v : views()) n += static_cast<std::size_t>(v.data.size());
    return n;
  }

  /// Same shapes, all zeros.
  DgnParams zeros_like() const {
    DgnParams z = *this;
    for (auto& v : z.views()) v.data.setZero();
    return z;
  }

  friend bool operator==(const DgnParams& a, const DgnParams& b) {
    auto va = const_cast<DgnParams&>(a).views();
    auto vb = const_cast<DgnParams&>(b).views();
    if (va.size() != vb.size()) return false;
    for (std::size_t k = 0; k < va.size(); ++k)
      if (va[k].dims != vb[k].dims || va[k].data != vb[k].data) return false;
    return true;
  }
};

namespace detail {

inline Dense make_dense(std::size_t in, std::size_t out, std::normal_distribution<double>& dist,
                        std::mt19937_64& rng) {
  Dense d;
  d.w.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index c = 0; c < d.w.cols(); ++c)
    for (Eigen::Index r = 0; r < d.w.rows(); ++r) d.w(r, c) = dist(rng);
  d.b = RowVector::Zero(static_cast<Eigen::Index>(out));
  return d;
}

inline ConvParams make_conv(std::size_t in, const DgnConfig& c, std::normal_distribution<double>& dist,
                            std::mt19937_64& rng) {
  ConvParams p;
  p.query = make_dense(in, c.att_dim(), dist, rng);
  p.key = make_dense(in, c.att_dim(), dist, rng);
  p.value = make_dense(in, c.att_dim(), dist, rng);
  p.out = make_dense(c.att_dim(), c.width, dist, rng);
  return p;
}

}  // namespace detail

/// Random-normal weights, zero biases; reproducible from `cfg.seed`.
inline DgnParams init_params(const DgnConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> dist(0.0, cfg.init_std);
  DgnParams p;
  const std::size_t two_l = 2 * cfg.width;
  if (cfg.variant == Variant::Edges) {
    p.enc1 = detail::make_dense(cfg.obs_dim, cfg.hidden, dist, rng);
    p.enc2 = detail::make_dense(cfg.hidden, cfg.width, dist, rng);
    p.edge1 = detail::make_dense(cfg.edge_dim, cfg.hidden, dist, rng);
    p.edge2 = detail::make_dense(cfg.hidden, cfg.width, dist, rng);
  } else {
    p.enc1 = detail::make_dense(cfg.se_input(), cfg.hidden, dist, rng);
    p.enc2 = detail::make_dense(cfg.hidden, two_l, dist, rng);
  }
  p.conv1 = detail::make_conv(two_l, cfg, dist, rng);
  p.conv2 = detail::make_conv(two_l, cfg, dist, rng);
  p.head = detail::make_dense(4 * cfg.width, cfg.actions, dist, rng);
  return p;
}

/// One or more graphs flattened into a single disjoint graph. `slots` holds
/// global agent indices (or -1) per (agent, slot) row.
struct GraphBatch {
  std::size_t n{};
  std::size_t width{};  // K + 1
  Matrix obs;           // n x obs_dim
  Matrix edges;         // n*width x edge_dim
  std::vector<int> slots;

  static GraphBatch from(std::span<const GraphObservation* const> graphs) {
    GraphBatch b;
    if (graphs.empty()) throw Error("GraphBatch: no graphs", "invalid");
    b.width = graphs.front()->width();
    for (const auto* g : graphs) {
      if (g->width() != b.width) throw Error("GraphBatch: inconsistent neighbourhood width", "invalid");
      b.n += g->n;
    }
    b.obs.resize(static_cast<Eigen::Index>(b.n), kObservationSize);
    b.edges.resize(static_cast<Eigen::Index>(b.n * b.width), kEdgeSize);
    b.slots.assign(b.n * b.width, -1);
    std::size_t offset = 0;
    for (const auto* g : graphs) {
      for (std::size_t i = 0; i < g->n; ++i) {
        const std::size_t gi = offset + i;
        for (std::size_t c = 0; c < kObservationSize; ++c) b.obs(static_cast<Eigen::Index>(gi), static_cast<Eigen::Index>(c)) = g->obs[i][c];
        for (std::size_t r = 0; r < b.width; ++r) {
          const auto& e = g->edge(i, r);
          const Eigen::Index row = static_cast<Eigen::Index>(gi * b.width + r);
          for (std::size_t c = 0; c < kEdgeSize; ++c) b.edges(row, static_cast<Eigen::Index>(c)) = e[c];
          const int s = g->slot(i, r);
          b.slots[gi * b.width + r] = s >= 0 ? static_cast<int>(offset) + s : -1;
        }
      }
      offset += g->n;
    }
    return b;
  }

  static GraphBatch from(const GraphObservation& g) {
    const GraphObservation* p = &g;
    return from(std::span<const GraphObservation* const>(&p, 1));
  }

  int slot(std::size_t i, std::size_t r) const { return slots[i * width + r]; }

  void validate(const DgnConfig& cfg) const {
    if (width != cfg.slots() || static_cast<std::size_t>(obs.rows()) != n ||
        static_cast<std::size_t>(obs.cols()) != cfg.obs_dim ||
        static_cast<std::size_t>(edges.rows()) != n * width ||
        static_cast<std::size_t>(edges.cols()) != cfg.edge_dim || slots.size() != n * width)
      throw Error("dgn: input shapes do not match the network configuration", "shape");
    for (std::size_t i = 0; i < n; ++i)
      if (slot(i, 0) != static_cast<int>(i)) throw Error("dgn: row 0 of every adjacency must select the agent", "shape");
  }
};

/// Cached activations of one attention convolution.
struct ConvCache {
  Matrix xq;   // n x D query inputs
  Matrix xs;   // n*W x D slot inputs
  Matrix q;    // n x M
  Matrix k;    // n*W x M
  Matrix v;    // n*W x M
  std::vector<double> att;  // n x heads x W
  Matrix mixed;  // n x M
  Matrix z;      // n x L, pre-activation
  Matrix h;      // n x L
};

struct EncoderCache {
  Matrix x;
  Matrix z1;
  Matrix a1;
  Matrix z2;
  Matrix out;
};

struct DgnForward {
  Matrix q;  // n x actions
  EncoderCache enc_obs;
  EncoderCache enc_edge;
  Matrix hc;  // n*W x 2L
  Matrix fc;  // n*W x 2L
  ConvCache conv1;
  ConvCache conv2;
  Matrix head_in;  // n x 4L
  std::size_t n{};
  std::size_t width{};

  /// Attention of agent i, head h, slot r in layer l (1 or 2).
  double attention(int layer, std::size_t i, std::size_t h, std::size_t r, std::size_t heads) const {
    const auto& a = layer == 1 ? conv1.att : conv2.att;
    return a[(i * heads + h) * width + r];
  }
};

namespace detail {

inline Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

inline EncoderCache encode(const Dense& l1, const Dense& l2, const Matrix& x) {
  EncoderCache c;
  c.x = x;
  c.z1 = l1.forward(x);
  c.a1 = relu(c.z1);
  c.z2 = l2.forward(c.a1);
  c.out = relu(c.z2);
  return c;
}

inline void dense_backward(const Dense& d, Dense& g, const Matrix& x, const Matrix& dy, Matrix* dx) {
  g.w.noalias() += dy.transpose() * x;
  g.b += dy.colwise().sum();
  if (dx) *dx = dy * d.w;
}

inline Matrix encode_backward(const Dense& l1, const Dense& l2, Dense& g1, Dense& g2, const EncoderCache& c,
                              const Matrix& dout, bool need_dx) {
  Matrix dz2 = dout.cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  Matrix da1;
  dense_backward(l2, g2, c.a1, dz2, &da1);
  Matrix dz1 = da1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  Matrix dx;
  dense_backward(l1, g1, c.x, dz1, need_dx ? &dx : nullptr);
  return dx;
}

/// Masked multi-head dot-product attention followed by f_O and ReLU.
inline ConvCache conv_forward(const ConvParams& p, const Matrix& xq, const Matrix& xs, std::span<const int> slots,
                              std::size_t n, std::size_t width, std::size_t heads, std::size_t dk) {
  ConvCache c;
  c.xq = xq;
  c.xs = xs;
  c.q = p.query.forward(xq);
  c.k = p.key.forward(xs);
  c.v = p.value.forward(xs);
  const Eigen::Index m = static_cast<Eigen::Index>(heads * dk);
  c.mixed = Matrix::Zero(static_cast<Eigen::Index>(n), m);
  c.att.assign(n * heads * width, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> logits(width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h * dk);
      const Eigen::Index len = static_cast<Eigen::Index>(dk);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < width; ++r) {
        if (slots[i * width + r] < 0) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(i * width + r);
        logits[r] = scale * c.q.row(static_cast<Eigen::Index>(i)).segment(off, len).dot(c.k.row(row).segment(off, len));
        mx = std::max(mx, logits[r]);
      }
      if (!std::isfinite(mx)) throw Error("dgn: attention row with every slot masked", "shape");
      double sum = 0.0;
      double* a = &c.att[(i * heads + h) * width];
      for (std::size_t r = 0; r < width; ++r) {
        if (slots[i * width + r] < 0) continue;
        a[r] = std::exp(logits[r] - mx);
        sum += a[r];
      }
      for (std::size_t r = 0; r < width; ++r) {
        if (slots[i * width + r] < 0) continue;
        a[r] /= sum;
        c.mixed.row(static_cast<Eigen::Index>(i)).segment(off, len) +=
            a[r] * c.v.row(static_cast<Eigen::Index>(i * width + r)).segment(off, len);
      }
    }
  }
  c.z = p.out.forward(c.mixed);
  c.h = relu(c.z);
  return c;
}

struct ConvGrads {
  Matrix dxq;
  Matrix dxs;
};

inline ConvGrads conv_backward(const ConvParams& p, ConvParams& g, const ConvCache& c, const Matrix& dh,
                               std::span<const int> slots, std::size_t n, std::size_t width, std::size_t heads,
                               std::size_t dk) {
  Matrix dz = dh.cwiseProduct((c.z.array() > 0.0).cast<double>().matrix());
  Matrix dmixed;
  dense_backward(p.out, g.out, c.mixed, dz, &dmixed);
  Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
  Matrix dk_ = Matrix::Zero(c.k.rows(), c.k.cols());
  Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> da(width);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index ii = static_cast<Eigen::Index>(i);
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h * dk);
      const Eigen::Index len = static_cast<Eigen::Index>(dk);
      const double* a = &c.att[(i * heads + h) * width];
      double dot_ada = 0.0;
      for (std::size_t r = 0; r < width; ++r) {
        if (slots[i * width + r] < 0) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(i * width + r);
        dv.row(row).segment(off, len) += a[r] * dmixed.row(ii).segment(off, len);
        da[r] = dmixed.row(ii).segment(off, len).dot(c.v.row(row).segment(off, len));
        dot_ada += a[r] * da[r];
      }
      for (std::size_t r = 0; r < width; ++r) {
        if (slots[i * width + r] < 0) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(i * width + r);
        const double dlogit = a[r] * (da[r] - dot_ada) * scale;
        dq.row(ii).segment(off, len) += dlogit * c.k.row(row).segment(off, len);
        dk_.row(row).segment(off, len) += dlogit * c.q.row(ii).segment(off, len);
      }
    }
  }
  ConvGrads out;
  dense_backward(p.query, g.query, c.xq, dq, &out.dxq);
  Matrix dxs_k, dxs_v;
  dense_backward(p.key, g.key, c.xs, dk_, &dxs_k);
  dense_backward(p.value, g.value, c.xs, dv, &dxs_v);
  out.dxs = dxs_k + dxs_v;
  return out;
}

/// Augmented SE input: o_j followed by j's K neighbour edges.
inline Matrix se_inputs(const GraphBatch& b, const DgnConfig& cfg) {
  Matrix x(static_cast<Eigen::Index>(b.n), static_cast<Eigen::Index>(cfg.se_input()));
  for (std::size_t j = 0; j < b.n; ++j) {
    const Eigen::Index jj = static_cast<Eigen::Index>(j);
    x.row(jj).head(static_cast<Eigen::Index>(cfg.obs_dim)) = b.obs.row(jj);
    for (std::size_t r = 1; r < b.width; ++r)
      x.row(jj).segment(static_cast<Eigen::Index>(cfg.obs_dim + (r - 1) * cfg.edge_dim),
                        static_cast<Eigen::Index>(cfg.edge_dim)) =
          b.edges.row(static_cast<Eigen::Index>(j * b.width + r));
  }
  return x;
}

inline Matrix query_rows(const Matrix& slots_matrix, std::size_t n, std::size_t width) {
  Matrix q(static_cast<Eigen::Index>(n), slots_matrix.cols());
  for (std::size_t i = 0; i < n; ++i)
    q.row(static_cast<Eigen::Index>(i)) = slots_matrix.row(static_cast<Eigen::Index>(i * width));
  return q;
}

}  // namespace detail

/// Full forward pass: encoders, two attention convolutions and the Q head.
inline DgnForward q_forward(const DgnConfig& cfg, const DgnParams& p, const GraphBatch& b) {
  b.validate(cfg);
  const std::size_t n = b.n;
  const std::size_t w = b.width;
  const Eigen::Index L = static_cast<Eigen::Index>(cfg.width);
  DgnForward f;
  f.n = n;
  f.width = w;
  f.hc = Matrix::Zero(static_cast<Eigen::Index>(n * w), 2 * L);
  f.fc = Matrix::Zero(static_cast<Eigen::Index>(n * w), 2 * L);

  if (cfg.variant == Variant::Edges) {
    f.enc_obs = detail::encode(p.enc1, p.enc2, b.obs);
    f.enc_edge = detail::encode(p.edge1, p.edge2, b.edges);
    for (std::size_t row = 0; row < n * w; ++row) {
      const int s = b.slots[row];
      const Eigen::Index rr = static_cast<Eigen::Index>(row);
      if (s >= 0) f.hc.row(rr).head(L) = f.enc_obs.out.row(s);
      f.hc.row(rr).tail(L) = f.enc_edge.out.row(rr);
    }
  } else {
    f.enc_obs = detail::encode(p.enc1, p.enc2, detail::se_inputs(b, cfg));
    for (std::size_t row = 0; row < n * w; ++row) {
      const int s = b.slots[row];
      if (s >= 0) f.hc.row(static_cast<Eigen::Index>(row)) = f.enc_obs.out.row(s);
    }
  }

  f.conv1 = detail::conv_forward(p.conv1, detail::query_rows(f.hc, n, w), f.hc, b.slots, n, w, cfg.heads,
                                 cfg.key_dim);
  for (std::size_t row = 0; row < n * w; ++row) {
    const int s = b.slots[row];
    const Eigen::Index rr = static_cast<Eigen::Index>(row);
    if (s >= 0) f.fc.row(rr).head(L) = f.conv1.h.row(s);
    if (cfg.variant == Variant::Edges) {
      f.fc.row(rr).tail(L) = f.enc_edge.out.row(rr);
    } else if (s >= 0) {
      f.fc.row(rr).tail(L) = f.enc_obs.out.row(s).tail(L);
    }
  }
  f.conv2 = detail::conv_forward(p.conv2, detail::query_rows(f.fc, n, w), f.fc, b.slots, n, w, cfg.heads,
                                 cfg.key_dim);

  f.head_in.resize(static_cast<Eigen::Index>(n), 4 * L);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index ii = static_cast<Eigen::Index>(i);
    f.head_in.row(ii).head(2 * L) = f.hc.row(static_cast<Eigen::Index>(i * w));
    f.head_in.row(ii).segment(2 * L, L) = f.conv1.h.row(ii);
    f.head_in.row(ii).tail(L) = f.conv2.h.row(ii);
  }
  f.q = p.head.forward(f.head_in);
  return f;
}

/// Reverse-mode gradients of a scalar loss given dLoss/dQ (n x actions).
inline DgnParams q_backward(const DgnConfig& cfg, const DgnParams& p, const DgnForward& f, const GraphBatch& b,
                            const Matrix& dq) {
  if (dq.rows() != f.q.rows() || dq.cols() != f.q.cols()) throw Error("dgn: gradient shape mismatch", "shape");
  DgnParams g = p.zeros_like();
  const std::size_t n = f.n;
  const std::size_t w = f.width;
  const Eigen::Index L = static_cast<Eigen::Index>(cfg.width);

  Matrix dhead_in;
  detail::dense_backward(p.head, g.head, f.head_in, dq, &dhead_in);
  Matrix dhc = Matrix::Zero(f.hc.rows(), f.hc.cols());
  Matrix dh1 = dhead_in.middleCols(2 * L, L);
  Matrix dh2 = dhead_in.rightCols(L);
  for (std::size_t i = 0; i < n; ++i)
    dhc.row(static_cast<Eigen::Index>(i * w)) += dhead_in.row(static_cast<Eigen::Index>(i)).head(2 * L);

  // Second convolution.
  auto g2 = detail::conv_backward(p.conv2, g.conv2, f.conv2, dh2, b.slots, n, w, cfg.heads, cfg.key_dim);
  Matrix dfc = g2.dxs;
  for (std::size_t i = 0; i < n; ++i)
    dfc.row(static_cast<Eigen::Index>(i * w)) += g2.dxq.row(static_cast<Eigen::Index>(i));
  Matrix denc = Matrix::Zero(f.enc_obs.out.rows(), f.enc_obs.out.cols());
  Matrix dedge;
  if (cfg.variant == Variant::Edges) dedge = Matrix::Zero(f.enc_edge.out.rows(), f.enc_edge.out.cols());
  for (std::size_t row = 0; row < n * w; ++row) {
    const int s = b.slots[row];
    const Eigen::Index rr = static_cast<Eigen::Index>(row);
    if (s >= 0) dh1.row(s) += dfc.row(rr).head(L);
    if (cfg.variant == Variant::Edges) {
      dedge.row(rr) += dfc.row(rr).tail(L);
    } else if (s >= 0) {
      denc.row(s).tail(L) += dfc.row(rr).tail(L);
    }
  }

  // First convolution.
  auto g1 = detail::conv_backward(p.conv1, g.conv1, f.conv1, dh1, b.slots, n, w, cfg.heads, cfg.key_dim);
  dhc += g1.dxs;
  for (std::size_t i = 0; i < n; ++i)
    dhc.row(static_cast<Eigen::Index>(i * w)) += g1.dxq.row(static_cast<Eigen::Index>(i));

  // Gather back into the encoders.
  for (std::size_t row = 0; row < n * w; ++row) {
    const int s = b.slots[row];
    const Eigen::Index rr = static_cast<Eigen::Index>(row);
    if (cfg.variant == Variant::Edges) {
      if (s >= 0) denc.row(s) += dhc.row(rr).head(L);
      dedge.row(rr) += dhc.row(rr).tail(L);
    } else if (s >= 0) {
      denc.row(s) += dhc.row(rr);
    }
  }
  detail::encode_backward(p.enc1, p.enc2, g.enc1, g.enc2, f.enc_obs, denc, false);
  if (cfg.variant == Variant::Edges)
    detail::encode_backward(p.edge1, p.edge2, g.edge1, g.edge2, f.enc_edge, dedge, false);
  return g;
}

/// theta' <- beta * theta + (1 - beta) * theta'.
inline void soft_update(DgnParams& target, DgnParams& online, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw Error("soft_update: beta must lie in (0, 1]", "invalid");
  auto t = target.views();
  auto o = online.views();
  if (t.size() != o.size()) throw Error("soft_update: parameter layouts differ", "shape");
  for (std::size_t k = 0; k < t.size(); ++k) t[k].data = beta * o[k].data + (1.0 - beta) * t[k].data;
}

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

struct Optimizer {
  OptimizerConfig cfg;
  std::uint64_t t{};
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;

  void step(DgnParams& params, DgnParams& grads) {
    auto pv = params.views();
    auto gv = grads.views();
    if (pv.size() != gv.size()) throw Error("optimizer: parameter/gradient layouts differ", "shape");
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : gv) sq += g.data.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    ++t;
    if (cfg.kind == OptimizerKind::Sgd) {
      for (std::size_t k = 0; k < pv.size(); ++k) pv[k].data -= (cfg.lr * scale) * gv[k].data;
      return;
    }
    if (m.empty()) {
      for (const auto& g : gv) {
        m.push_back(Eigen::VectorXd::Zero(g.data.size()));
        v.push_back(Eigen::VectorXd::Zero(g.data.size()));
      }
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const Eigen::VectorXd g = scale * gv[k].data;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      pv[k].data.array() -= cfg.lr * (m[k].array() / c1) / ((v[k].array() / c2).sqrt() + cfg.eps);
    }
  }
};

/// Online and target networks plus optimizer state.
struct DgnModel {
  DgnConfig cfg;
  DgnParams online;
  DgnParams target;
  Optimizer optimizer;
  std::uint64_t train_step{};

  DgnModel() = default;
  explicit DgnModel(const DgnConfig& c, OptimizerConfig opt = {}) : cfg(c), online(init_params(c)), target(online) {
    optimizer.cfg = opt;
  }

  Matrix q_values(const GraphObservation& g) const { return q_forward(cfg, online, GraphBatch::from(g)).q; }
};

}  // namespace atcdr

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "atcdr/dgn.hpp"
#include "atcdr/error.hpp"

// Checkpoint byte layout (all integers and floats little-endian):
//
//   magic        8 bytes  "ATCDRCK1"
//   version      u32      1
//   config_hash  u64      DgnConfig::hash()
//   train_step   u64
//   config_len   u32, config JSON text (config_len bytes)
//   optimizer    u8 kind, f64 lr, f64 beta1, f64 beta2, f64 eps, f64 clip_norm, u64 t
//   array_count  u32
//   arrays       u16 name_len, name, u8 dtype (1 = f64), u32 rank, u64 dims[rank], f64 data[prod(dims)]
//   checksum     u64      FNV-1a over every preceding byte
//
// Array names are prefixed "online/", "target/", "adam_m/" and "adam_v/".

namespace atcdr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'A', 'T', 'C', 'D', 'R', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const std::string& s) { out_.append(s); }
  void array(const std::string& name, const std::vector<std::size_t>& dims, const double* data, std::size_t count) {
    put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    bytes(name);
    put<std::uint8_t>(1);
    put<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put<std::uint64_t>(d);
    out_.append(reinterpret_cast<const char*>(data), count * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void doubles(double* dst, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(dst, s_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error("checkpoint: truncated file", "corrupt");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_{};
};

struct ArrayRecord {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> data;
};

}  // namespace detail

inline std::string serialize_checkpoint(DgnModel& m) {
  detail::Writer w;
  w.bytes(std::string(kCheckpointMagic, 8));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(m.cfg.hash());
  w.put<std::uint64_t>(m.train_step);
  const std::string cfg = m.cfg.to_json().dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  const OptimizerConfig& oc = m.optimizer.cfg;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(oc.kind));
  w.put<double>(oc.lr);
  w.put<double>(oc.beta1);
  w.put<double>(oc.beta2);
  w.put<double>(oc.eps);
  w.put<double>(oc.clip_norm);
  w.put<std::uint64_t>(m.optimizer.t);

  auto online = m.online.views();
  auto target = m.target.views();
  const bool moments = !m.optimizer.m.empty();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(online.size() * (moments ? 4 : 2)));
  for (auto& v : online) w.array("online/" + v.name, v.dims, v.data.data(), static_cast<std::size_t>(v.data.size()));
  for (auto& v : target) w.array("target/" + v.name, v.dims, v.data.data(), static_cast<std::size_t>(v.data.size()));
  if (moments) {
    for (std::size_t k = 0; k < online.size(); ++k)
      w.array("adam_m/" + online[k].name, online[k].dims, m.optimizer.m[k].data(),
              static_cast<std::size_t>(m.optimizer.m[k].size()));
    for (std::size_t k = 0; k < online.size(); ++k)
      w.array("adam_v/" + online[k].name, online[k].dims, m.optimizer.v[k].data(),
              static_cast<std::size_t>(m.optimizer.v[k].size()));
  }
  const std::uint64_t sum = fnv1a(w.str());
  w.put<std::uint64_t>(sum);
  return std::move(w.str());
}

/// Parses a checkpoint. When `expected` is given its hash must match the
/// stored one. Nothing is returned unless the whole file validates.
inline DgnModel deserialize_checkpoint(const std::string& bytes, const std::optional<DgnConfig>& expected = {}) {
  if (bytes.size() < 8 + 4 + 8 + 8 + 8) throw Error("checkpoint: file too short", "corrupt");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, bytes.data() + body, 8);
  if (fnv1a(bytes.substr(0, body)) != stored_sum) throw Error("checkpoint: checksum mismatch", "corrupt");

  detail::Reader r(bytes, body);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw Error("checkpoint: bad magic", "corrupt");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw Error("checkpoint: unsupported version", "corrupt");
  const std::uint64_t hash = r.get<std::uint64_t>();
  const std::uint64_t step = r.get<std::uint64_t>();
  const std::uint32_t cfg_len = r.get<std::uint32_t>();
  DgnConfig cfg;
  try {
    cfg = DgnConfig::from_json(nlohmann::json::parse(r.bytes(cfg_len)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad config block: ") + e.what(), "corrupt");
  }
  if (cfg.hash() != hash) throw Error("checkpoint: config block does not match its hash", "corrupt");
  if (expected && expected->hash() != hash) throw Error("checkpoint: config hash mismatch", "config_mismatch");

  OptimizerConfig oc;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw Error("checkpoint: unknown optimizer kind", "corrupt");
  oc.kind = static_cast<OptimizerKind>(kind);
  oc.lr = r.get<double>();
  oc.beta1 = r.get<double>();
  oc.beta2 = r.get<double>();
  oc.eps = r.get<double>();
  oc.clip_norm = r.get<double>();
  const std::uint64_t opt_t = r.get<std::uint64_t>();

  std::vector<detail::ArrayRecord> arrays(r.get<std::uint32_t>());
  for (auto& a : arrays) {
    a.name = r.bytes(r.get<std::uint16_t>());
    if (r.get<std::uint8_t>() != 1) throw Error("checkpoint: unsupported dtype in " + a.name, "corrupt");
    const std::uint32_t rank = r.get<std::uint32_t>();
    if (rank > 8) throw Error("checkpoint: bad rank in " + a.name, "corrupt");
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      a.dims.push_back(r.get<std::uint64_t>());
      count *= a.dims.back();
    }
    if (count > bytes.size()) throw Error("checkpoint: bad dims in " + a.name, "corrupt");
    a.data.resize(count);
    r.doubles(a.data.data(), count);
  }
  if (!r.at_end()) throw Error("checkpoint: trailing bytes", "corrupt");

  DgnModel m(cfg, oc);
  m.train_step = step;
  m.optimizer.t = opt_t;
  auto online = m.online.views();
  auto target = m.target.views();
  const std::size_t np = online.size();
  if (arrays.size() != 2 * np && arrays.size() != 4 * np) throw Error("checkpoint: wrong array count", "corrupt");
  auto fill = [&](const std::string& prefix, std::size_t base, auto&& dst) {
    for (std::size_t k = 0; k < np; ++k) {
      const auto& a = arrays[base + k];
      if (a.name != prefix + online[k].name || a.dims != online[k].dims)
        throw Error("checkpoint: unexpected array " + a.name, "corrupt");
      dst(k, a.data);
    }
  };
  fill("online/", 0, [&](std::size_t k, const std::vector<double>& d) {
    online[k].data = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
  });
  fill("target/", np, [&](std::size_t k, const std::vector<double>& d) {
    target[k].data = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
  });
  if (arrays.size() == 4 * np) {
    m.optimizer.m.resize(np);
    m.optimizer.v.resize(np);
    fill("adam_m/", 2 * np, [&](std::size_t k, const std::vector<double>& d) {
      m.optimizer.m[k] = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    });
    fill("adam_v/", 3 * np, [&](std::size_t k, const std::vector<double>& d) {
      m.optimizer.v[k] = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    });
  }
  return m;
}

inline void save_checkpoint(DgnModel& m, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(m);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing", "io");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string(), "io");
  }
  std::filesystem::rename(tmp, path);
}

inline DgnModel load_checkpoint(const std::filesystem::path& path, const std::optional<DgnConfig>& expected = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string(), "io");
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), expected);
}

/// Hash of the online parameters, used to tie training stages together.
inline std::uint64_t params_hash(DgnParams& p) {
  std::string bytes;
  for (auto& v : p.views())
    bytes.append(reinterpret_cast<const char*>(v.data.data()), static_cast<std::size_t>(v.data.size()) * sizeof(double));
  return fnv1a(bytes);
}

}  // namespace atcdr

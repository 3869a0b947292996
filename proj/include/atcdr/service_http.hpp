#pragma once

#include <chrono>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "atcdr/error.hpp"
#include "atcdr/service.hpp"

// Must follow Eigen: resolv.h defines `_res`.
#include <httplib.h>

namespace atcdr {

inline int http_status(const std::string& code) {
  if (code == "not_found") return 404;
  if (code == "mode_rejected" || code == "stale_timestamp" || code == "done") return 409;
  if (code == "no_neighbors") return 422;
  if (code == "invalid" || code == "parse") return 400;
  return 500;
}

namespace detail {

inline void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("request body: ") + e.what(), "parse");
  }
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, f(req));
    } catch (const Error& e) {
      reply(res, http_status(e.code()), {{"error", e.code()}, {"message", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", "parse"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace detail

/// JSON endpoints over one session.
inline void register_routes(httplib::Server& server, Session& session) {
  using detail::guarded;
  using detail::parse_body;
  using Req = httplib::Request;

  server.Get("/state", guarded([&](const Req&) { return session.state(); }));
  server.Get("/conflicts", guarded([&](const Req&) { return session.conflicts(); }));
  server.Get(R"(/advisories/([^/]+))", guarded([&](const Req& r) { return session.advisories(r.matches[1]); }));
  server.Get(R"(/transparency/([^/]+))", guarded([&](const Req& r) { return session.transparency(r.matches[1]); }));

  server.Post("/apply", guarded([&](const Req& r) {
    const auto body = parse_body(r);
    return session.apply(body.at("flight").get<std::string>(), body.at("action").get<std::size_t>());
  }));
  server.Post("/mode", guarded([&](const Req& r) {
    session.set_mode(parse_mode(parse_body(r).at("mode").get<std::string>()));
    return nlohmann::json{{"mode", to_string(session.mode())}};
  }));
  server.Post("/step", guarded([&](const Req&) { return session.step(); }));
  server.Post("/play", guarded([&](const Req& r) {
    const int ms = parse_body(r).value("interval_ms", 1000);
    if (ms <= 0) throw Error("interval_ms must be positive", "invalid");
    session.play(std::chrono::milliseconds(ms));
    return nlohmann::json{{"playing", true}, {"interval_ms", ms}};
  }));
  server.Post("/pause", guarded([&](const Req&) {
    session.pause();
    return nlohmann::json{{"playing", false}, {"t", session.time()}};
  }));
  server.Post("/ingest", guarded([&](const Req& r) {
    const auto body = parse_body(r);
    if (!body.is_array()) return session.ingest(TrackUpdate::from_json(body));
    nlohmann::json out = nlohmann::json::array();
    for (const auto& u : body) out.push_back(session.ingest(TrackUpdate::from_json(u)));
    return out;
  }));
}

}  // namespace atcdr

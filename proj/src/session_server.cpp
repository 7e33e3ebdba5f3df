#include "rlperi/session_server.hpp"

#include <httplib.h>

namespace rlperi {

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    reply(res, 200, fn());
  } catch (const NotFoundError& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const ProtocolError& e) {
    reply(res, 409, {{"error", e.what()}});
  } catch (const BadRequestError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const nlohmann::json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

SessionServer::SessionServer(SessionManager& manager) : manager_(manager), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  // The browser client is served from a different origin.
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(/sessions.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
      return manager_.create(SessionRequest::from_json(body));
    });
  });
  srv.Post(R"(/sessions/([^/]+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      if (!body.is_object() || !body.contains("seen") || !body["seen"].is_boolean()) {
        throw BadRequestError("body must carry a boolean 'seen'");
      }
      std::optional<int> turn;
      if (body.contains("turn") && !body["turn"].is_null()) turn = body["turn"].get<int>();
      return manager_.respond(req.matches[1], body["seen"].get<bool>(), turn);
    });
  });
  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager_.status(req.matches[1]); });
  });
  srv.Get(R"(/sessions/([^/]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return manager_.result(req.matches[1]); });
  });
}

SessionServer::~SessionServer() { stop(); }

int SessionServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void SessionServer::run() { server_->listen_after_bind(); }

void SessionServer::stop() {
  if (server_) server_->stop();
}

}  // namespace rlperi

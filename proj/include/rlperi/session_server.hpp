#pragma once

#include <memory>
#include <string>

#include "rlperi/session.hpp"

namespace httplib {
class Server;
}

namespace rlperi {

/// JSON-over-HTTP front end for a SessionManager:
///
///   POST /sessions                 {"strategy", "seed", "sigma_stop", "checkpoint"?}
///   POST /sessions/{id}/response   {"seen": bool, "turn"?: int}
///   GET  /sessions/{id}
///   GET  /sessions/{id}/result
///
/// Errors come back as {"error": message} with 400 (bad request),
/// 404 (unknown session) or 409 (protocol violation).
class SessionServer {
 public:
  explicit SessionServer(SessionManager& manager);
  ~SessionServer();

  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. bind() must have succeeded.
  void run();
  void stop();

 private:
  SessionManager& manager_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace rlperi

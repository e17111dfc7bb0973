#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "visionsim/service.hpp"

namespace visionsim::runner {

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double tick_hz = 20.0;       // autofocal_state rate while a task scene runs
};

/// WebSocket transport for a SessionService. One network thread does all
/// socket I/O; the thread calling run() is the session loop and the only one
/// touching the service. Text frames carry JSON messages.
class WebSocketServer {
 public:
  WebSocketServer(SessionService& service, ServeOptions options);
  ~WebSocketServer();

  WebSocketServer(const WebSocketServer&) = delete;
  WebSocketServer& operator=(const WebSocketServer&) = delete;

  /// The bound port, valid after construction.
  unsigned short port() const noexcept;

  /// Serves until stop() is called.
  void run();
  /// Safe from any thread, including signal handlers run by asio.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace visionsim::runner

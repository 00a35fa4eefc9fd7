#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gridtrade/error.hpp"
#include "gridtrade/protocol.hpp"

namespace gridtrade {

class NetError : public Error {
 public:
  enum class Kind { PortInUse, ConnectionRefused, HandshakeTimeout, HandshakeRejected, DuplicatePeer, PeerUnreachable };

  NetError(Kind kind, const std::string& message);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct PeerInfo {
  std::string node_id;
  std::string address;
  std::string host;
  std::uint16_t listen_port = 0;  // the port the peer accepts connections on
  bool inbound = false;
};

/// Localhost peer transport: newline-delimited JSON over TCP with the
/// ADD_CLIENT / ADD_CLIENT_ACK handshake. All socket work happens on one
/// internal thread; handlers are called from it and must not block.
///
/// When two connections end up linking the same pair of nodes (both dialed
/// at once), both ends keep the one dialed by the smaller node id.
class PeerNetwork {
 public:
  struct Handlers {
    std::function<void(const PeerInfo&)> established;
    std::function<void(const std::string& node_id)> closed;
    std::function<void(const std::string& node_id, PeerMessage)> message;
    std::function<void(const std::string& code, const std::string& text)> problem;
  };

  PeerNetwork(std::string node_id, Handlers handlers,
              std::chrono::milliseconds handshake_timeout = std::chrono::seconds(5));
  ~PeerNetwork();

  PeerNetwork(const PeerNetwork&) = delete;
  PeerNetwork& operator=(const PeerNetwork&) = delete;

  /// Binds 127.0.0.1:port (0 picks a free port) and starts accepting.
  /// Returns the bound port. Throws NetError(PortInUse).
  std::uint16_t listen(std::uint16_t port);

  /// Dials and completes the handshake. Blocks the caller; never call it
  /// from a handler. Throws NetError.
  PeerInfo connect(const std::string& host, std::uint16_t port);

  /// Queues a message for an established peer. False if not connected.
  bool send(const std::string& node_id, const PeerMessage& message);
  /// Returns the number of peers the message was queued for.
  std::size_t broadcast(const PeerMessage& message);

  std::vector<PeerInfo> peers() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gridtrade

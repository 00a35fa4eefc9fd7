#include "gridtrade/peer_net.hpp"

#include <boost/asio.hpp>

#include <atomic>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <thread>

#include "gridtrade/ledger.hpp"

namespace gridtrade {
namespace {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using boost::system::error_code;

constexpr std::size_t kMaxLine = 32u << 20;
constexpr auto kDropGrace = std::chrono::seconds(1);

std::string net_code(NetError::Kind kind) {
  switch (kind) {
    case NetError::Kind::PortInUse: return "PortInUse";
    case NetError::Kind::ConnectionRefused: return "ConnectionRefused";
    case NetError::Kind::HandshakeTimeout: return "HandshakeTimeout";
    case NetError::Kind::HandshakeRejected: return "HandshakeRejected";
    case NetError::Kind::DuplicatePeer: return "DuplicatePeer";
    case NetError::Kind::PeerUnreachable: return "PeerUnreachable";
  }
  return "NetError";
}

}  // namespace

NetError::NetError(Kind kind, const std::string& message) : Error(net_code(kind), message), kind_(kind) {}

struct PeerNetwork::Impl {
  enum class State { handshaking, established, dropped };

  struct Connection {
    explicit Connection(asio::io_context& io) : socket(io), timer(io), buffer(kMaxLine) {}
    tcp::socket socket;
    asio::steady_timer timer;
    asio::streambuf buffer;
    std::deque<std::string> outbox;
    bool writing = false;
    bool open = true;
    State state = State::handshaking;
    bool dialed_by_us = false;
    bool timed_out = false;
    std::uint64_t id = 0;
    PeerInfo remote;
    std::function<void(std::exception_ptr, PeerInfo)> on_handshake;
  };
  using ConnPtr = std::shared_ptr<Connection>;

  Impl(std::string id, Handlers h, std::chrono::milliseconds timeout)
      : node_id(std::move(id)),
        address(derive_address(node_id)),
        handlers(std::move(h)),
        handshake_timeout(timeout),
        acceptor(io),
        work(asio::make_work_guard(io)) {}

  std::string node_id;
  std::string address;
  Handlers handlers;
  std::chrono::milliseconds handshake_timeout;
  std::uint16_t listen_port = 0;

  asio::io_context io;
  tcp::acceptor acceptor;
  asio::executor_work_guard<asio::io_context::executor_type> work;
  std::thread thread;
  std::atomic<bool> stopping{false};

  // io-thread state
  std::map<std::uint64_t, ConnPtr> conns;
  std::map<std::string, ConnPtr> by_peer;
  std::uint64_t next_id = 1;

  // mirror for other threads
  mutable std::mutex mirror_mutex;
  std::map<std::string, PeerInfo> mirror;

  void refresh_mirror() {
    std::lock_guard lock(mirror_mutex);
    mirror.clear();
    for (const auto& [id, c] : by_peer) mirror[id] = c->remote;
  }

  void problem(const std::string& code, const std::string& text) {
    if (handlers.problem) handlers.problem(code, text);
  }

  ConnPtr make_connection(bool dialed) {
    auto c = std::make_shared<Connection>(io);
    c->id = next_id++;
    c->dialed_by_us = dialed;
    conns[c->id] = c;
    return c;
  }

  void start_accept() {
    auto c = make_connection(false);
    acceptor.async_accept(c->socket, [this, c](error_code ec) {
      if (ec) {
        conns.erase(c->id);
        if (ec != asio::error::operation_aborted) start_accept();
        return;
      }
      c->remote.inbound = true;
      c->remote.host = c->socket.remote_endpoint(ec).address().to_string();
      arm_handshake_timer(c);
      read_next(c);
      start_accept();
    });
  }

  void arm_handshake_timer(const ConnPtr& c) {
    c->timer.expires_after(handshake_timeout);
    c->timer.async_wait([this, c](error_code ec) {
      if (ec || c->state != State::handshaking) return;
      c->timed_out = true;
      close(c, "handshake timed out");
    });
  }

  void read_next(const ConnPtr& c) {
    asio::async_read_until(c->socket, c->buffer, '\n', [this, c](error_code ec, std::size_t n) {
      if (ec) {
        close(c, ec == asio::error::eof ? "peer closed the connection" : ec.message());
        return;
      }
      std::string line(asio::buffers_begin(c->buffer.data()), asio::buffers_begin(c->buffer.data()) + n);
      c->buffer.consume(n);
      handle_line(c, line);
      if (c->open) read_next(c);
    });
  }

  void handle_line(const ConnPtr& c, const std::string& line) {
    PeerMessage m;
    try {
      m = decode(line);
    } catch (const ProtocolError& e) {
      problem(e.code(), "from " + describe(c) + ": " + e.what());
      return;
    }
    if (c->state == State::handshaking) {
      handshake_step(c, std::move(m));
      return;
    }
    if (std::holds_alternative<msg::AddClient>(m) || std::holds_alternative<msg::AddClientAck>(m)) {
      problem("DuplicatePeer", "repeated handshake from " + c->remote.node_id + " ignored");
      return;
    }
    if (handlers.message) handlers.message(c->remote.node_id, std::move(m));
  }

  std::string describe(const ConnPtr& c) const {
    return c->remote.node_id.empty() ? c->remote.host + " (handshaking)" : c->remote.node_id;
  }

  bool valid_identity(const std::string& id, const std::string& addr, std::string& why) const {
    if (id.empty()) why = "empty node id";
    else if (id == node_id) why = "peer claims our own node id";
    else if (addr != derive_address(id)) why = "address does not match node id " + id;
    else return true;
    return false;
  }

  void handshake_step(const ConnPtr& c, PeerMessage m) {
    std::string why;
    if (!c->dialed_by_us) {
      const auto* add = std::get_if<msg::AddClient>(&m);
      if (!add) {
        problem("MalformedMessage", std::string(kind_name(m)) + " before handshake from " + describe(c) + " ignored");
        return;
      }
      if (!valid_identity(add->node_id, add->address, why)) {
        problem("HandshakeRejected", why);
        close(c, why);
        return;
      }
      c->remote.node_id = add->node_id;
      c->remote.address = add->address;
      c->remote.listen_port = add->listen_port;
      if (!register_peer(c)) {
        // The dialer sees the ACK, finds its own duplicate and gives up.
        problem("DuplicatePeer", "second connection from " + add->node_id + " refused");
        write(c, encode(msg::AddClientAck{node_id, address}));
        c->timer.cancel();
        drop(c);
        return;
      }
      write(c, encode(msg::AddClientAck{node_id, address}));
      finish_handshake(c);
      return;
    }
    const auto* ack = std::get_if<msg::AddClientAck>(&m);
    if (!ack) {
      problem("MalformedMessage", std::string(kind_name(m)) + " before handshake from " + describe(c) + " ignored");
      return;
    }
    if (!valid_identity(ack->node_id, ack->address, why)) {
      complete(c, std::make_exception_ptr(NetError(NetError::Kind::HandshakeRejected, why)));
      close(c, why);
      return;
    }
    c->remote.node_id = ack->node_id;
    c->remote.address = ack->address;
    if (!register_peer(c)) {
      complete(c, std::make_exception_ptr(
                      NetError(NetError::Kind::DuplicatePeer, "already connected to " + ack->node_id)));
      close(c, "duplicate peer");
      return;
    }
    finish_handshake(c);
  }

  void finish_handshake(const ConnPtr& c) {
    c->timer.cancel();
    refresh_mirror();
    complete(c, nullptr);
    if (handlers.established) handlers.established(c->remote);
  }

  void complete(const ConnPtr& c, std::exception_ptr error) {
    if (auto cb = std::exchange(c->on_handshake, nullptr)) cb(error, c->remote);
  }

  // Keeps at most one connection per remote node.
  bool register_peer(const ConnPtr& c) {
    const auto it = by_peer.find(c->remote.node_id);
    if (it == by_peer.end()) {
      by_peer[c->remote.node_id] = c;
      c->state = State::established;
      return true;
    }
    const auto& old = it->second;
    const auto dialer = [&](const ConnPtr& x) { return x->dialed_by_us ? node_id : x->remote.node_id; };
    const std::string preferred = std::min(node_id, c->remote.node_id);
    if (dialer(c) == dialer(old) || dialer(c) != preferred) return false;
    drop(old);
    it->second = c;
    c->state = State::established;
    return true;
  }

  // Still delivers what arrives for a moment, then closes.
  void drop(const ConnPtr& c) {
    c->state = State::dropped;
    c->timer.expires_after(kDropGrace);
    c->timer.async_wait([this, c](error_code ec) {
      if (!ec) close(c, "superseded by another connection");
    });
  }

  void write(const ConnPtr& c, std::string line) {
    if (!c->open) return;
    line.push_back('\n');
    c->outbox.push_back(std::move(line));
    if (!c->writing) flush(c);
  }

  void flush(const ConnPtr& c) {
    if (c->outbox.empty() || !c->open) {
      c->writing = false;
      return;
    }
    c->writing = true;
    asio::async_write(c->socket, asio::buffer(c->outbox.front()), [this, c](error_code ec, std::size_t) {
      if (ec) {
        close(c, "write failed: " + ec.message());
        return;
      }
      c->outbox.pop_front();
      flush(c);
    });
  }

  void close(const ConnPtr& c, const std::string& why) {
    if (!c->open) return;
    c->open = false;
    error_code ignored;
    c->socket.shutdown(tcp::socket::shutdown_both, ignored);
    c->socket.close(ignored);
    c->timer.cancel();
    if (c->on_handshake) {
      std::exception_ptr error;
      if (c->timed_out)
        error = std::make_exception_ptr(NetError(NetError::Kind::HandshakeTimeout, "handshake timed out"));
      else
        error = std::make_exception_ptr(
            NetError(NetError::Kind::HandshakeRejected, "connection closed during handshake: " + why));
      complete(c, error);
    }
    conns.erase(c->id);
    const auto it = by_peer.find(c->remote.node_id);
    if (it != by_peer.end() && it->second == c) {
      by_peer.erase(it);
      refresh_mirror();
      if (handlers.closed) handlers.closed(c->remote.node_id);
    }
  }

  void start_connect(const std::string& host, std::uint16_t port,
                     std::function<void(std::exception_ptr, PeerInfo)> done) {
    auto c = make_connection(true);
    c->remote.host = host;
    c->remote.listen_port = port;
    c->on_handshake = std::move(done);
    arm_handshake_timer(c);
    error_code ec;
    const auto addr = asio::ip::make_address(host == "localhost" ? "127.0.0.1" : host, ec);
    if (ec) {
      complete(c, std::make_exception_ptr(NetError(NetError::Kind::PeerUnreachable, "bad host " + host)));
      close(c, "bad host");
      return;
    }
    c->socket.async_connect(tcp::endpoint(addr, port), [this, c, host, port](error_code ec) {
      if (!c->open) return;
      if (ec) {
        const auto kind = c->timed_out ? NetError::Kind::HandshakeTimeout
                          : ec == asio::error::connection_refused ? NetError::Kind::ConnectionRefused
                                                                  : NetError::Kind::PeerUnreachable;
        complete(c, std::make_exception_ptr(
                        NetError(kind, "cannot reach " + host + ":" + std::to_string(port) + ": " + ec.message())));
        close(c, ec.message());
        return;
      }
      write(c, encode(msg::AddClient{node_id, listen_port, address}));
      read_next(c);
    });
  }

  void shutdown() {
    stopping = true;
    if (!thread.joinable()) return;
    asio::post(io, [this] {
      error_code ignored;
      acceptor.close(ignored);
      auto all = conns;
      for (auto& [id, c] : all) {
        complete(c, std::make_exception_ptr(NetError(NetError::Kind::PeerUnreachable, "network stopped")));
        close(c, "shutting down");
      }
      work.reset();
    });
    thread.join();
  }
};

PeerNetwork::PeerNetwork(std::string node_id, Handlers handlers, std::chrono::milliseconds handshake_timeout)
    : impl_(std::make_unique<Impl>(std::move(node_id), std::move(handlers), handshake_timeout)) {
  impl_->thread = std::thread([this] { impl_->io.run(); });
}

PeerNetwork::~PeerNetwork() { stop(); }

std::uint16_t PeerNetwork::listen(std::uint16_t port) {
  std::promise<std::uint16_t> bound;
  asio::post(impl_->io, [&] {
    auto& acc = impl_->acceptor;
    error_code ec;
    const tcp::endpoint ep(asio::ip::address_v4::loopback(), port);
    acc.open(ep.protocol(), ec);
    if (!ec) acc.set_option(tcp::acceptor::reuse_address(true), ec);
    if (!ec) acc.bind(ep, ec);
    if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) {
      error_code ignored;
      acc.close(ignored);
      bound.set_exception(std::make_exception_ptr(NetError(
          NetError::Kind::PortInUse, "cannot listen on port " + std::to_string(port) + ": " + ec.message())));
      return;
    }
    impl_->listen_port = acc.local_endpoint().port();
    impl_->start_accept();
    bound.set_value(impl_->listen_port);
  });
  return bound.get_future().get();
}

PeerInfo PeerNetwork::connect(const std::string& host, std::uint16_t port) {
  if (impl_->stopping) throw NetError(NetError::Kind::PeerUnreachable, "network stopped");
  auto result = std::make_shared<std::promise<PeerInfo>>();
  auto future = result->get_future();
  asio::post(impl_->io, [this, host, port, result] {
    impl_->start_connect(host, port, [result](std::exception_ptr error, PeerInfo info) {
      if (error)
        result->set_exception(error);
      else
        result->set_value(std::move(info));
    });
  });
  try {
    return future.get();
  } catch (const std::future_error&) {
    throw NetError(NetError::Kind::PeerUnreachable, "network stopped while connecting");
  }
}

bool PeerNetwork::send(const std::string& node_id, const PeerMessage& message) {
  {
    std::lock_guard lock(impl_->mirror_mutex);
    if (!impl_->mirror.count(node_id)) return false;
  }
  asio::post(impl_->io, [this, node_id, line = encode(message)]() mutable {
    const auto it = impl_->by_peer.find(node_id);
    if (it != impl_->by_peer.end()) impl_->write(it->second, std::move(line));
  });
  return true;
}

std::size_t PeerNetwork::broadcast(const PeerMessage& message) {
  std::size_t n = 0;
  for (const auto& p : peers()) n += send(p.node_id, message) ? 1 : 0;
  return n;
}

std::vector<PeerInfo> PeerNetwork::peers() const {
  std::lock_guard lock(impl_->mirror_mutex);
  std::vector<PeerInfo> out;
  for (const auto& [id, info] : impl_->mirror) out.push_back(info);
  return out;
}

void PeerNetwork::stop() { impl_->shutdown(); }

}  // namespace gridtrade

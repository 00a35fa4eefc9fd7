#include "gridtrade/api_server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <sys/socket.h>

#include <atomic>
#include <functional>
#include <list>
#include <mutex>
#include <thread>

#include "gridtrade/mlff.hpp"
#include "gridtrade/protocol.hpp"

namespace gridtrade {
namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

http::status status_for(const std::string& code) {
  static const std::map<std::string, http::status> table{
      {"BadRequest", http::status::bad_request},
      {"InvalidOrder", http::status::bad_request},
      {"NotFound", http::status::not_found},
      {"UnknownOrder", http::status::not_found},
      {"NoModel", http::status::not_found},
      {"NoWeather", http::status::not_found},
      {"InsufficientBalance", http::status::conflict},
      {"InsufficientSurplus", http::status::conflict},
      {"Busy", http::status::conflict},
      {"NoPeer", http::status::conflict},
      {"DuplicatePeer", http::status::conflict},
      {"GridShapeError", http::status::unprocessable_entity},
      {"ConnectionRefused", http::status::bad_gateway},
      {"PeerUnreachable", http::status::bad_gateway},
      {"HandshakeRejected", http::status::bad_gateway},
      {"HandshakeTimeout", http::status::gateway_timeout},
      {"MethodNotAllowed", http::status::method_not_allowed},
  };
  const auto it = table.find(code);
  return it == table.end() ? http::status::internal_server_error : it->second;
}

Response reply(const Request& req, http::status status, const json& body) {
  Response res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

Response error_reply(const Request& req, const std::string& code, const std::string& message) {
  return reply(req, status_for(code), json{{"error", code}, {"message", message}});
}

std::map<std::string, std::string> query_params(std::string_view target) {
  std::map<std::string, std::string> out;
  const auto q = target.find('?');
  if (q == std::string_view::npos) return out;
  auto rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const auto pair = rest.substr(0, amp);
    const auto eq = pair.find('=');
    out[std::string(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(pair.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return out;
}

json parse_body(const Request& req) {
  json body = json::parse(req.body(), nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw Error("BadRequest", "body must be a JSON object");
  return body;
}

std::uint64_t body_uint(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_number_unsigned())
    throw Error("BadRequest", std::string("'") + key + "' must be a non-negative integer");
  return it->get<std::uint64_t>();
}

std::string body_string(const json& body, const char* key, bool required = true) {
  const auto it = body.find(key);
  if (it == body.end() && !required) return {};
  if (it == body.end() || !it->is_string()) throw Error("BadRequest", std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

json peer_json(const PeerInfo& p) {
  return {{"node_id", p.node_id},
          {"address", p.address},
          {"host", p.host},
          {"listen_port", p.listen_port},
          {"inbound", p.inbound}};
}

}  // namespace

json to_json(const TradeSession& s) {
  json j{{"order_id", s.order_id},
         {"role", to_string(s.role)},
         {"buyer", s.buyer},
         {"seller", s.seller},
         {"units", s.units},
         {"created_at", format_iso8601(s.created_at)},
         {"state", to_string(s.state)},
         {"mining_attempts", s.mining_attempts}};
  j["reject_reason"] = s.reject_reason.empty() ? json(nullptr) : json(s.reject_reason);
  j["block_index"] = s.block_index ? json(*s.block_index) : json(nullptr);
  j["block_hash"] = s.block_hash.empty() ? json(nullptr) : json(s.block_hash);
  return j;
}

json to_json(const NodeEvent& e) {
  return {{"seq", e.seq}, {"time", format_iso8601(e.time)}, {"type", e.type}, {"message", e.message}, {"data", e.data}};
}

json to_json(const ForecastCurve& c) {
  json points = json::array();
  for (std::size_t i = 0; i < c.watts.size(); ++i)
    points.push_back({{"time", format_iso8601(c.times[i])}, {"watts", c.watts[i]}});
  return {{"date", c.date}, {"step_seconds", kMinuteAheadStep.count()}, {"points", points}};
}

json status_json(const Node& node, const NodeSnapshot& s, std::uint16_t api_port) {
  const auto& cfg = node.config();
  json peers = json::array();
  for (const auto& p : s.peers) peers.push_back(peer_json(p));
  json pending = json::array();
  for (const auto& t : s.sessions)
    if (t.open()) pending.push_back(to_json(t));
  return {{"node_id", s.node_id},
          {"address", s.address},
          {"clock", format_iso8601(node.now())},
          {"clock_mode", to_string(cfg.clock_mode)},
          {"clock_factor", cfg.clock_factor},
          {"listen_port", s.listen_port},
          {"api_port", api_port},
          {"peer_count", s.peers.size()},
          {"peers", peers},
          {"market",
           {{"data", s.market_data},
            {"interval_start", format_iso8601(s.interval_start)},
            {"interval_seconds", cfg.market_interval.count()},
            {"generation_w", s.market.gen_now},
            {"demand_w", s.market.demand_now},
            {"surplus_w", s.market.surplus_now},
            {"available_wh", s.available_wh},
            {"sold_wh", s.market.energy_sold_interval},
            {"bought_wh", s.market.energy_bought_interval}}},
          {"balance", s.balance},
          {"endowment", cfg.endowment},
          {"chain",
           {{"height", s.chain.size()},
            {"difficulty_bits", cfg.difficulty_bits},
            {"last_block", block_to_json(s.chain.back())}}},
          {"sessions", pending},
          {"mining", s.mining},
          {"forecast", s.forecast ? to_json(*s.forecast) : json(nullptr)}};
}

struct ApiServer::Impl {
  Impl(Node& n, std::uint16_t port) : node(n), acceptor(io) {
    beast::error_code ec;
    const tcp::endpoint ep(asio::ip::address_v4::loopback(), port);
    acceptor.open(ep.protocol(), ec);
    if (!ec) acceptor.set_option(tcp::acceptor::reuse_address(true), ec);
    if (!ec) acceptor.bind(ep, ec);
    if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec)
      throw NetError(NetError::Kind::PortInUse,
                     "cannot serve the API on port " + std::to_string(port) + ": " + ec.message());
    bound = acceptor.local_endpoint().port();
    accept_thread = std::thread([this] { accept_loop(); });
  }

  Node& node;
  asio::io_context io;
  tcp::acceptor acceptor;
  std::uint16_t bound = 0;
  std::atomic<bool> stopping{false};
  std::thread accept_thread;
  std::mutex conn_mutex;
  struct Conn {
    int fd = -1;
    std::thread thread;
    std::atomic<bool> done{false};
  };
  std::list<Conn> conns;

  void accept_loop() {
    for (;;) {
      tcp::socket socket(io);
      beast::error_code ec;
      acceptor.accept(socket, ec);
      if (stopping) break;
      if (ec) continue;
      std::lock_guard lock(conn_mutex);
      reap();
      auto& c = conns.emplace_back();
      c.fd = socket.native_handle();
      c.thread = std::thread([this, &c, s = std::move(socket)]() mutable {
        serve(std::move(s));
        c.done = true;
      });
    }
  }

  void reap() {
    for (auto it = conns.begin(); it != conns.end();) {
      if (it->done) {
        it->thread.join();
        it = conns.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve(tcp::socket socket) {
    beast::flat_buffer buffer;
    beast::error_code ec;
    while (!stopping) {
      Request req;
      http::read(socket, buffer, req, ec);
      if (ec) return;
      if (websocket::is_upgrade(req)) {
        if (std::string(req.target()).substr(0, req.target().find('?')) == "/events") stream_events(std::move(socket), req);
        return;
      }
      auto res = handle(req);
      http::write(socket, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    socket.shutdown(tcp::socket::shutdown_send, ec);
  }

  // Runs on its own io_context so the read side can answer pings and close
  // frames while the timer side pushes events.
  void stream_events(tcp::socket socket, const Request& req) {
    asio::io_context local;
    tcp::socket moved(local);
    beast::error_code ec;
    const int fd = socket.release(ec);
    if (ec) return;
    moved.assign(tcp::v4(), fd, ec);
    if (ec) return;
    websocket::stream<tcp::socket> ws(std::move(moved));
    ws.accept(req, ec);
    if (ec) return;

    std::uint64_t last = node.events().last_seq();
    const auto params = query_params(std::string(req.target()));
    if (const auto it = params.find("since"); it != params.end()) {
      try {
        last = std::stoull(it->second);
      } catch (const std::exception&) {
      }
    }
    ws.text(true);
    ws.write(asio::buffer(json{{"type", "hello"}, {"seq", last}, {"status", status_json(node, *node.snapshot(), bound)}}
                              .dump()),
             ec);
    if (ec) return;

    bool done = false;
    beast::flat_buffer inbound;
    std::function<void()> read_next = [&] {
      ws.async_read(inbound, [&](beast::error_code rec, std::size_t) {
        if (rec) {
          done = true;
          return;
        }
        inbound.consume(inbound.size());
        read_next();
      });
    };
    read_next();

    asio::steady_timer timer(local);
    int idle = 0;
    std::function<void()> tick = [&] {
      timer.expires_after(std::chrono::milliseconds(100));
      timer.async_wait([&](beast::error_code tec) {
        if (tec || done) return;
        if (stopping || node.events().closed()) {
          done = true;
          ws.async_close(websocket::close_code::going_away, [](beast::error_code) {});
          return;
        }
        const auto events = node.events().wait_after(last, std::chrono::milliseconds(0));
        if (events.empty()) {
          if (++idle < 50) return tick();
          idle = 0;
          return ws.async_ping({}, [&](beast::error_code pec) { pec ? void(done = true) : tick(); });
        }
        idle = 0;
        json batch = json::array();
        for (const auto& e : events) batch.push_back(to_json(e));
        last = events.back().seq;
        write_batch(ws, std::move(batch), 0, done, tick);
      });
    };
    tick();
    while (!done && !stopping) local.run_one_for(std::chrono::milliseconds(200));
    ws.next_layer().close(ec);
  }

  // One frame per event, written in order.
  static void write_batch(websocket::stream<tcp::socket>& ws, json batch, std::size_t i, bool& done,
                          std::function<void()>& tick) {
    if (i == batch.size()) return tick();
    auto text = std::make_shared<std::string>(batch[i].dump());
    ws.async_write(asio::buffer(*text), [&ws, batch = std::move(batch), i, &done, &tick, text](
                                            beast::error_code ec, std::size_t) mutable {
      if (ec) {
        done = true;
        return;
      }
      write_batch(ws, std::move(batch), i + 1, done, tick);
    });
  }

  Response handle(const Request& req) {
    const std::string target(req.target());
    const auto path = target.substr(0, target.find('?'));
    const bool get = req.method() == http::verb::get;
    const bool post = req.method() == http::verb::post;
    try {
      if (path == "/status" && get) return reply(req, http::status::ok, status_json(node, *node.snapshot(), bound));
      if (path == "/chain" && get) {
        const auto snap = node.snapshot();
        json blocks = json::array();
        for (const auto& b : snap->chain) blocks.push_back(block_to_json(b));
        return reply(req, http::status::ok,
                     {{"height", snap->chain.size()}, {"difficulty_bits", node.config().difficulty_bits},
                      {"blocks", blocks}});
      }
      if (path == "/balance" && get) {
        const auto snap = node.snapshot();
        return reply(req, http::status::ok,
                     {{"node_id", snap->node_id}, {"address", snap->address}, {"balance", snap->balance},
                      {"wallets", snap->wallets}});
      }
      if (path == "/sessions" && get) {
        json list = json::array();
        for (const auto& s : node.snapshot()->sessions) list.push_back(to_json(s));
        return reply(req, http::status::ok, list);
      }
      if (path == "/forecast" && get) {
        const auto params = query_params(target);
        Instant day = start_of_day(node.now());
        if (const auto it = params.find("date"); it != params.end()) {
          const auto parsed = parse_iso8601(it->second + "T00:00:00Z");
          if (!parsed) throw Error("BadRequest", "date must be YYYY-MM-DD");
          day = *parsed;
        }
        return reply(req, http::status::ok, to_json(node.forecast(day)));
      }
      if (path == "/trade/request" && post) {
        const auto body = parse_body(req);
        const auto session = node.request_trade(body_uint(body, "units"), body_string(body, "seller", false));
        return reply(req, http::status::created, to_json(session));
      }
      if (path == "/trade/approve" && post) {
        const auto body = parse_body(req);
        return reply(req, http::status::ok, to_json(node.approve_trade(body_string(body, "order_id"))));
      }
      if (path == "/peer/add" && post) {
        const auto body = parse_body(req);
        const auto port = body_uint(body, "port");
        if (port == 0 || port > 65535) throw Error("BadRequest", "port out of range");
        return reply(req, http::status::ok,
                     peer_json(node.add_peer(body_string(body, "host"), static_cast<std::uint16_t>(port))));
      }
      for (const char* known : {"/status", "/chain", "/balance", "/sessions", "/forecast", "/trade/request",
                                "/trade/approve", "/peer/add"})
        if (path == known) return error_reply(req, "MethodNotAllowed", req.method_string().to_string() + " " + path);
      return error_reply(req, "NotFound", "no route " + path);
    } catch (const mlff::MlffError& e) {
      return error_reply(req, e.code(), e.what());
    } catch (const Error& e) {
      return error_reply(req, e.code(), e.what());
    } catch (const std::exception& e) {
      return error_reply(req, "InternalError", e.what());
    }
  }

  void stop() {
    if (stopping.exchange(true)) return;
    // Wake the blocking accept with a throwaway connection.
    {
      beast::error_code ec;
      tcp::socket poke(io);
      poke.connect(tcp::endpoint(asio::ip::address_v4::loopback(), bound), ec);
    }
    if (accept_thread.joinable()) accept_thread.join();
    std::lock_guard lock(conn_mutex);
    for (auto& c : conns)
      if (!c.done) ::shutdown(c.fd, SHUT_RDWR);
    for (auto& c : conns) c.thread.join();
    conns.clear();
    beast::error_code ec;
    acceptor.close(ec);
  }
};

ApiServer::ApiServer(Node& node, std::uint16_t port) : impl_(std::make_unique<Impl>(node, port)) {}
ApiServer::~ApiServer() { stop(); }
std::uint16_t ApiServer::port() const { return impl_->bound; }
void ApiServer::stop() { impl_->stop(); }

}  // namespace gridtrade

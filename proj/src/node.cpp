#include "gridtrade/node.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <random>
#include <thread>

#include "gridtrade/energy_data.hpp"
#include "gridtrade/mlff.hpp"
#include "gridtrade/protocol.hpp"

namespace gridtrade {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr auto kIdleWake = std::chrono::milliseconds(100);
constexpr int kMiningAttempts = 2;

std::string short_hash(const std::string& h) { return h.substr(0, 12); }

std::string normalize_host(const std::string& h) { return h == "localhost" ? "127.0.0.1" : h; }

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

}  // namespace

std::string to_string(SessionRole role) { return role == SessionRole::buyer ? "buyer" : "seller"; }

std::string to_string(SessionState state) {
  switch (state) {
    case SessionState::requested: return "requested";
    case SessionState::accepted: return "accepted";
    case SessionState::mining: return "mining";
    case SessionState::committed: return "committed";
    case SessionState::rejected: return "rejected";
    case SessionState::timed_out: return "timed_out";
  }
  return "?";
}

std::string to_string(BlockVerdict verdict) {
  switch (verdict) {
    case BlockVerdict::applied: return "applied";
    case BlockVerdict::queued: return "queued";
    case BlockVerdict::rejected: return "rejected";
  }
  return "?";
}

void EventHub::publish(NodeEvent event) {
  {
    std::lock_guard lock(mutex_);
    events_.push_back(std::move(event));
    if (events_.size() > capacity_) events_.pop_front();
  }
  cv_.notify_all();
}

std::vector<NodeEvent> EventHub::wait_after(std::uint64_t after, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || (!events_.empty() && events_.back().seq > after); });
  std::vector<NodeEvent> out;
  for (const auto& e : events_)
    if (e.seq > after) out.push_back(e);
  return out;
}

std::uint64_t EventHub::last_seq() const {
  std::lock_guard lock(mutex_);
  return events_.empty() ? 0 : events_.back().seq;
}

void EventHub::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventHub::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

struct Node::Impl {
  struct MiningJob {
    std::string order_id;
    std::string prev_hash;
    std::jthread thread;
  };

  struct Pending {
    Block block;
    std::string order_id;
    std::string from;
  };

  NodeConfig cfg;
  MinerFn miner;
  Address self;
  Instant clock_start;
  std::chrono::system_clock::time_point anchor;
  std::map<NodeId, NodeSeries> series;
  std::vector<WeatherRecord> weather;
  std::optional<mlff::Model> model;

  // Owned by the loop thread once started.
  Chain chain;
  TokenLedger ledger;
  std::vector<Address> endowed;
  MarketStates market;
  bool market_data = false;
  std::int64_t interval_index = std::numeric_limits<std::int64_t>::min();
  std::map<std::string, TradeSession> sessions;
  std::map<std::uint64_t, Pending> pending;
  std::map<NodeId, int> flagged;
  std::optional<ForecastCurve> forecast_curve;
  std::string forecast_day;
  std::unique_ptr<MiningJob> job;
  std::uint64_t seq = 0;
  std::uint64_t order_counter = 0;
  bool dirty = true;
  std::ofstream log;

  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::deque<std::function<void()>> queue;
  bool quit = false;
  std::thread loop;
  std::thread::id loop_id;

  mutable std::mutex snap_mutex;
  std::shared_ptr<const NodeSnapshot> snap;
  EventHub hub;
  std::unique_ptr<PeerNetwork> net;
  std::uint16_t bound_port = 0;
  std::jthread dialer;
  std::mutex dial_mutex;
  std::condition_variable_any dial_cv;
  bool started = false;
  bool stopped = false;

  Impl(NodeConfig c, MinerFn m) : cfg(std::move(c)), miner(std::move(m)), self(derive_address(cfg.node_id)) {
    if (!miner) miner = [](const Block& prev, const MineRequest& req, std::stop_token st) { return mine(prev, req, st); };
    anchor = cfg.clock_anchor ? *cfg.clock_anchor : std::chrono::system_clock::now();
    clock_start = cfg.clock_start ? *cfg.clock_start : std::chrono::floor<Seconds>(anchor);

    series[cfg.node_id] = NodeSeries{load_power_csv(cfg.generation_path, cfg.node_id, SeriesKind::generation),
                                     load_power_csv(cfg.consumption_path, cfg.node_id, SeriesKind::consumption),
                                     cfg.grid_import_limit};
    if (!cfg.weather_path.empty()) weather = load_weather_csv(cfg.weather_path).records;
    if (!cfg.model_path.empty()) {
      if (!fs::exists(cfg.model_path)) throw Error("DataMissing", "model file not found: " + cfg.model_path.string());
      model = mlff::load_model(cfg.model_path);
    }

    std::error_code ec;
    fs::create_directories(cfg.state_dir, ec);
    if (ec) throw Error("ConfigInvalid", "cannot create state_dir " + cfg.state_dir.string() + ": " + ec.message());
    for (const auto& m : cfg.members) endowed.push_back(derive_address(m));
    const auto chain_path = cfg.state_dir / "chain.txt";
    chain = fs::exists(chain_path) ? load_chain(chain_path, cfg.difficulty_bits, cfg.genesis_time)
                                   : Chain::fresh(cfg.difficulty_bits, cfg.genesis_time);
    ledger = fold_ledger(chain, endowed, cfg.endowment);
    market[cfg.node_id] = NodeMarketState{cfg.node_id, 0, 0, cfg.grid_import_limit, 0, 0, 0};
    log.open(cfg.state_dir / "events.log", std::ios::app);
    if (!log) throw Error("ConfigInvalid", "cannot write events.log in " + cfg.state_dir.string());
    persist();
    publish_snapshot();
  }

  double interval_hours() const { return static_cast<double>(cfg.market_interval.count()) / 3600.0; }

  Instant now() const {
    const double elapsed = std::chrono::duration<double>(std::chrono::system_clock::now() - anchor).count();
    return clock_start + Seconds(static_cast<std::int64_t>(std::floor(elapsed * cfg.clock_factor)));
  }

  // ---- loop machinery ----

  bool post(std::function<void()> fn) {
    {
      std::lock_guard lock(queue_mutex);
      if (quit) return false;
      queue.push_back(std::move(fn));
    }
    queue_cv.notify_one();
    return true;
  }

  template <typename F>
  auto call(F fn) -> decltype(fn()) {
    using R = decltype(fn());
    if (!started || std::this_thread::get_id() == loop_id) return fn();
    auto task = std::make_shared<std::packaged_task<R()>>(std::move(fn));
    auto result = task->get_future();
    if (!post([task] { (*task)(); })) throw Error("NodeStopped", "node is shutting down");
    return result.get();
  }

  void run_loop() {
    loop_id = std::this_thread::get_id();
    for (;;) {
      std::deque<std::function<void()>> batch;
      bool leaving = false;
      {
        std::unique_lock lock(queue_mutex);
        queue_cv.wait_for(lock, kIdleWake, [&] { return quit || !queue.empty(); });
        batch.swap(queue);
        leaving = quit;
      }
      for (auto& fn : batch) {
        try {
          fn();
        } catch (const std::exception& e) {
          emit("node.error", e.what());
        }
      }
      if (leaving) {
        std::lock_guard lock(queue_mutex);
        if (queue.empty()) break;
        continue;
      }
      on_idle();
      if (dirty) publish_snapshot();
    }
    publish_snapshot();
  }

  void emit(const std::string& type, const std::string& message, json data = json::object()) {
    NodeEvent e{++seq, now(), type, message, std::move(data)};
    const auto line = format_iso8601(e.time) + " [" + cfg.node_id + "] " + type + ": " + message;
    log << line << '\n' << std::flush;
    if (cfg.echo_events) std::cout << line << std::endl;
    hub.publish(std::move(e));
    dirty = true;
  }

  void persist() {
    save_chain(cfg.state_dir / "chain.txt", chain);
    ledger.save_wallets(cfg.state_dir / "wallets.txt");
  }

  void publish_snapshot() {
    auto s = std::make_shared<NodeSnapshot>();
    s->node_id = cfg.node_id;
    s->address = self;
    s->listen_port = bound_port;
    s->market = market.at(cfg.node_id);
    s->market_data = market_data;
    if (interval_index != std::numeric_limits<std::int64_t>::min())
      s->interval_start = from_unix(interval_index * cfg.market_interval.count());
    s->available_wh = market_data ? s->market.available_wh(interval_hours()) : 0;
    s->balance = ledger.balance_of(self);
    s->wallets = ledger.accounts();
    s->chain = chain.blocks;
    for (const auto& [id, session] : sessions) s->sessions.push_back(session);
    if (net) s->peers = net->peers();
    s->forecast = forecast_curve;
    s->mining = job != nullptr;
    std::lock_guard lock(snap_mutex);
    snap = std::move(s);
    dirty = false;
  }

  // ---- clock driven work ----

  void on_idle() {
    const auto t = now();
    const auto idx = floor_div(to_unix(t), cfg.market_interval.count());
    if (idx != interval_index) do_tick(idx);
    const auto wall = std::chrono::steady_clock::now();
    for (auto& [id, s] : sessions)
      if (s.role == SessionRole::buyer && s.state == SessionState::requested &&
          wall - s.touched > cfg.negotiation_timeout) {
        s.state = SessionState::timed_out;
        emit("trade.timed_out", "no answer from " + s.seller + " for order " + s.order_id, {{"order_id", s.order_id}});
      }
    if (model && !weather.empty() && format_date(t) != forecast_day) refresh_forecast(t);
  }

  void do_tick(std::int64_t idx) {
    const bool first = interval_index == std::numeric_limits<std::int64_t>::min();
    interval_index = idx;
    const auto start = from_unix(idx * cfg.market_interval.count());
    const bool had_data = market_data;
    try {
      tick(market, start, series);
      market_data = true;
    } catch (const MarketError& e) {
      market[cfg.node_id] = NodeMarketState{cfg.node_id, 0, 0, cfg.grid_import_limit, 0, 0, 0};
      market_data = false;
      if (had_data || first) emit("market.no_data", e.what());
      return;
    }
    const auto& st = market.at(cfg.node_id);
    char buf[160];
    std::snprintf(buf, sizeof buf, "interval %s: generation %.0f W, demand %.0f W, surplus %.0f W",
                  format_iso8601(start).c_str(), st.gen_now, st.demand_now, st.surplus_now);
    emit("market.tick", buf,
         {{"interval_start", format_iso8601(start)},
          {"generation_w", st.gen_now},
          {"demand_w", st.demand_now},
          {"surplus_w", st.surplus_now},
          {"available_wh", st.available_wh(interval_hours())}});
  }

  void refresh_forecast(Instant t) {
    forecast_day = format_date(t);
    try {
      forecast_curve = compute_forecast(start_of_day(t));
      emit("forecast.updated", "minute-ahead forecast ready for " + forecast_day);
    } catch (const Error& e) {
      forecast_curve.reset();
      emit("forecast.unavailable", forecast_day + ": " + e.what());
    }
  }

  ForecastCurve compute_forecast(Instant day) const {
    if (!model) throw Error("NoModel", "no forecast model configured");
    if (weather.empty()) throw Error("NoWeather", "no weather data configured");
    const auto grid = weather_day_grid(weather, day);
    const auto watts = mlff::predict_minute_ahead(*model, grid);
    ForecastCurve c{format_date(day), {}, watts};
    for (const auto& r : grid) c.times.push_back(r.timestamp);
    return c;
  }

  // ---- peers ----

  void on_peer_up(const PeerInfo& info) {
    emit("peer.established",
         "Client added: " + info.node_id + " (" + info.host + ":" + std::to_string(info.listen_port) + ")",
         {{"node_id", info.node_id}, {"inbound", info.inbound}});
    if (!ledger.sealed() && chain.height() == 1 &&
        std::find(endowed.begin(), endowed.end(), info.address) == endowed.end()) {
      ledger.mint(info.address, cfg.endowment);
      endowed.push_back(info.address);
      persist();
      emit("ledger.endowed", info.node_id + " endowed with " + std::to_string(cfg.endowment) + " tokens");
    }
    net->send(info.node_id, msg::ChainRequest{});
  }

  void on_message(const std::string& from, PeerMessage m) {
    std::visit(
        [&](auto& body) {
          using T = std::decay_t<decltype(body)>;
          if constexpr (std::is_same_v<T, msg::TradeRequest>) on_trade_request(from, body);
          else if constexpr (std::is_same_v<T, msg::TradeAccept>) on_trade_accept(from, body);
          else if constexpr (std::is_same_v<T, msg::TradeReject>) on_trade_reject(from, body);
          else if constexpr (std::is_same_v<T, msg::BlockAnnounce>) handle_block(body.block, body.order_id, from);
          else if constexpr (std::is_same_v<T, msg::ChainRequest>) net->send(from, msg::ChainResponse{chain.blocks});
          else if constexpr (std::is_same_v<T, msg::ChainResponse>) on_chain_response(from, std::move(body.blocks));
        },
        m);
  }

  void request_sync(const std::string& from) {
    if (!from.empty() && net) net->send(from, msg::ChainRequest{});
  }

  // ---- trade negotiation ----

  TradeSession request_trade(WattHours units, const std::string& seller_hint) {
    if (units == 0) throw MarketError(MarketError::Kind::InvalidOrder, "units must be positive");
    for (const auto& [id, s] : sessions)
      if (s.role == SessionRole::buyer && s.open())
        throw Error("Busy", "order " + id + " is still " + to_string(s.state));
    const auto peers = net ? net->peers() : std::vector<PeerInfo>{};
    std::string seller = !seller_hint.empty() ? seller_hint : cfg.seller;
    if (seller.empty()) {
      if (peers.empty()) throw Error("NoPeer", "no peer connected");
      if (peers.size() > 1) throw Error("NoPeer", "several peers connected; name the seller");
      seller = peers.front().node_id;
    }
    const auto balance = ledger.balance_of(self);
    if (balance < units)
      throw LedgerError(LedgerError::Kind::InsufficientBalance,
                        "balance " + std::to_string(balance) + " is below the requested " + std::to_string(units),
                        balance, units);
    const auto peer = std::find_if(peers.begin(), peers.end(), [&](const PeerInfo& p) { return p.node_id == seller; });
    if (peer == peers.end()) throw Error("NoPeer", "seller " + seller + " is not connected");

    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "-%08x-%llu", static_cast<unsigned>(std::random_device{}()),
                  static_cast<unsigned long long>(++order_counter));
    const TradeOrder order(cfg.node_id + suffix, cfg.node_id, seller, units, now());
    TradeSession s;
    s.order_id = order.order_id;
    s.role = SessionRole::buyer;
    s.buyer = cfg.node_id;
    s.seller = seller;
    s.buyer_address = self;
    s.seller_address = peer->address;
    s.units = units;
    s.created_at = order.created_at;
    s.touched = std::chrono::steady_clock::now();
    if (!net->send(seller, msg::TradeRequest{s.order_id, cfg.node_id, self, units, s.created_at}))
      throw NetError(NetError::Kind::PeerUnreachable, "lost connection to " + seller);
    sessions[s.order_id] = s;
    emit("trade.requested", "Requested " + std::to_string(units) + " Wh from " + seller + " (order " + s.order_id + ")",
         {{"order_id", s.order_id}, {"units", units}});
    return s;
  }

  void on_trade_request(const std::string& from, const msg::TradeRequest& r) {
    if (sessions.count(r.order_id)) return;
    if (r.buyer != from || r.buyer_address != derive_address(r.buyer) || r.units == 0) {
      net->send(from, msg::TradeReject{r.order_id, RejectReason::unknown_order});
      emit("trade.rejected", "malformed request " + r.order_id + " from " + from);
      return;
    }
    TradeSession s;
    s.order_id = r.order_id;
    s.role = SessionRole::seller;
    s.buyer = r.buyer;
    s.seller = cfg.node_id;
    s.buyer_address = r.buyer_address;
    s.seller_address = self;
    s.units = r.units;
    s.created_at = r.created_at;
    s.touched = std::chrono::steady_clock::now();
    sessions[s.order_id] = s;
    emit("trade.incoming",
         from + " requests " + std::to_string(r.units) + " Wh (order " + r.order_id + "); approve to sell",
         {{"order_id", r.order_id}, {"units", r.units}, {"buyer", r.buyer}});
  }

  void reject_session(TradeSession& s, RejectReason reason, const std::string& why) {
    s.state = SessionState::rejected;
    s.reject_reason = std::string(to_string(reason));
    if (s.role == SessionRole::seller) net->send(s.buyer, msg::TradeReject{s.order_id, reason});
    emit("trade.rejected", "order " + s.order_id + " rejected (" + s.reject_reason + "): " + why,
         {{"order_id", s.order_id}, {"reason", s.reject_reason}});
  }

  TradeSession approve_trade(const std::string& order_id) {
    const auto it = sessions.find(order_id);
    if (it == sessions.end() || it->second.role != SessionRole::seller)
      throw Error("UnknownOrder", "no incoming order " + order_id);
    auto& s = it->second;
    if (s.state != SessionState::requested)
      throw Error("UnknownOrder", "order " + order_id + " is already " + to_string(s.state));
    if (job) {
      reject_session(s, RejectReason::busy, "still mining order " + job->order_id);
      throw Error("Busy", "still mining order " + job->order_id + "; order " + order_id + " rejected");
    }
    const WattHours available = market_data ? market.at(cfg.node_id).available_wh(interval_hours()) : 0;
    if (available < s.units) {
      reject_session(s, RejectReason::insufficient_surplus,
                     std::to_string(available) + " Wh available, " + std::to_string(s.units) + " requested");
      throw InsufficientSurplus(available, s.units);
    }
    net->send(s.buyer, msg::TradeAccept{s.order_id});
    s.state = SessionState::accepted;
    emit("trade.accepted", "Accepted order " + s.order_id + " from " + s.buyer + " for " + std::to_string(s.units) + " Wh",
         {{"order_id", s.order_id}});
    start_mining(s);
    return s;
  }

  void on_trade_accept(const std::string& from, const msg::TradeAccept& a) {
    const auto it = sessions.find(a.order_id);
    if (it == sessions.end() || it->second.role != SessionRole::buyer || it->second.seller != from) return;
    auto& s = it->second;
    if (s.state != SessionState::requested && s.state != SessionState::timed_out) return;
    s.state = SessionState::accepted;
    s.touched = std::chrono::steady_clock::now();
    emit("trade.accepted", from + " accepted order " + s.order_id + "; mining", {{"order_id", s.order_id}});
  }

  void on_trade_reject(const std::string& from, const msg::TradeReject& r) {
    const auto it = sessions.find(r.order_id);
    if (it == sessions.end() || it->second.role != SessionRole::buyer || it->second.seller != from) return;
    auto& s = it->second;
    if (!s.open() && s.state != SessionState::timed_out) return;
    reject_session(s, r.reason, "by " + from);
  }

  // ---- mining ----

  void start_mining(TradeSession& s) {
    ++s.mining_attempts;
    s.state = SessionState::mining;
    const Block prev = chain.tip();
    const MineRequest req{s.buyer_address, self, s.units, cfg.difficulty_bits, std::max(now(), prev.timestamp),
                          kDefaultNonceCap};
    job = std::make_unique<MiningJob>();
    job->order_id = s.order_id;
    job->prev_hash = prev.hash;
    job->thread = std::jthread([this, prev, req, order = s.order_id, fn = miner](std::stop_token stop) {
      std::optional<Block> block;
      std::string code, what;
      try {
        block = fn(prev, req, stop);
      } catch (const Error& e) {
        code = e.code();
        what = e.what();
      } catch (const std::exception& e) {
        code = "MiningFailed";
        what = e.what();
      }
      post([this, order, block, code, what] { on_mined(order, block, code, what); });
    });
    emit("mining.started",
         "Mining block " + std::to_string(prev.index + 1) + " for order " + s.order_id + " (difficulty " +
             std::to_string(cfg.difficulty_bits) + " bits, attempt " + std::to_string(s.mining_attempts) + ")",
         {{"order_id", s.order_id}, {"attempt", s.mining_attempts}});
  }

  void cancel_stale_mining() {
    if (job && job->prev_hash != chain.tip().hash) job->thread.request_stop();
  }

  void on_mined(const std::string& order_id, const std::optional<Block>& block, const std::string& code,
                const std::string& what) {
    if (!job || job->order_id != order_id) return;
    auto finished = std::move(job);
    const auto it = sessions.find(order_id);
    if (it == sessions.end()) return;
    auto& s = it->second;
    const bool superseded = block ? block->prev_hash != chain.tip().hash : code == "MiningCancelled";
    if (!block && !superseded) {
      reject_session(s, RejectReason::mining_cancelled, code + ": " + what);
      return;
    }
    if (superseded) {
      if (s.mining_attempts < kMiningAttempts) {
        s.state = SessionState::accepted;
        emit("mining.cancelled", "competing block arrived; retrying order " + order_id + " on the new tip",
             {{"order_id", order_id}, {"retry", true}});
        start_mining(s);
      } else {
        emit("mining.cancelled", "competing block arrived again; giving up on order " + order_id,
             {{"order_id", order_id}, {"retry", false}});
        reject_session(s, RejectReason::mining_cancelled, "mining interrupted twice");
      }
      return;
    }
    commit_mined(s, *block);
  }

  void commit_mined(TradeSession& s, const Block& b) {
    const auto verdict = check_successor(chain.tip(), b, cfg.difficulty_bits);
    if (!verdict.ok()) {
      reject_session(s, RejectReason::mining_cancelled, "mined block invalid: " + verdict.describe());
      return;
    }
    auto market2 = market;
    auto ledger2 = ledger;
    try {
      apply_trade(market2, TradeOrder(s.order_id, s.buyer, cfg.node_id, s.units, s.created_at), interval_hours());
    } catch (const InsufficientSurplus& e) {
      reject_session(s, RejectReason::insufficient_surplus, e.what());
      return;
    }
    try {
      ledger2.seal();
      ledger2.transfer(s.buyer_address, self, s.units);
    } catch (const LedgerError& e) {
      reject_session(s, RejectReason::insufficient_balance, e.what());
      return;
    }
    chain.blocks.push_back(b);
    market = std::move(market2);
    ledger = std::move(ledger2);
    persist();
    s.state = SessionState::committed;
    s.block_index = b.index;
    s.block_hash = b.hash;
    const auto peers = net->broadcast(msg::BlockAnnounce{b, s.order_id});
    emit("block.committed",
         "Block " + std::to_string(b.index) + " mined: " + std::to_string(b.amount) + " tokens " + s.buyer + " -> " +
             s.seller + ", nonce " + std::to_string(b.nonce) + ", hash " + short_hash(b.hash) + ", announced to " +
             std::to_string(peers) + " peer(s)",
         {{"order_id", s.order_id}, {"block", block_to_json(b)}});
    drain_pending();
  }

  // ---- blocks and sync ----

  void settle_buyer_session(const Block& b, const std::string& order_id) {
    if (b.sender != self) return;
    TradeSession* match = nullptr;
    if (!order_id.empty()) {
      const auto it = sessions.find(order_id);
      if (it != sessions.end() && it->second.role == SessionRole::buyer) match = &it->second;
    } else {
      for (auto& [id, s] : sessions)
        if (s.role == SessionRole::buyer && (s.open() || s.state == SessionState::timed_out) &&
            s.seller_address == b.receiver && s.units == b.amount) {
          match = &s;
          break;
        }
    }
    if (!match || match->state == SessionState::committed) return;
    match->state = SessionState::committed;
    match->block_index = b.index;
    match->block_hash = b.hash;
    emit("trade.committed", "order " + match->order_id + " settled in block " + std::to_string(b.index),
         {{"order_id", match->order_id}});
  }

  void apply_market_effects(MarketStates& states, const Block& b) {
    if (b.sender == self) credit_purchase(states, cfg.node_id, b.amount);
    if (b.receiver == self) states.at(cfg.node_id).energy_sold_interval += b.amount;
  }

  BlockVerdict handle_block(const Block& b, const std::string& order_id, const std::string& from) {
    const auto src = from.empty() ? std::string("local") : from;
    if (b.index < chain.height()) {
      if (chain.blocks[b.index] == b) {
        emit("block.duplicate", "block " + std::to_string(b.index) + " from " + src + " already applied");
        return BlockVerdict::applied;
      }
      emit("block.stale", "block " + std::to_string(b.index) + " from " + src + " conflicts with ours; syncing");
      request_sync(from);
      return BlockVerdict::rejected;
    }
    if (b.index > chain.height()) {
      pending[b.index] = {b, order_id, from};
      emit("block.queued", "block " + std::to_string(b.index) + " from " + src + " is ahead of height " +
                               std::to_string(chain.height()) + "; requesting chain");
      request_sync(from);
      return BlockVerdict::queued;
    }
    const auto verdict = check_successor(chain.tip(), b, cfg.difficulty_bits);
    if (verdict.reason == ChainVerdict::Reason::BrokenLink) {
      pending[b.index] = {b, order_id, from};
      emit("block.queued", "block " + std::to_string(b.index) + " from " + src + " does not link to our tip; syncing");
      request_sync(from);
      return BlockVerdict::queued;
    }
    if (!verdict.ok()) {
      ++flagged[src];
      emit("block.rejected", "block from " + src + " rejected: " + verdict.describe() + "; peer flagged",
           {{"reason", to_string(verdict.reason)}, {"peer", src}});
      return BlockVerdict::rejected;
    }
    auto ledger2 = ledger;
    auto market2 = market;
    try {
      ledger2.seal();
      ledger2.transfer(b.sender, b.receiver, b.amount);
    } catch (const LedgerError& e) {
      ++flagged[src];
      emit("block.rejected", "block from " + src + " rejected: " + e.what() + "; peer flagged");
      return BlockVerdict::rejected;
    }
    apply_market_effects(market2, b);
    chain.blocks.push_back(b);
    ledger = std::move(ledger2);
    market = std::move(market2);
    persist();
    emit("block.applied",
         "Block " + std::to_string(b.index) + " received from " + src + ": " + std::to_string(b.amount) + " tokens, hash " +
             short_hash(b.hash),
         {{"block", block_to_json(b)}, {"order_id", order_id}});
    settle_buyer_session(b, order_id);
    cancel_stale_mining();
    drain_pending();
    return BlockVerdict::applied;
  }

  void drain_pending() {
    while (!pending.empty()) {
      auto first = pending.begin();
      if (first->first < chain.height()) {
        pending.erase(first);
        continue;
      }
      if (first->first > chain.height()) return;
      auto p = std::move(first->second);
      pending.erase(first);
      if (check_successor(chain.tip(), p.block, cfg.difficulty_bits).ok()) handle_block(p.block, p.order_id, p.from);
    }
  }

  void on_chain_response(const std::string& from, std::vector<Block> blocks) {
    Chain remote{std::move(blocks), cfg.difficulty_bits, cfg.genesis_time};
    Chain chosen;
    try {
      chosen = choose_chain(chain, remote);
    } catch (const ChainError& e) {
      ++flagged[from];
      emit("chain.rejected", "chain from " + from + " rejected: " + e.what() + "; peer flagged");
      return;
    }
    if (chosen.blocks == chain.blocks) return;
    TokenLedger ledger2;
    try {
      ledger2 = fold_ledger(chosen, endowed, cfg.endowment);
    } catch (const Error& e) {
      ++flagged[from];
      emit("chain.rejected", "chain from " + from + " does not balance: " + e.what());
      return;
    }
    std::size_t common = 0;
    while (common < chain.height() && common < chosen.height() && chain.blocks[common] == chosen.blocks[common])
      ++common;
    auto market2 = market;
    for (std::size_t i = common; i < chosen.height(); ++i) apply_market_effects(market2, chosen.blocks[i]);
    const auto old_height = chain.height();
    chain = std::move(chosen);
    ledger = std::move(ledger2);
    market = std::move(market2);
    persist();
    if (common < old_height)
      emit("chain.reorg", std::to_string(old_height - common) + " local block(s) replaced by " + from + "'s chain");
    emit("chain.synced",
         "Chain synced from " + from + ": height " + std::to_string(old_height) + " -> " + std::to_string(chain.height()),
         {{"height", chain.height()}, {"tip", chain.tip().hash}});
    for (std::size_t i = common; i < chain.height(); ++i) settle_buyer_session(chain.blocks[i], {});
    cancel_stale_mining();
    drain_pending();
  }

  // ---- lifecycle ----

  void start() {
    if (started) throw Error("AlreadyStarted", "node already started");
    PeerNetwork::Handlers h;
    h.established = [this](const PeerInfo& info) { post([this, info] { on_peer_up(info); }); };
    h.closed = [this](const std::string& id) {
      post([this, id] { emit("peer.closed", "connection to " + id + " closed", {{"node_id", id}}); });
    };
    h.message = [this](const std::string& id, PeerMessage m) {
      post([this, id, m = std::move(m)]() mutable { on_message(id, std::move(m)); });
    };
    h.problem = [this](const std::string& code, const std::string& text) {
      post([this, code, text] { emit("peer.problem", code + ": " + text); });
    };
    net = std::make_unique<PeerNetwork>(cfg.node_id, std::move(h), cfg.handshake_timeout);
    bound_port = net->listen(cfg.listen_port);
    started = true;
    loop = std::thread([this] { run_loop(); });
    post([this] {
      on_idle();
      emit("node.started", "Node " + cfg.node_id + " listening on 127.0.0.1:" + std::to_string(bound_port) +
                               ", chain height " + std::to_string(chain.height()) + ", balance " +
                               std::to_string(ledger.balance_of(self)) + ", clock " + format_iso8601(now()) + " (" +
                               to_string(cfg.clock_mode) + ")");
    });
    if (!cfg.peers.empty()) dialer = std::jthread([this](std::stop_token st) { dial_loop(st); });
  }

  void dial_loop(std::stop_token st) {
    std::map<std::string, bool> reported;
    while (!st.stop_requested()) {
      const auto peers = net->peers();
      for (const auto& hp : cfg.peers) {
        const auto key = hp.host + ":" + std::to_string(hp.port);
        const bool connected = std::any_of(peers.begin(), peers.end(), [&](const PeerInfo& p) {
          return normalize_host(p.host) == normalize_host(hp.host) && p.listen_port == hp.port;
        });
        if (connected || st.stop_requested()) continue;
        try {
          net->connect(hp.host, hp.port);
          reported[key] = false;
        } catch (const NetError& e) {
          if (!reported[key]) post([this, key, what = std::string(e.what())] {
              emit("peer.dial_failed", key + ": " + what + " (retrying)");
            });
          reported[key] = true;
        }
      }
      std::unique_lock lock(dial_mutex);
      dial_cv.wait_for(lock, st, std::chrono::seconds(1), [] { return false; });
    }
  }

  void stop() {
    if (stopped) return;
    stopped = true;
    if (dialer.joinable()) dialer.request_stop();
    if (net) net->stop();
    if (dialer.joinable()) dialer.join();
    {
      std::lock_guard lock(queue_mutex);
      quit = true;
    }
    queue_cv.notify_all();
    if (loop.joinable()) loop.join();
    job.reset();
    hub.close();
  }
};

Node::Node(NodeConfig config, MinerFn miner) : impl_(std::make_unique<Impl>(std::move(config), std::move(miner))) {}

Node::~Node() { stop(); }

void Node::start() { impl_->start(); }
void Node::stop() { impl_->stop(); }
const NodeConfig& Node::config() const { return impl_->cfg; }
std::uint16_t Node::listen_port() const { return impl_->bound_port; }
Instant Node::now() const { return impl_->now(); }

TradeSession Node::request_trade(WattHours units, const std::string& seller) {
  return impl_->call([&] { return impl_->request_trade(units, seller); });
}

TradeSession Node::approve_trade(const std::string& order_id) {
  return impl_->call([&] { return impl_->approve_trade(order_id); });
}

PeerInfo Node::add_peer(const std::string& host, std::uint16_t port) {
  if (!impl_->net) throw Error("NodeStopped", "node not started");
  return impl_->net->connect(host, port);
}

BlockVerdict Node::receive_block(const Block& block, const std::string& order_id, const std::string& from) {
  return impl_->call([&] { return impl_->handle_block(block, order_id, from); });
}

std::shared_ptr<const NodeSnapshot> Node::snapshot() const {
  std::lock_guard lock(impl_->snap_mutex);
  return impl_->snap;
}

ForecastCurve Node::forecast(Instant day) const { return impl_->compute_forecast(day); }

EventHub& Node::events() { return impl_->hub; }

}  // namespace gridtrade

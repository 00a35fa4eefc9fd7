#include <gtest/gtest.h>

#include <condition_variable>

#include "gridtrade/node.hpp"
#include "support/node_fixture.hpp"

using namespace gridtrade;
using namespace gridtrade::fixture;
using namespace std::chrono_literals;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Pair {
  TempDir dir;
  std::unique_ptr<Node> et;
  std::unique_ptr<Node> lib;

  explicit Pair(MinerFn et_miner = {}) {
    et = std::make_unique<Node>(make_config(dir.path, seller_spec()), std::move(et_miner));
    lib = std::make_unique<Node>(make_config(dir.path, buyer_spec()));
    et->start();
    lib->start();
    lib->add_peer("127.0.0.1", et->listen_port());
    EXPECT_TRUE(wait_until([&] { return et->snapshot()->peers.size() == 1 && lib->snapshot()->peers.size() == 1; }));
  }

  TradeSession trade(WattHours units) {
    const auto order = lib->request_trade(units);
    EXPECT_TRUE(wait_until([&] { return find_session(*et, order.order_id).has_value(); }));
    et->approve_trade(order.order_id);
    EXPECT_TRUE(wait_until([&] {
      const auto s = find_session(*lib, order.order_id);
      return s && s->state == SessionState::committed;
    }));
    return *find_session(*lib, order.order_id);
  }
};

// Blocks until asked to stop, `blocked` times; mines normally afterwards.
struct StallingMiner {
  std::shared_ptr<std::atomic<int>> remaining;
  Block operator()(const Block& prev, const MineRequest& req, std::stop_token stop) const {
    if (remaining->fetch_sub(1) > 0) {
      std::mutex m;
      std::condition_variable_any cv;
      std::unique_lock lock(m);
      cv.wait(lock, stop, [] { return false; });
      throw ChainError(ChainError::Kind::Cancelled, "stopped");
    }
    return mine(prev, req, stop);
  }
};

}  // namespace

TEST(Node, ColdStart) {
  TempDir dir;
  Node node(make_config(dir.path, seller_spec()));
  node.start();
  const auto s = node.snapshot();
  EXPECT_EQ(s->node_id, "ET");
  EXPECT_EQ(s->chain.size(), 1u);
  EXPECT_EQ(s->balance, 100000u);
  EXPECT_TRUE(s->peers.empty());
  EXPECT_TRUE(wait_until([&] { return node.snapshot()->market_data; }));
  EXPECT_TRUE(fs::exists(dir.path / "ET" / "state" / "chain.txt"));
  EXPECT_TRUE(wait_until([&] { return saw_event(node, "node.started"); }));
}

TEST(Node, MissingGenerationFile) {
  TempDir dir;
  auto cfg = make_config(dir.path, seller_spec());
  cfg.generation_path = dir.path / "nope.csv";
  try {
    Node node(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "DataMissing");
  }
}

TEST(Node, PortInUseNamesThePort) {
  TempDir dir;
  Node a(make_config(dir.path, seller_spec()));
  a.start();
  auto cfg = make_config(dir.path, buyer_spec());
  cfg.listen_port = a.listen_port();
  Node b(cfg);
  try {
    b.start();
    FAIL();
  } catch (const NetError& e) {
    EXPECT_EQ(e.code(), "PortInUse");
    EXPECT_NE(std::string(e.what()).find(std::to_string(a.listen_port())), std::string::npos);
  }
}

TEST(Node, HandshakeConfirmedOnBothSides) {
  Pair p;
  EXPECT_EQ(p.et->snapshot()->peers.front().node_id, "LIB");
  EXPECT_EQ(p.lib->snapshot()->peers.front().node_id, "ET");
  EXPECT_TRUE(wait_until([&] { return saw_event(*p.et, "peer.established") && saw_event(*p.lib, "peer.established"); }));
}

TEST(Node, SecondConnectionIsDuplicate) {
  Pair p;
  try {
    p.lib->add_peer("127.0.0.1", p.et->listen_port());
    FAIL();
  } catch (const NetError& e) {
    EXPECT_EQ(e.kind(), NetError::Kind::DuplicatePeer);
  }
  std::this_thread::sleep_for(1500ms);
  EXPECT_EQ(p.et->snapshot()->peers.size(), 1u);
  EXPECT_EQ(p.lib->snapshot()->peers.size(), 1u);
}

TEST(Node, PeersConfiguredBothWaysEndWithOneLink) {
  TempDir dir;
  auto a_cfg = make_config(dir.path, seller_spec());
  auto b_cfg = make_config(dir.path, buyer_spec());
  Node a(a_cfg);
  a.start();
  b_cfg.peers = {{"127.0.0.1", a.listen_port()}};
  Node b(b_cfg);
  b.start();
  // a learns b's port only now; dial back explicitly.
  try {
    a.add_peer("127.0.0.1", b.listen_port());
  } catch (const NetError&) {
  }
  EXPECT_TRUE(wait_until([&] { return a.snapshot()->peers.size() == 1 && b.snapshot()->peers.size() == 1; }));
  std::this_thread::sleep_for(1500ms);
  EXPECT_EQ(a.snapshot()->peers.size(), 1u);
  EXPECT_EQ(b.snapshot()->peers.size(), 1u);
}

TEST(Node, DialDeadPort) {
  TempDir dir;
  Node node(make_config(dir.path, seller_spec()));
  node.start();
  boost::asio::io_context io;
  boost::asio::ip::tcp::acceptor probe(io, {boost::asio::ip::address_v4::loopback(), 0});
  const auto port = probe.local_endpoint().port();
  probe.close();
  try {
    node.add_peer("127.0.0.1", port);
    FAIL();
  } catch (const NetError& e) {
    EXPECT_EQ(e.kind(), NetError::Kind::ConnectionRefused);
  }
}

TEST(Node, TradeCommitsOnBothNodes) {
  Pair p;
  const auto before = p.et->snapshot()->available_wh;
  const auto s = p.trade(200);
  ASSERT_TRUE(s.block_index.has_value());
  EXPECT_EQ(*s.block_index, 1u);
  ASSERT_TRUE(wait_until([&] { return p.et->snapshot()->balance == 100200; }));
  EXPECT_EQ(p.lib->snapshot()->balance, 99800u);
  EXPECT_EQ(p.et->snapshot()->available_wh, before - 200);
  EXPECT_EQ(p.lib->snapshot()->market.energy_bought_interval, 200u);
  const auto block = p.lib->snapshot()->chain.back();
  EXPECT_EQ(block.amount, 200u);
  EXPECT_EQ(block.sender, derive_address("LIB"));
  EXPECT_EQ(block.receiver, derive_address("ET"));
  EXPECT_EQ(p.et->snapshot()->chain, p.lib->snapshot()->chain);
  EXPECT_EQ(read_file(p.dir.path / "ET" / "state" / "chain.txt"), read_file(p.dir.path / "LIB" / "state" / "chain.txt"));
  EXPECT_NE(read_file(p.dir.path / "LIB" / "state" / "wallets.txt").find(" 99800"), std::string::npos);
}

TEST(Node, AuditAfterSeveralTrades) {
  Pair p;
  Tokens spent = 0;
  for (WattHours units : {1030, 1347, 2020}) {
    p.trade(units);
    spent += units;
  }
  const auto s = p.lib->snapshot();
  Tokens sent = 0;
  for (const auto& b : s->chain)
    if (b.sender == s->address) sent += b.amount;
  EXPECT_EQ(sent, spent);
  EXPECT_EQ(s->balance, 100000 - sent);
}

TEST(Node, InsufficientSurplusRejects) {
  Pair p;
  const auto order = p.lib->request_trade(90000);
  ASSERT_TRUE(wait_until([&] { return find_session(*p.et, order.order_id).has_value(); }));
  EXPECT_THROW(p.et->approve_trade(order.order_id), InsufficientSurplus);
  ASSERT_TRUE(wait_until([&] {
    const auto s = find_session(*p.lib, order.order_id);
    return s && s->state == SessionState::rejected;
  }));
  EXPECT_EQ(find_session(*p.lib, order.order_id)->reject_reason, "insufficient_surplus");
  EXPECT_EQ(p.lib->snapshot()->chain.size(), 1u);
}

TEST(Node, BuyerChecksBalanceFirst) {
  Pair p;
  try {
    p.lib->request_trade(100001);
    FAIL();
  } catch (const LedgerError& e) {
    EXPECT_EQ(e.kind(), LedgerError::Kind::InsufficientBalance);
  }
  EXPECT_THROW(p.lib->request_trade(0), MarketError);
  std::this_thread::sleep_for(200ms);
  EXPECT_TRUE(p.et->snapshot()->sessions.empty());
}

TEST(Node, OneOutstandingTradePerBuyer) {
  Pair p;
  p.lib->request_trade(100);
  try {
    p.lib->request_trade(100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "Busy");
  }
}

TEST(Node, UnknownOrder) {
  Pair p;
  try {
    p.et->approve_trade("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "UnknownOrder");
  }
}

TEST(Node, DuplicateBlockAppliedOnce) {
  Pair p;
  p.trade(4167);
  ASSERT_TRUE(wait_until([&] { return p.et->snapshot()->balance == 104167; }));
  const auto block = p.et->snapshot()->chain.back();
  EXPECT_EQ(p.lib->receive_block(block, ""), BlockVerdict::applied);
  EXPECT_EQ(p.et->receive_block(block, ""), BlockVerdict::applied);
  EXPECT_EQ(p.lib->snapshot()->balance, 100000u - 4167);
  EXPECT_EQ(p.et->snapshot()->balance, 104167u);
  EXPECT_EQ(p.lib->snapshot()->chain.size(), 2u);
}

TEST(Node, TamperedBlockRejected) {
  TempDir dir;
  Node node(make_config(dir.path, seller_spec()));
  node.start();
  auto b = trade_block(node.snapshot()->chain.back(), "LIB", "ET", 200, 8, trade_day());
  b.amount = 201;
  EXPECT_EQ(node.receive_block(b, ""), BlockVerdict::rejected);
  EXPECT_EQ(node.snapshot()->chain.size(), 1u);
}

TEST(Node, GapQueuesAndRequestsChain) {
  TempDir dir;
  Node node(make_config(dir.path, seller_spec()));
  node.start();
  FakePeer peer("LIB", node.listen_port());
  ASSERT_TRUE(peer.expect<msg::AddClientAck>());
  ASSERT_TRUE(peer.expect<msg::ChainRequest>());  // sync on connect
  const auto g = node.snapshot()->chain.back();
  const auto b1 = trade_block(g, "LIB", "ET", 100, 8, trade_day());
  const auto b2 = trade_block(b1, "LIB", "ET", 100, 8, trade_day());
  EXPECT_EQ(node.receive_block(b2, "", "LIB"), BlockVerdict::queued);
  ASSERT_TRUE(peer.expect<msg::ChainRequest>());
  // Filling the gap releases the queued block.
  EXPECT_EQ(node.receive_block(b1, "", "LIB"), BlockVerdict::applied);
  EXPECT_TRUE(wait_until([&] { return node.snapshot()->chain.size() == 3; }));
}

TEST(Node, StaleTipConverges) {
  TempDir dir;
  auto et_cfg = make_config(dir.path, seller_spec());
  // ET restarts from a persisted chain five trades ahead.
  Chain ahead = Chain::fresh(et_cfg.difficulty_bits, et_cfg.genesis_time);
  for (int i = 0; i < 5; ++i)
    ahead.blocks.push_back(trade_block(ahead.tip(), "LIB", "ET", 100 + i, 8, trade_day() + std::chrono::hours(9)));
  fs::create_directories(et_cfg.state_dir);
  save_chain(et_cfg.state_dir / "chain.txt", ahead);
  Node et(et_cfg);
  Node lib(make_config(dir.path, buyer_spec()));
  et.start();
  lib.start();
  const auto t0 = std::chrono::steady_clock::now();
  lib.add_peer("127.0.0.1", et.listen_port());
  ASSERT_TRUE(wait_until([&] { return lib.snapshot()->chain == et.snapshot()->chain; }, 10s));
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 10s);
  EXPECT_EQ(lib.snapshot()->chain.size(), 6u);
  EXPECT_EQ(lib.snapshot()->balance, 100000u - (100 + 101 + 102 + 103 + 104));
  EXPECT_EQ(read_file(et_cfg.state_dir / "chain.txt"), read_file(dir.path / "LIB" / "state" / "chain.txt"));
}

TEST(Node, BlockBeforeAcceptStillCommits) {
  TempDir dir;
  Node lib(make_config(dir.path, buyer_spec()));
  lib.start();
  FakePeer et("ET", lib.listen_port());
  ASSERT_TRUE(et.expect<msg::AddClientAck>());
  ASSERT_TRUE(wait_until([&] { return lib.snapshot()->peers.size() == 1; }));
  const auto order = lib.request_trade(333);
  const auto req = et.expect<msg::TradeRequest>();
  ASSERT_TRUE(req);
  const auto b = trade_block(lib.snapshot()->chain.back(), "LIB", "ET", 333, 8, trade_day());
  et.send(msg::BlockAnnounce{b, req->order_id});
  et.send(msg::TradeAccept{req->order_id});
  ASSERT_TRUE(wait_until([&] {
    const auto s = find_session(lib, order.order_id);
    return s && s->state == SessionState::committed;
  }));
  std::this_thread::sleep_for(200ms);
  EXPECT_EQ(find_session(lib, order.order_id)->state, SessionState::committed);
  EXPECT_EQ(lib.snapshot()->balance, 100000u - 333);
}

TEST(Node, CompetingBlockTriggersOneRetry) {
  auto stalls = std::make_shared<std::atomic<int>>(1);
  TempDir dir;
  Node et(make_config(dir.path, seller_spec()), StallingMiner{stalls});
  et.start();
  FakePeer lib("LIB", et.listen_port());
  ASSERT_TRUE(lib.expect<msg::AddClientAck>());
  ASSERT_TRUE(wait_until([&] { return et.snapshot()->peers.size() == 1; }));
  const auto g = et.snapshot()->chain.back();
  lib.send(msg::TradeRequest{"LIB-1", "LIB", derive_address("LIB"), 500, trade_day() + 12h});
  ASSERT_TRUE(wait_until([&] { return first_incoming(et).has_value(); }));
  et.approve_trade("LIB-1");
  ASSERT_TRUE(lib.expect<msg::TradeAccept>());
  ASSERT_TRUE(wait_until([&] { return find_session(et, "LIB-1")->state == SessionState::mining; }));

  lib.send(msg::BlockAnnounce{trade_block(g, "LIB", "ET", 10, 8, trade_day()), ""});
  const auto announced = lib.expect<msg::BlockAnnounce>();
  ASSERT_TRUE(announced);
  EXPECT_EQ(announced->order_id, "LIB-1");
  EXPECT_EQ(announced->block.index, 2u);
  ASSERT_TRUE(wait_until([&] { return find_session(et, "LIB-1")->state == SessionState::committed; }));
  const auto s = find_session(et, "LIB-1");
  EXPECT_EQ(s->mining_attempts, 2);
  EXPECT_EQ(et.snapshot()->balance, 100000u + 10 + 500);
}

TEST(Node, SecondInterruptionRejectsTheTrade) {
  auto stalls = std::make_shared<std::atomic<int>>(2);
  TempDir dir;
  Node et(make_config(dir.path, seller_spec()), StallingMiner{stalls});
  et.start();
  FakePeer lib("LIB", et.listen_port());
  ASSERT_TRUE(lib.expect<msg::AddClientAck>());
  ASSERT_TRUE(wait_until([&] { return et.snapshot()->peers.size() == 1; }));
  auto tip = et.snapshot()->chain.back();
  lib.send(msg::TradeRequest{"LIB-7", "LIB", derive_address("LIB"), 500, trade_day() + 12h});
  ASSERT_TRUE(wait_until([&] { return first_incoming(et).has_value(); }));
  et.approve_trade("LIB-7");
  for (int round = 1; round <= 2; ++round) {
    ASSERT_TRUE(wait_until([&] {
      const auto s = find_session(et, "LIB-7");
      return s->state == SessionState::mining && s->mining_attempts == round;
    }));
    tip = trade_block(tip, "LIB", "ET", 10, 8, trade_day());
    lib.send(msg::BlockAnnounce{tip, ""});
  }
  const auto reject = lib.expect<msg::TradeReject>();
  ASSERT_TRUE(reject);
  EXPECT_EQ(reject->reason, RejectReason::mining_cancelled);
  EXPECT_TRUE(wait_until([&] { return find_session(et, "LIB-7")->state == SessionState::rejected; }));
  EXPECT_EQ(et.snapshot()->chain.size(), 3u);
}

TEST(Node, RestartKeepsChainAndWallets) {
  TempDir dir;
  const auto cfg = make_config(dir.path, seller_spec());
  Chain persisted = Chain::fresh(cfg.difficulty_bits, cfg.genesis_time);
  persisted.blocks.push_back(trade_block(persisted.tip(), "LIB", "ET", 700, 8, trade_day()));
  fs::create_directories(cfg.state_dir);
  save_chain(cfg.state_dir / "chain.txt", persisted);
  Node node(cfg);
  EXPECT_EQ(node.snapshot()->chain.size(), 2u);
  EXPECT_EQ(node.snapshot()->balance, 100700u);
}

TEST(Node, CorruptChainFileRefusesToStart) {
  TempDir dir;
  const auto cfg = make_config(dir.path, seller_spec());
  fs::create_directories(cfg.state_dir);
  std::ofstream(cfg.state_dir / "chain.txt") << "garbage\n";
  try {
    Node node(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ChainCorrupt");
  }
}

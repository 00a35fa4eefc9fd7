#include "replay.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <boost/asio.hpp>


#include <algorithm>
#include <chrono>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "gridtrade/chain.hpp"
#include "gridtrade/node_config.hpp"
#include "httplib.h"
#include "json.hpp"

extern char** environ;

namespace gridtrade::cli {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::system_clock;
namespace fs = std::filesystem;

std::uint16_t free_port() {
  boost::asio::io_context io;
  boost::asio::ip::tcp::acceptor a(io, {boost::asio::ip::address_v4::loopback(), 0});
  return a.local_endpoint().port();
}

struct Child {
  std::string node_id;
  NodeConfig config;
  fs::path config_path;
  fs::path log_path;
  pid_t pid = -1;
  std::unique_ptr<httplib::Client> http;

  std::optional<json> get(const std::string& path) const {
    auto res = http->Get(path);
    if (!res || res->status != 200) return std::nullopt;
    return json::parse(res->body, nullptr, false);
  }

  std::pair<int, json> post(const std::string& path, const json& body) const {
    auto res = http->Post(path, body.dump(), "application/json");
    if (!res) return {0, json{{"error", "Unreachable"}, {"message", httplib::to_string(res.error())}}};
    return {res->status, json::parse(res->body, nullptr, false)};
  }

  bool alive() const { return pid > 0 && ::waitpid(pid, nullptr, WNOHANG) == 0; }
};

void spawn(Child& c, const fs::path& exe) {
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, c.log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
  std::string exe_s = exe.string(), run = "run", flag = "--config", cfg = c.config_path.string();
  char* argv[] = {exe_s.data(), run.data(), flag.data(), cfg.data(), nullptr};
  const int rc = posix_spawn(&c.pid, exe_s.c_str(), &fa, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw Error("SpawnFailed", "cannot start " + exe_s + ": " + std::strerror(rc));
}

void terminate(Child& c) {
  if (c.pid <= 0) return;
  ::kill(c.pid, SIGTERM);
  for (int i = 0; i < 100; ++i) {
    if (::waitpid(c.pid, nullptr, WNOHANG) != 0) {
      c.pid = -1;
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  ::kill(c.pid, SIGKILL);
  ::waitpid(c.pid, nullptr, 0);
  c.pid = -1;
}

template <class Pred>
bool wait_for(Pred pred, std::chrono::milliseconds limit, std::chrono::milliseconds step = std::chrono::milliseconds(20)) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(step);
  }
  return pred();
}

std::optional<json> find_session(const Child& c, const std::string& order_id) {
  const auto sessions = c.get("/sessions");
  if (!sessions || !sessions->is_array()) return std::nullopt;
  for (const auto& s : *sessions)
    if (s.value("order_id", "") == order_id) return s;
  return std::nullopt;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TradeRow {
  std::size_t number = 0;
  std::string buyer, seller, order_id, state = "not_started", reason;
  std::uint64_t units = 0;
  Instant requested_at;
  std::int64_t block_index = -1;
  double latency_ms = 0.0;
};

}  // namespace

int run_replay(const ReplayOptions& opt) {
  auto scenario = load_scenario(opt.scenario);
  for (const auto& [id, path] : opt.configs) scenario.configs[id] = path;
  for (const auto& a : scenario.actions)
    if (!scenario.configs.count(a.actor)) throw Error("ScenarioParse", "no config bound for actor " + a.actor);

  fs::create_directories(opt.workdir);
  const auto log = [&](const std::string& line) {
    if (opt.verbose) std::cerr << line << "\n";
  };

  // Shared simulated clock: every node reads clock_start at the anchor.
  const Instant clock_start = scenario.actions.empty()
                                  ? start_of_day(std::chrono::time_point_cast<Seconds>(Clock::now()))
                                  : std::chrono::floor<std::chrono::hours>(scenario.actions.front().at);
  const Instant anchor = std::chrono::ceil<Seconds>(Clock::now()) + Seconds(3);
  const auto wall_of = [&](Instant t) {
    const double game = static_cast<double>((t - clock_start).count());
    return anchor + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(game / opt.factor));
  };

  std::vector<Child> nodes;
  std::vector<std::string> ids;
  for (const auto& [id, _] : scenario.configs) ids.push_back(id);
  for (const auto& [id, path] : scenario.configs) {
    Child c;
    c.node_id = id;
    c.config = load_node_config(path);
    if (c.config.node_id != id)
      throw Error("ScenarioParse", path.string() + " configures node " + c.config.node_id + ", not " + id);
    c.config.state_dir = opt.workdir / ("state-" + id);
    fs::remove_all(c.config.state_dir);
    c.config.listen_port = free_port();
    c.config.api_port = free_port();
    c.config.clock_mode = ClockMode::replay;
    c.config.clock_factor = opt.factor;
    c.config.clock_start = clock_start;
    c.config.clock_anchor = anchor;
    c.config.members = ids;
    if (opt.difficulty_bits) c.config.difficulty_bits = *opt.difficulty_bits;
    c.config_path = opt.workdir / (id + ".conf");
    c.log_path = opt.workdir / (id + ".log");
    nodes.push_back(std::move(c));
  }
  for (auto& c : nodes) {
    c.config.peers.clear();
    for (const auto& other : nodes)
      if (other.node_id != c.node_id) c.config.peers.push_back({"127.0.0.1", other.config.listen_port});
    std::ofstream(c.config_path) << format_node_config(c.config);
  }
  const auto node = [&](const std::string& id) -> Child& {
    for (auto& c : nodes)
      if (c.node_id == id) return c;
    throw Error("ScenarioParse", "unknown node " + id);
  };

  std::vector<TradeRow> rows;
  bool failed = false;
  std::string failure;
  const auto fail = [&](const std::string& why) {
    if (!failed) failure = why;
    failed = true;
    std::cerr << "error: " << why << "\n";
  };

  const auto wall_start = std::chrono::steady_clock::now();
  try {
    for (auto& c : nodes) spawn(c, opt.executable);
    for (auto& c : nodes) {
      c.http = std::make_unique<httplib::Client>("127.0.0.1", c.config.api_port);
      c.http->set_connection_timeout(2);
      c.http->set_read_timeout(30);
      if (!wait_for([&] { return !c.alive() || c.get("/status"); }, std::chrono::seconds(20)) || !c.alive())
        throw Error("NodeFailed", c.node_id + " did not start; see " + c.log_path.string());
    }
    const auto all_linked = [&] {
      for (const auto& c : nodes) {
        const auto s = c.get("/status");
        if (!s || (*s)["peer_count"].get<std::size_t>() + 1 < nodes.size()) return false;
      }
      return true;
    };
    if (!wait_for(all_linked, std::chrono::seconds(20))) throw Error("NodeFailed", "nodes did not connect");
    log("nodes connected");

    std::map<std::size_t, std::size_t> row_of;  // request action index -> row
    for (std::size_t i = 0; i < scenario.actions.size() && !failed; ++i) {
      const auto& a = scenario.actions[i];
      std::this_thread::sleep_until(wall_of(a.at));
      auto& actor = node(a.actor);
      if (a.kind == ActionKind::request) {
        TradeRow r;
        r.number = rows.size() + 1;
        r.buyer = a.actor;
        r.seller = scenario.actions[*a.partner].actor;
        r.units = a.units;
        r.requested_at = a.at;
        const auto [status, body] = actor.post("/trade/request", {{"units", a.units}, {"seller", r.seller}});
        if (status != 201) {
          r.state = "rejected";
          r.reason = body.value("error", "http " + std::to_string(status));
          fail("trade " + std::to_string(r.number) + " request failed: " + body.dump());
        } else {
          r.order_id = body["order_id"];
          r.state = "requested";
        }
        row_of[i] = rows.size();
        rows.push_back(r);
        log("request #" + std::to_string(r.number) + " " + std::to_string(a.units) + " Wh " + r.order_id);
        continue;
      }

      auto& r = rows[row_of.at(*a.partner)];
      if (!wait_for([&] { return find_session(actor, r.order_id).has_value(); }, std::chrono::seconds(10))) {
        r.state = "lost";
        fail("trade " + std::to_string(r.number) + ": request " + r.order_id + " never reached " + a.actor);
        break;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto [status, body] = actor.post("/trade/approve", {{"order_id", r.order_id}});
      if (status != 200) {
        r.state = "rejected";
        r.reason = body.value("error", "http " + std::to_string(status));
        fail("trade " + std::to_string(r.number) + " approval failed: " + body.dump());
        break;
      }
      auto& buyer = node(r.buyer);
      json final;
      const bool settled = wait_for(
          [&] {
            const auto s = find_session(buyer, r.order_id);
            if (!s) return false;
            final = *s;
            return (*s)["state"] != "requested" && (*s)["state"] != "accepted" && (*s)["state"] != "mining";
          },
          std::chrono::seconds(60), std::chrono::milliseconds(5));
      r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      r.state = settled ? final["state"].get<std::string>() : "unsettled";
      if (final.contains("reject_reason") && final["reject_reason"].is_string()) r.reason = final["reject_reason"];
      if (final.contains("block_index") && final["block_index"].is_number()) r.block_index = final["block_index"];
      if (r.state != "committed") {
        fail("trade " + std::to_string(r.number) + " (" + r.order_id + ") ended " + r.state +
             (r.reason.empty() ? "" : ": " + r.reason));
        break;
      }
      // Every node must hold the block before the next action.
      const auto want = static_cast<std::size_t>(r.block_index) + 1;
      if (!wait_for(
              [&] {
                for (const auto& c : nodes) {
                  const auto s = c.get("/status");
                  if (!s || (*s)["chain"]["height"].get<std::size_t>() < want) return false;
                }
                return true;
              },
              std::chrono::seconds(10)))
        fail("trade " + std::to_string(r.number) + ": block did not reach every node");
      log("commit #" + std::to_string(r.number) + " block " + std::to_string(r.block_index));
    }
  } catch (const Error& e) {
    fail(e.code() + ": " + e.what());
  }

  std::map<std::string, json> balances;
  for (auto& c : nodes)
    if (c.http)
      if (const auto b = c.get("/balance")) balances[c.node_id] = *b;
  for (auto& c : nodes) terminate(c);
  const double wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  // Audit from the persisted files, independent of the running nodes.
  json audit = json::object();
  std::string reference_chain;
  bool identical = true;
  std::uint64_t spent = 0;
  std::map<std::string, std::uint64_t> folded;
  for (const auto& c : nodes) {
    const auto chain_path = c.config.state_dir / "chain.txt";
    const auto text = read_file(chain_path);
    if (reference_chain.empty()) reference_chain = text;
    else if (text != reference_chain) {
      identical = false;
      fail("chain files differ between nodes");
    }
    try {
      const auto chain = load_chain(chain_path, c.config.difficulty_bits, c.config.genesis_time);
      audit["height"] = chain.height();
      std::vector<Address> members;
      for (const auto& id : ids) members.push_back(derive_address(id));
      const auto ledger = fold_ledger(chain, members, c.config.endowment);
      for (const auto& id : ids) {
        const auto bal = ledger.balance_of(derive_address(id));
        if (folded.count(id) && folded[id] != bal) fail("ledgers folded from the two chains disagree");
        folded[id] = bal;
        if (balances.count(id) && balances[id]["balance"].get<std::uint64_t>() != bal)
          fail("node " + id + " reports balance " + balances[id]["balance"].dump() + " but the chain gives " +
               std::to_string(bal));
      }
    } catch (const Error& e) {
      fail("audit of " + chain_path.string() + ": " + e.what());
    }
  }
  std::set<std::string> buyers;
  for (const auto& r : rows) buyers.insert(r.buyer);
  std::uint64_t committed_units = 0;
  for (const auto& r : rows)
    if (r.state == "committed") committed_units += r.units;
  for (const auto& b : buyers)
    if (folded.count(b)) spent += node(b).config.endowment - std::min(node(b).config.endowment, folded[b]);
  const std::size_t expected_height = scenario.trade_count() + 1;
  if (!nodes.empty() && audit.value("height", std::size_t{0}) != expected_height)
    fail("chain height " + audit.value("height", json(0)).dump() + ", expected " + std::to_string(expected_height));
  if (!nodes.empty() && spent != scenario.requested_units())
    fail("buyers spent " + std::to_string(spent) + " tokens, scenario asks for " +
         std::to_string(scenario.requested_units()));

  json report{{"scenario", opt.scenario.string()},
              {"clock_factor", opt.factor},
              {"clock_start", format_iso8601(clock_start)},
              {"trades", scenario.trade_count()},
              {"committed", std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.state == "committed"; })},
              {"scenario_units", scenario.requested_units()},
              {"committed_units", committed_units},
              {"buyer_spent", spent},
              {"chain_height", audit.value("height", json(nullptr))},
              {"chains_identical", identical && (!reference_chain.empty() || nodes.empty())},
              {"balances", folded},
              {"wall_seconds", wall_seconds},
              {"ok", !failed},
              {"failure", failure}};
  json trades = json::array();
  for (const auto& r : rows)
    trades.push_back({{"number", r.number},
                      {"order_id", r.order_id},
                      {"buyer", r.buyer},
                      {"seller", r.seller},
                      {"units", r.units},
                      {"requested_at", format_iso8601(r.requested_at)},
                      {"state", r.state},
                      {"reason", r.reason},
                      {"block_index", r.block_index},
                      {"latency_ms", r.latency_ms}});
  report["trade_log"] = trades;
  std::ofstream(opt.workdir / "report.json") << report.dump(2) << "\n";

  std::ostringstream txt;
  char line[256];
  txt << "replay of " << opt.scenario.string() << " at " << opt.factor << "x from " << format_display(clock_start)
      << "\n\n";
  std::snprintf(line, sizeof line, "%4s  %-8s  %-6s  %-6s  %7s  %-9s  %5s  %10s\n", "#", "time", "buyer", "seller",
                "Wh", "state", "block", "latency_ms");
  txt << line;
  for (const auto& r : rows) {
    const auto t = format_iso8601(r.requested_at).substr(11, 8);
    std::snprintf(line, sizeof line, "%4zu  %-8s  %-6s  %-6s  %7llu  %-9s  %5lld  %10.1f\n", r.number, t.c_str(),
                  r.buyer.c_str(), r.seller.c_str(), static_cast<unsigned long long>(r.units), r.state.c_str(),
                  static_cast<long long>(r.block_index), r.latency_ms);
    txt << line;
  }
  txt << "\nblocks mined:      " << (audit.contains("height") ? audit["height"].get<std::size_t>() - 1 : 0)
      << "\nWh transferred:    " << committed_units << "\nscenario Wh:       " << scenario.requested_units()
      << "\nbuyer tokens spent: " << spent << "\n";
  for (const auto& [id, bal] : folded) txt << "balance " << id << ": " << bal << "\n";
  txt << "wall time: " << wall_seconds << " s\n"
      << (failed ? "result: FAILED (" + failure + ")" : std::string("result: ok")) << "\n";
  std::ofstream(opt.workdir / "report.txt") << txt.str();
  std::cout << txt.str();
  return failed ? 1 : 0;
}

}  // namespace gridtrade::cli

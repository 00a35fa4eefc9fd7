// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if
// any fails. Oracles here are written independently of the library paths
// they check.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "gridtrade/chain.hpp"
#include "gridtrade/ledger.hpp"
#include "gridtrade/market.hpp"
#include "gridtrade/metrics.hpp"
#include "gridtrade/mlff.hpp"
#include "gridtrade/protocol.hpp"
#include "gridtrade/synthetic.hpp"
#include "json.hpp"
#include "support/fuzz_lines.hpp"
#include "support/node_fixture.hpp"

using namespace gridtrade;
using namespace std::chrono_literals;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 -------------------------------------------------------------------

Outcome replay_day() {
  const fs::path scenario = GRIDTRADE_DATA_DIR "/trading_day.jsonl";
  const fs::path work = GRIDTRADE_WORK_DIR "/acceptance-replay";
  fs::remove_all(work);

  // Independent oracle: sum the request lines straight from the file.
  std::uint64_t want_units = 0;
  std::size_t requests = 0;
  std::istringstream lines(slurp(scenario));
  for (std::string line; std::getline(lines, line);) {
    const auto j = json::parse(line, nullptr, false);
    if (j.is_object() && j.value("action", "") == "request") {
      want_units += j["units"].get<std::uint64_t>();
      ++requests;
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::string cmd = std::string(GRIDTRADE_CLI) + " replay " + scenario.string() + " --factor 60 --difficulty 12" +
                          " --workdir " + work.string() + " > " + (work.string() + ".out") + " 2>&1";
  const int status = std::system(cmd.c_str());
  const double wall = seconds_since(t0);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;

  const auto et_text = slurp(work / "state-ET/chain.txt");
  const auto lib_text = slurp(work / "state-LIB/chain.txt");
  std::size_t height = 0;
  std::uint64_t spent = 0, summed_blocks = 0;
  try {
    const auto chain = parse_chain_file(lib_text, 12, default_genesis_time());
    height = chain.height();
    const auto ledger = fold_ledger(chain, {derive_address("ET"), derive_address("LIB")}, 100000);
    spent = 100000 - ledger.balance_of(derive_address("LIB"));
    for (const auto& b : chain.blocks)
      if (b.sender == derive_address("LIB")) summed_blocks += b.amount;
  } catch (const std::exception& e) {
    return {false, std::string("chain unreadable: ") + e.what()};
  }
  const bool ok = code == 0 && requests == 45 && height == 46 && !et_text.empty() && et_text == lib_text &&
                  spent == want_units && summed_blocks == want_units && wall < 600;
  return {ok, "exit " + std::to_string(code) + ", height " + std::to_string(height) + ", chains " +
                  (et_text == lib_text && !et_text.empty() ? "identical" : "DIFFER") + ", spent " +
                  std::to_string(spent) + " vs scenario sum " + std::to_string(want_units) + fmt(", %.0f s", wall)};
}

// ---- 2 -------------------------------------------------------------------

Outcome tamper_evidence() {
  Chain chain = Chain::fresh(12, default_genesis_time());
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 24; ++i)
    chain.blocks.push_back(mine(chain.tip(), MineRequest{derive_address("LIB"), derive_address("ET"),
                                                         1 + rng() % 5000, 12,
                                                         chain.tip().timestamp + std::chrono::minutes(7)}));
  if (!validate_chain(chain).ok()) return {false, "untampered chain invalid"};

  std::vector<std::string> records;
  for (const auto& b : chain.blocks) records.push_back(chain_record(b));
  std::size_t detected = 0, trials = 2000;
  std::size_t late = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t bi = rng() % records.size();
    std::string rec = records[bi];
    // Bytes that belong to a field: everything except separators and the
    // genesis tag.
    const auto tag = rec.find(std::string("|") + std::string(kGenesisTag));
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] == '|' || rec[i] == '\t') continue;
      if (tag != std::string::npos && i >= tag && i < tag + 1 + kGenesisTag.size()) continue;
      positions.push_back(i);
    }
    const auto pos = positions[rng() % positions.size()];
    rec[pos] = static_cast<char>(rec[pos] ^ (1 << (rng() % 8)));

    Chain tampered = chain;
    try {
      tampered.blocks[bi] = parse_chain_record(rec);
    } catch (const Error&) {
      ++detected;  // the stored record itself no longer reads back
      continue;
    }
    const auto v = validate_chain(tampered);
    if (!v.ok()) {
      if (v.index <= bi) ++detected;
      else ++late;
    }
  }
  return {detected == trials, std::to_string(detected) + "/" + std::to_string(trials) + " single-bit tampers caught over " +
                                  std::to_string(chain.height()) + " blocks" +
                                  (late ? ", " + std::to_string(late) + " only after the tampered block" : "")};
}

// ---- 3 -------------------------------------------------------------------

Outcome token_conservation() {
  std::mt19937_64 rng(33);
  const std::array<Address, 4> who{derive_address("a"), derive_address("b"), derive_address("c"),
                                   derive_address("d")};
  std::size_t sequences = 10000, ops = 0, rejected = 0;
  for (std::size_t s = 0; s < sequences; ++s) {
    TokenLedger ledger;
    std::map<Address, std::uint64_t> bal;
    std::map<std::pair<Address, Address>, std::uint64_t> allow;
    std::uint64_t supply = 0;
    for (const auto& a : who) {
      const std::uint64_t m = rng() % 1000;
      if (m) ledger.mint(a, m);
      bal[a] += m;
      supply += m;
    }
    ledger.seal();
    for (int k = 0; k < 30; ++k, ++ops) {
      const auto& x = who[rng() % 4];
      const auto& y = who[rng() % 4];
      const auto& z = who[rng() % 4];
      const std::uint64_t amt = rng() % 4 == 0 ? 0 : rng() % 700;
      const int op = static_cast<int>(rng() % 3);
      const TokenLedger before = ledger;
      bool threw = false;
      try {
        if (op == 0) ledger.transfer(x, y, amt);
        else if (op == 1) ledger.approve(x, y, amt);
        else ledger.transfer_from(x, y, z, amt);
      } catch (const LedgerError&) {
        threw = true;
      }
      // Model: what an ERC-20 style ledger should do, minus the amount-0 rule
      // which the ledger is allowed to reject.
      bool model_ok = true;
      if (op == 0) model_ok = bal[x] >= amt;
      else if (op == 2) model_ok = allow[{y, x}] >= amt && bal[y] >= amt;
      if (threw) {
        ++rejected;
        if (!(ledger == before)) return {false, "rejected op changed state"};
        if (model_ok && amt != 0) return {false, "valid op rejected"};
        continue;
      }
      if (!model_ok) return {false, "invalid op accepted"};
      if (op == 0) {
        bal[x] -= amt;
        bal[y] += amt;
      } else if (op == 1) {
        allow[{x, y}] = amt;
      } else {
        allow[{y, x}] -= amt;
        bal[y] -= amt;
        bal[z] += amt;
      }
      std::uint64_t sum = 0;
      for (const auto& a : who) {
        const auto b = ledger.balance_of(a);
        if (b != bal[a] || b > supply) return {false, "balance drifted from the model"};
        sum += b;
        for (const auto& c : who)
          if (ledger.allowance(a, c) != allow[{a, c}] || ledger.allowance(a, c) > (std::uint64_t{1} << 62))
            return {false, "allowance drifted from the model"};
      }
      if (sum != supply || ledger.total_supply() != supply) return {false, "supply changed"};
    }
  }
  return {true, std::to_string(sequences) + " sequences, " + std::to_string(ops) + " ops, " +
                    std::to_string(rejected) + " rejections left state unchanged"};
}

// ---- 4 -------------------------------------------------------------------

Outcome surplus_law() {
  std::vector<double> edges{0.0, 1e-12, 0.5, 1.0, 2700.0, 5300.0, 8000.0, 1e6, 1e12};
  std::size_t checks = 0;
  const auto agree = [&](double g, double d) {
    ++checks;
    const double want = g > d ? g - d : 0.0;
    return compute_surplus(g, d, 0.0) == want;
  };
  for (double g : edges)
    for (double d : edges)
      if (!agree(g, d)) return {false, fmt("surplus(%g, %g) wrong", g, d)};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 20000.0);
  for (int i = 0; i < 200000; ++i)
    if (const double g = u(rng), d = u(rng); !agree(g, d)) return {false, fmt("surplus(%g, %g) wrong", g, d)};

  // Simulated day: buyers keep asking until the seller refuses.
  const Instant day = fixture::trade_day();
  std::size_t intervals = 0;
  for (double peak : {8000.0, 30000.0}) {
    synthetic::SolarShape shape;
    shape.peak_w = peak;
    std::map<NodeId, NodeSeries> series;
    series["S"] = {synthetic::solar_day("S", day, shape, Seconds(300)),
                   synthetic::load_day("S", day, 2700, 2700, 0, 24, Seconds(300)), 0.0};
    series["B"] = {synthetic::solar_day("B", day, synthetic::SolarShape{0.0}, Seconds(300)),
                   synthetic::load_day("B", day, 9000, 9000, 0, 24, Seconds(300)), 0.0};
    MarketStates states;
    double cum_surplus_wh = 0, cum_sold = 0;
    const double hours = 300.0 / 3600.0;
    int n = 0;
    for (auto t = day; t < day + std::chrono::hours(24) - std::chrono::minutes(5); t += std::chrono::minutes(5)) {
      tick(states, t, series);
      ++intervals;
      cum_surplus_wh += std::max(states["S"].gen_now - states["S"].demand_now, 0.0) * hours;
      for (;;) {
        const WattHours units = 1 + rng() % 400;
        try {
          apply_trade(states, TradeOrder("o" + std::to_string(++n), "B", "S", units, t), hours);
          cum_sold += static_cast<double>(units);
        } catch (const InsufficientSurplus&) {
          break;
        }
      }
      if (cum_sold > cum_surplus_wh + 1e-9) return {false, fmt("sold %.1f Wh > surplus %.1f Wh", cum_sold, cum_surplus_wh)};
    }
  }
  const double spot = compute_surplus(8000, 2700, 0);
  const bool around_5kw = spot >= 4500 && spot <= 5500;
  return {spot == 5300 && around_5kw, std::to_string(checks) + " surplus checks, " + std::to_string(intervals) +
                                          " simulated intervals, " + fmt("8000/2700 W -> %.0f W", spot)};
}

// ---- 5 -------------------------------------------------------------------

Outcome mining_statistics() {
  Block prev = genesis();
  double sum = 0;
  const int blocks = 200;
  for (int i = 0; i < blocks; ++i) {
    prev = mine(prev, MineRequest{derive_address("LIB"), derive_address("ET"), static_cast<Tokens>(100 + i), 12,
                                  prev.timestamp + 60s});
    // Re-check the proof with an independent bit count.
    unsigned zeros = 0;
    for (char c : prev.hash) {
      const int v = c <= '9' ? c - '0' : c - 'a' + 10;
      if (v == 0) {
        zeros += 4;
        continue;
      }
      for (int bit = 3; bit >= 0 && !(v >> bit & 1); --bit) ++zeros;
      break;
    }
    if (zeros < 12) return {false, "block " + std::to_string(i) + " misses the difficulty"};
    sum += static_cast<double>(prev.nonce);
  }
  const double mean = sum / blocks;
  const double lo = 4096.0 / 3, hi = 3 * 4096.0;
  return {mean >= lo && mean <= hi, fmt("mean nonce %.0f over %.0f blocks, bounds [%.0f, %.0f]", mean, blocks, lo, hi)};
}

// ---- 6 -------------------------------------------------------------------

Dataset random_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.timestamps.push_back(from_unix(static_cast<std::int64_t>(i) * 300));
    d.features.push_back({1000 * u(rng), 20 + 15 * u(rng), 40 + 50 * u(rng), 5 * u(rng)});
    d.targets.push_back(5000 * u(rng));
  }
  return d;
}

Outcome gradient_check() {
  double worst = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto model = mlff::Model::create({4, 8, 4, 1}, seed);
    const auto data = random_rows(24, 1000 + seed);
    model.scalers = mlff::fit_scalers(data);
    const auto batch = mlff::make_batch(model, data);
    const auto g = mlff::backward(model, batch);
    const double h = 1e-5;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const auto probe = [&](double& p, double analytic) {
        const double saved = p;
        p = saved + h;
        const double up = mlff::loss(model, batch);
        p = saved - h;
        const double down = mlff::loss(model, batch);
        p = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic - numeric) / scale);
        ++checked;
      };
      auto& layer = model.layers[l];
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) probe(layer.weights(r, c), g.weights[l](r, c));
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) probe(layer.bias(r), g.bias[l](r));
    }
  }
  return {worst < 1e-4, fmt("max relative error %.2e over %.0f parameters in 20 models", worst, static_cast<double>(checked))};
}

// ---- 7 -------------------------------------------------------------------

Outcome adam_first_step() {
  mlff::AdamConfig cfg;
  double worst = 0;
  for (double g : {1.0, 2.0, 2000.0}) {
    std::vector<double> w{0.0}, grad{g};
    mlff::AdamMoments m;
    mlff::adam_step(w, grad, m, 1, cfg);
    const double want = cfg.learning_rate * std::abs(g) / (std::abs(g) + cfg.epsilon);
    worst = std::max(worst, std::abs(std::abs(w[0]) - want));
  }
  mlff::AdamConfig quick;
  quick.learning_rate = 0.1;
  std::vector<double> w{1.0};
  mlff::AdamMoments m;
  std::vector<double> grad{2 * w[0]};  // d/dw of w^2
  mlff::adam_step(w, grad, m, 1, quick);
  const bool walk = std::abs(w[0] - 0.9) < 1e-6;
  return {worst <= 1e-9 && walk, fmt("max |step - lr*|g|/(|g|+eps)| = %.1e; w^2 from 1 at lr 0.1 -> %.9f", worst, w[0])};
}

// ---- 8 -------------------------------------------------------------------

Outcome forecast_quality() {
  const double capacity = 5000;
  const auto data = synthetic::pv_dataset(600, capacity, 0.02, 11);
  // Oracle for the generator: targets follow the stated PV law within noise.
  double worst_z = 0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto& f = data.features[i];
    if (f[0] == 0) continue;
    const double law = capacity * (f[0] / 1000.0) * (1 - 0.004 * (f[1] - 25));
    worst_z = std::max(worst_z, std::abs(data.targets[i] - std::max(law, 0.0)) / (0.02 * capacity));
  }
  if (worst_z > 6) return {false, fmt("generator strays %.1f sigma from the PV law", worst_z)};

  mlff::TrainOptions opt;
  opt.seed = 7;
  opt.epochs = 800;
  auto m800 = mlff::Model::create(mlff::kDefaultLayerSizes, 7);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r800 = mlff::train(m800, data, opt);
  const double wall = seconds_since(t0);

  opt.epochs = 5000;
  auto m5000 = mlff::Model::create(mlff::kDefaultLayerSizes, 7);
  const auto r5000 = mlff::train(m5000, data, opt);

  // Recompute R^2 and MAE on the validation rows directly.
  const auto parts = mlff::split(data, opt.train_ratio, opt.seed);
  const auto pred = mlff::predict(m800, parts.validation.features);
  double mean = 0;
  for (double y : parts.validation.targets) mean += y;
  mean /= static_cast<double>(parts.validation.rows());
  double ss_res = 0, ss_tot = 0, abs_err = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = parts.validation.targets[i];
    ss_res += (y - pred[i]) * (y - pred[i]);
    ss_tot += (y - mean) * (y - mean);
    abs_err += std::abs(y - pred[i]);
  }
  const double r2 = 1 - ss_res / ss_tot;
  const double mae_pct = 100 * abs_err / static_cast<double>(pred.size()) / capacity;
  const double l800 = r800.train_loss.back(), l5000 = r5000.train_loss.back();
  const bool ok = r2 >= 0.95 && mae_pct <= 3.0 && wall < 300 && l5000 <= l800;
  return {ok, fmt("R2 %.4f, MAE %.2f%% of capacity, %.1f s for 800 epochs; ", r2, mae_pct, wall) +
                  fmt("train loss %.3e at 800 vs %.3e at 5000", l800, l5000)};
}

// ---- 9 -------------------------------------------------------------------

Outcome metrics_identities() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  double worst = 0;
  std::size_t n_series = 2000;
  for (std::size_t s = 0; s < n_series; ++s) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> a(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = u(rng) * std::pow(10.0, static_cast<int>(rng() % 7) - 3);
      p[i] = u(rng) * std::pow(10.0, static_cast<int>(rng() % 7) - 3);
    }
    const bool zero = s % 2 == 0;
    if (zero) a[rng() % n] = 0.0;
    const auto r = compute_metrics(a, p);
    if (r.mse > 0) worst = std::max(worst, std::abs(r.rmse * r.rmse - r.mse) / r.mse);
    if (r.mafe != 100 * r.mae) return {false, "mafe != 100 * mae"};
    if (r.mpe_infinite != zero) return {false, "mpe infinite flag wrong"};
  }
  // Reference evaluation row, epoch 800.
  const double rmse = 0.000598226, mse = 3.58e-07, mae = 0.000267535, mafe = 0.026753489;
  char rounded[32];
  std::snprintf(rounded, sizeof rounded, "%.2e", rmse * rmse);
  const bool reference = std::string(rounded) == "3.58e-07" && std::abs(100 * mae - mafe) < 100 * 5e-10 && mse > 0;
  return {worst <= 1e-9 && reference, fmt("max |rmse^2 - mse|/mse %.1e over %.0f series; reference row ", worst,
                                          static_cast<double>(n_series)) +
                                          (reference ? "consistent" : "INCONSISTENT")};
}

// ---- 10 ------------------------------------------------------------------

Outcome minute_ahead_grid() {
  auto model = mlff::Model::create({4, 6, 1}, 5);
  const auto data = random_rows(50, 5);
  model.scalers = mlff::fit_scalers(data);
  const Instant day = fixture::trade_day();
  const auto grid = [&](std::size_t steps) {
    std::vector<WeatherRecord> g;
    for (std::size_t i = 0; i < steps; ++i)
      g.push_back({day + std::chrono::minutes(5 * static_cast<long>(i)), 500, 30, 60, 0});
    return g;
  };
  const auto g286 = grid(286);
  const bool ends = format_iso8601(g286.back().timestamp) == "2020-04-23T23:45:00Z";
  const auto out = mlff::predict_minute_ahead(model, g286);
  const auto rejects = [&](std::size_t n) {
    try {
      mlff::predict_minute_ahead(model, grid(n));
    } catch (const mlff::MlffError& e) {
      return e.code() == "GridShapeError";
    }
    return false;
  };
  const bool ok = ends && out.size() == 286 && rejects(285) && rejects(288);
  return {ok, "286 steps -> " + std::to_string(out.size()) + " predictions; 285 " +
                  (rejects(285) ? "rejected" : "ACCEPTED") + ", 288 " + (rejects(288) ? "rejected" : "ACCEPTED")};
}

// ---- 11 ------------------------------------------------------------------

Outcome protocol_robustness() {
  const auto lines = fuzz::fuzz_lines(120000, 11);
  std::size_t decoded = 0, refused = 0;
  for (const auto& line : lines) {
    try {
      (void)decode(line);
      ++decoded;
    } catch (const ProtocolError&) {
      ++refused;
    } catch (const std::exception& e) {
      return {false, std::string("decode threw a foreign exception: ") + e.what()};
    }
  }

  fixture::TempDir dir;
  auto et_cfg = fixture::make_config(dir.path, fixture::seller_spec());
  et_cfg.difficulty_bits = 12;
  auto lib_cfg = fixture::make_config(dir.path, fixture::buyer_spec());
  lib_cfg.difficulty_bits = 12;
  Chain ahead = Chain::fresh(et_cfg.difficulty_bits, et_cfg.genesis_time);
  for (int i = 0; i < 6; ++i)
    ahead.blocks.push_back(fixture::trade_block(ahead.tip(), "LIB", "ET", 50 + i, 12,
                                                fixture::trade_day() + std::chrono::hours(9)));
  fs::create_directories(et_cfg.state_dir);
  save_chain(et_cfg.state_dir / "chain.txt", ahead);
  Node et(et_cfg);
  Node lib(lib_cfg);
  et.start();
  lib.start();
  const auto t0 = std::chrono::steady_clock::now();
  lib.add_peer("127.0.0.1", et.listen_port());
  const bool converged = fixture::wait_until([&] { return lib.snapshot()->chain == et.snapshot()->chain; }, 10s);
  const double took = seconds_since(t0);
  lib.stop();
  et.stop();
  const bool files = slurp(et_cfg.state_dir / "chain.txt") == slurp(lib_cfg.state_dir / "chain.txt");
  return {converged && files && took < 10 && decoded + refused == lines.size(),
          std::to_string(lines.size()) + " fuzzed lines (" + std::to_string(refused) + " refused), stale tip " +
              (converged ? fmt("converged in %.2f s", took) : "did NOT converge") +
              (files ? "" : ", chain files differ")};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments pick criteria by number; default runs all.
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"45-trade replay", replay_day},
      {"tamper evidence", tamper_evidence},
      {"token conservation", token_conservation},
      {"surplus law", surplus_law},
      {"mining statistics", mining_statistics},
      {"gradient correctness", gradient_check},
      {"Adam first step", adam_first_step},
      {"synthetic forecast quality", forecast_quality},
      {"metrics identities", metrics_identities},
      {"minute-ahead grid", minute_ahead_grid},
      {"protocol robustness", protocol_robustness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

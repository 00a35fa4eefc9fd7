#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gridtrade/api_server.hpp"
#include "gridtrade/energy_data.hpp"
#include "gridtrade/metrics.hpp"
#include "gridtrade/mlff.hpp"
#include "gridtrade/node.hpp"
#include "gridtrade/node_config.hpp"
#include "gridtrade/synthetic.hpp"
#include "replay.hpp"

namespace fs = std::filesystem;
using namespace gridtrade;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

Instant parse_day(const std::string& text) {
  const auto t = parse_iso8601(text + "T00:00:00Z");
  if (!t) throw Error("BadArgument", "date must be YYYY-MM-DD, got " + text);
  return *t;
}

std::vector<std::size_t> parse_layers(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');) out.push_back(std::stoul(part));
  if (out.size() < 2 || out.front() != kFeatureCount || out.back() != 1)
    throw Error("BadArgument", "layers must start with " + std::to_string(kFeatureCount) + " and end with 1");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("WriteFailed", "cannot write " + path.string());
  out << text;
}

/// Weather features joined with a power target on exact timestamps.
Dataset load_training_data(const fs::path& weather_path, const fs::path& target_path, bool verbose) {
  const auto weather = load_weather_csv(weather_path);
  const auto target = load_power_csv(target_path, "target", SeriesKind::generation);
  auto joined = build_dataset(weather.records, target);
  if (verbose)
    std::cerr << joined.dataset.rows() << " rows joined, " << weather.dropped << " weather rows with gaps, "
              << joined.dropped << " unmatched\n";
  return std::move(joined.dataset);
}

int cmd_run(const fs::path& config_path, bool verbose) {
  auto cfg = load_node_config(config_path);
  cfg.echo_events = true;
  Node node(cfg);
  node.start();
  ApiServer api(node, cfg.api_port);
  std::cout << "node " << cfg.node_id << " peers on 127.0.0.1:" << node.listen_port() << ", API on 127.0.0.1:"
            << api.port() << std::endl;
  if (verbose) std::cout << format_node_config(cfg) << std::flush;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  api.stop();
  node.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer energy trading nodes, replay and solar forecasting."};
  app.require_subcommand(1);
  app.fallthrough();
  fs::path config;
  std::uint64_t seed = 7;
  bool verbose = false;
  app.add_option("--config", config, "Node config file");
  app.add_option("--seed", seed, "Random seed");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* run = app.add_subcommand("run", "Run one node with its HTTP/WebSocket API");

  auto* replay = app.add_subcommand("replay", "Replay a scripted trading day on fresh node processes");
  cli::ReplayOptions ro;
  std::vector<fs::path> replay_configs;
  ro.workdir = "replay-out";
  replay->add_option("scenario,--scenario", ro.scenario, "Scenario JSONL")->required()->check(CLI::ExistingFile);
  replay->add_option("--node", replay_configs, "Node config (overrides the scenario binding for its node id)");
  replay->add_option("--workdir", ro.workdir, "Output directory for state, logs and reports")->capture_default_str();
  replay->add_option("--factor", ro.factor, "Clock acceleration")->capture_default_str()->check(CLI::PositiveNumber);
  unsigned difficulty = 0;
  replay->add_option("--difficulty", difficulty, "Override difficulty bits");

  auto* train = app.add_subcommand("train", "Train the forecaster on weather features and a power series");
  fs::path weather, target, model_out = "model.txt", history;
  long epochs = 800;
  std::string layers = "4,256,128,64,1";
  mlff::TrainOptions topt;
  train->add_option("--weather", weather, "Weather CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--target", target, "Power CSV with the generation to learn")->required()->check(CLI::ExistingFile);
  train->add_option("--epochs", epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--layers", layers, "Layer sizes")->capture_default_str();
  train->add_option("--lr", topt.adam.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--batch", topt.batch_size, "Mini-batch size, 0 for full batch")->capture_default_str();
  train->add_option("--train-ratio", topt.train_ratio, "Training share of the rows")->capture_default_str()->check(CLI::Range(0.05, 0.95));
  train->add_option("--out", model_out, "Model file")->capture_default_str();
  train->add_option("--history", history, "Per-epoch loss CSV");

  auto* predict = app.add_subcommand("predict", "Minute-ahead forecast for one day");
  fs::path model_path, grid_path, pred_out;
  std::string date;
  predict->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  predict->add_option("--grid", grid_path, "Weather CSV covering the day")->required()->check(CLI::ExistingFile);
  predict->add_option("--date", date, "Day to forecast (default: the first day in the grid)");
  predict->add_option("--out", pred_out, "Output CSV (default stdout)");

  auto* metrics = app.add_subcommand("metrics", "Compare a forecast against measurements");
  fs::path actual_path, pred_path;
  std::string label = "forecast";
  metrics->add_option("--actual", actual_path, "Measured power CSV")->required()->check(CLI::ExistingFile);
  metrics->add_option("--pred", pred_path, "Predicted power CSV")->required()->check(CLI::ExistingFile);
  metrics->add_option("--label", label, "Column label")->capture_default_str();

  auto* import = app.add_subcommand("import", "Validate a CSV and write it in canonical form");
  fs::path in_path, out_path;
  std::string kind = "generation", node_id = "node";
  long interval = 300;
  import->add_option("--input", in_path, "Input CSV")->required()->check(CLI::ExistingFile);
  import->add_option("--kind", kind, "generation, consumption or weather")->capture_default_str()
      ->check(CLI::IsMember({"generation", "consumption", "weather"}));
  import->add_option("--interval", interval, "Resample interval in seconds (power only)")->capture_default_str()
      ->check(CLI::PositiveNumber);
  import->add_option("--node-id", node_id, "Node the series belongs to")->capture_default_str();
  import->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* synth = app.add_subcommand("synth", "Generate synthetic input files");
  synth->require_subcommand(1);
  auto* synth_pv = synth->add_subcommand("pv", "Daily weather rows with a physical PV target");
  std::size_t rows = 600;
  double capacity = 5000, noise = 0.02;
  synth_pv->add_option("--rows", rows, "Rows")->capture_default_str();
  synth_pv->add_option("--capacity", capacity, "PV capacity in W")->capture_default_str();
  synth_pv->add_option("--noise", noise, "Gaussian noise as a fraction of capacity")->capture_default_str();
  synth_pv->add_option("--weather", weather, "Weather CSV to write")->required();
  synth_pv->add_option("--target", target, "Power CSV to write")->required();
  auto* synth_day = synth->add_subcommand("day", "One day of generation and consumption for a node");
  std::string day = "2020-04-23";
  double peak = 8000, sigma = 2.5, load = 2700;
  fs::path out_dir = ".";
  synth_day->add_option("--node-id", node_id, "Node id")->capture_default_str();
  synth_day->add_option("--date", day, "Day")->capture_default_str();
  synth_day->add_option("--peak", peak, "Solar peak in W")->capture_default_str();
  synth_day->add_option("--sigma", sigma, "Width of the solar bell in hours")->capture_default_str();
  synth_day->add_option("--load", load, "Constant consumption in W")->capture_default_str();
  synth_day->add_option("--interval", interval, "Sample spacing in seconds")->capture_default_str();
  synth_day->add_option("--out-dir", out_dir, "Writes generation.csv and consumption.csv here")->capture_default_str();
  auto* synth_weather = synth->add_subcommand("weather", "One day of weather on a regular grid");
  double irradiance = 1000;
  synth_weather->add_option("--date", day, "Day")->capture_default_str();
  synth_weather->add_option("--irradiance", irradiance, "Clear-sky peak in W/m^2")->capture_default_str();
  synth_weather->add_option("--interval", interval, "Sample spacing in seconds")->capture_default_str();
  synth_weather->add_option("--out", out_path, "Weather CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (config.empty()) throw Error("ConfigInvalid", "run needs --config");
      return cmd_run(config, verbose);
    }
    if (*replay) {
      for (const auto& p : replay_configs) ro.configs[load_node_config(p).node_id] = fs::absolute(p);
      if (difficulty) ro.difficulty_bits = difficulty;
      ro.executable = fs::read_symlink("/proc/self/exe");
      ro.verbose = verbose;
      return cli::run_replay(ro);
    }
    if (*train) {
      topt.epochs = epochs;
      topt.seed = seed;
      const auto data = load_training_data(weather, target, verbose);
      auto model = mlff::Model::create(parse_layers(layers), seed);
      const auto report = mlff::train(model, data, topt);
      mlff::save_model(model_out, model);
      if (!history.empty()) {
        std::string csv = "epoch,train_loss,validation_loss\n";
        char row[96];
        for (std::size_t i = 0; i < report.train_loss.size(); ++i) {
          std::snprintf(row, sizeof row, "%zu,%.9g,%.9g\n", i + 1, report.train_loss[i], report.validation_loss[i]);
          csv += row;
        }
        write_text(history, csv);
      }
      std::cout << report.train_rows << " training rows, " << report.validation_rows << " validation rows, "
                << report.epochs_run << " epochs\n\n"
                << format_metrics_table({{"Training", report.train_metrics}, {"Validation", report.validation_metrics}})
                << "\nmodel written to " << model_out.string() << "\n";
      return 0;
    }
    if (*predict) {
      const auto model = mlff::load_model(model_path);
      const auto w = load_weather_csv(grid_path);
      if (w.records.empty()) throw Error("EmptySeries", grid_path.string() + " has no complete rows");
      const Instant d = date.empty() ? start_of_day(w.records.front().timestamp) : parse_day(date);
      const auto grid = weather_day_grid(w.records, d);
      const auto watts = mlff::predict_minute_ahead(model, grid);
      PowerSeries out{"forecast", SeriesKind::generation, {}, kMinuteAheadStep};
      for (std::size_t i = 0; i < grid.size(); ++i) out.samples.push_back({grid[i].timestamp, watts[i]});
      write_text(pred_out, format_power_csv(out));
      return 0;
    }
    if (*metrics) {
      const auto a = load_power_csv(actual_path, "actual", SeriesKind::generation);
      const auto p = load_power_csv(pred_path, "predicted", SeriesKind::generation);
      std::vector<double> av, pv;
      std::size_t j = 0;
      for (const auto& s : a.samples) {
        while (j < p.samples.size() && p.samples[j].timestamp < s.timestamp) ++j;
        if (j < p.samples.size() && p.samples[j].timestamp == s.timestamp) {
          av.push_back(s.value_w);
          pv.push_back(p.samples[j].value_w);
        }
      }
      if (verbose) std::cerr << av.size() << " matching timestamps\n";
      std::cout << format_metrics_table({{label, compute_metrics(av, pv)}});
      return 0;
    }
    if (*import) {
      if (kind == "weather") {
        const auto w = load_weather_csv(in_path);
        if (verbose) std::cerr << w.records.size() << " rows kept, " << w.dropped << " dropped\n";
        write_text(out_path, format_weather_csv(w.records));
      } else {
        const auto series = load_power_csv(in_path, node_id, series_kind_from_string(kind));
        const auto grid = resample(series, Seconds(interval));
        if (verbose)
          std::cerr << series.samples.size() << " samples at " << series.interval.count() << " s -> "
                    << grid.samples.size() << " at " << interval << " s\n";
        write_text(out_path, format_power_csv(grid));
      }
      return 0;
    }
    if (*synth_pv) {
      const auto data = synthetic::pv_dataset(rows, capacity, noise, seed);
      std::vector<WeatherRecord> w;
      PowerSeries p{"pv", SeriesKind::generation, {}, Seconds(86400)};
      for (std::size_t i = 0; i < data.rows(); ++i) {
        const auto& f = data.features[i];
        w.push_back({data.timestamps[i], f[0], f[1], f[2], f[3]});
        p.samples.push_back({data.timestamps[i], data.targets[i]});
      }
      write_weather_csv(weather, w);
      write_power_csv(target, p);
      return 0;
    }
    if (*synth_day) {
      synthetic::SolarShape shape;
      shape.peak_w = peak;
      shape.sigma_hours = sigma;
      const auto d = parse_day(day);
      fs::create_directories(out_dir);
      write_power_csv(out_dir / "generation.csv", synthetic::solar_day(node_id, d, shape, Seconds(interval)));
      write_power_csv(out_dir / "consumption.csv",
                      synthetic::load_day(node_id, d, load, load, 0, 24, Seconds(interval)));
      return 0;
    }
    if (*synth_weather) {
      write_text(out_path,
                 format_weather_csv(synthetic::weather_day(parse_day(day), irradiance, Seconds(interval), seed)));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

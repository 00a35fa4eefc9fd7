#include "gridtrade/mlff.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace gridtrade::mlff {
namespace {

std::string kind_name(MlffError::Kind kind) {
  switch (kind) {
    case MlffError::Kind::UnfittedScaler: return "UnfittedScaler";
    case MlffError::Kind::ConstantColumn: return "ConstantColumn";
    case MlffError::Kind::TooFewRows: return "TooFewRows";
    case MlffError::Kind::NonFiniteActivation: return "NonFiniteActivation";
    case MlffError::Kind::ShapeMismatch: return "ShapeMismatch";
    case MlffError::Kind::Diverged: return "Diverged";
    case MlffError::Kind::GridShapeError: return "GridShapeError";
    case MlffError::Kind::BadModelFile: return "BadModelFile";
  }
  return "MlffError";
}

// Fisher-Yates with a plain modulo draw, so a seed gives the same
// permutation on every standard library.
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

Dataset take_rows(const Dataset& data, const std::vector<std::size_t>& rows) {
  Dataset out;
  for (auto r : rows) {
    out.timestamps.push_back(data.timestamps.empty() ? Instant{} : data.timestamps[r]);
    out.features.push_back(data.features[r]);
    out.targets.push_back(data.targets[r]);
  }
  return out;
}

void require_fitted(const Model& model) {
  if (!model.scalers.features.fitted() || !model.scalers.target.fitted())
    throw MlffError(MlffError::Kind::UnfittedScaler, "model scalers are not fitted");
}

struct Activations {
  std::vector<Eigen::MatrixXd> pre;   // z per layer
  std::vector<Eigen::MatrixXd> post;  // a per layer, post[0] = inputs
};

Activations run_forward(const Model& model, const Eigen::MatrixXd& inputs) {
  Activations acts;
  acts.post.push_back(inputs);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = layer.weights * acts.post.back();
    z.colwise() += layer.bias;
    acts.pre.push_back(z);
    if (l + 1 < model.layers.size())
      acts.post.push_back(z.cwiseMax(0.0));
    else
      acts.post.push_back(z);
  }
  return acts;
}

void write_values(std::ostream& out, const double* data, Eigen::Index n) {
  char buf[40];
  for (Eigen::Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

}  // namespace

MlffError::MlffError(Kind kind, const std::string& message, std::size_t detail)
    : Error(kind_name(kind), message), kind_(kind), detail_(detail) {}

double MinMaxScaler::transform(std::size_t c, double v) const { return (v - min[c]) / (max[c] - min[c]); }
double MinMaxScaler::inverse(std::size_t c, double s) const { return min[c] + s * (max[c] - min[c]); }

Scalers fit_scalers(const Dataset& train) {
  if (train.rows() == 0) throw MlffError(MlffError::Kind::TooFewRows, "cannot fit scalers on an empty dataset");
  Scalers s;
  s.features.min.assign(kFeatureCount, std::numeric_limits<double>::infinity());
  s.features.max.assign(kFeatureCount, -std::numeric_limits<double>::infinity());
  for (const auto& row : train.features)
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      s.features.min[c] = std::min(s.features.min[c], row[c]);
      s.features.max[c] = std::max(s.features.max[c], row[c]);
    }
  for (std::size_t c = 0; c < kFeatureCount; ++c)
    if (!(s.features.max[c] > s.features.min[c]))
      throw MlffError(MlffError::Kind::ConstantColumn, "feature column " + std::to_string(c) + " is constant", c);
  const auto [lo, hi] = std::minmax_element(train.targets.begin(), train.targets.end());
  if (!(*hi > *lo)) throw MlffError(MlffError::Kind::ConstantColumn, "target is constant", kFeatureCount);
  s.target.min = {*lo};
  s.target.max = {*hi};
  return s;
}

Model Model::create(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2 || sizes.back() != 1)
    throw MlffError(MlffError::Kind::ShapeMismatch, "layer sizes need an input and a single output");
  Model m;
  m.layer_sizes = sizes;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l - 1]);
    const auto out = static_cast<Eigen::Index>(sizes[l]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) {
        // 53-bit uniform in [0, 1), mapped to [-limit, limit).
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        layer.weights(i, j) = (2.0 * u - 1.0) * limit;
      }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

Eigen::RowVectorXd forward_scaled(const Model& model, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != static_cast<Eigen::Index>(model.layer_sizes.front()))
    throw MlffError(MlffError::Kind::ShapeMismatch, "input width does not match the first layer");
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Eigen::MatrixXd z = model.layers[l].weights * a;
    z.colwise() += model.layers[l].bias;
    a = l + 1 < model.layers.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return a.row(0);
}

Batch make_batch(const Model& model, const Dataset& data) {
  require_fitted(model);
  const auto n = static_cast<Eigen::Index>(data.rows());
  Batch b{Eigen::MatrixXd(kFeatureCount, n), Eigen::RowVectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = data.features[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < kFeatureCount; ++c)
      b.inputs(static_cast<Eigen::Index>(c), i) = model.scalers.features.transform(c, row[c]);
    b.targets(i) = model.scalers.target.transform(0, data.targets[static_cast<std::size_t>(i)]);
  }
  return b;
}

std::vector<double> predict(const Model& model, const std::vector<FeatureRow>& rows) {
  require_fitted(model);
  Dataset d;
  d.features = rows;
  d.targets.assign(rows.size(), model.scalers.target.min[0]);
  const auto batch = make_batch(model, d);
  const auto raw = forward_scaled(model, batch.inputs);
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[i] = std::max(0.0, model.scalers.target.inverse(0, raw(static_cast<Eigen::Index>(i))));
  return out;
}

double forward(const Model& model, const FeatureRow& features) { return predict(model, {features}).front(); }

double loss(const Model& model, const Batch& batch) {
  const auto raw = forward_scaled(model, batch.inputs);
  return (raw - batch.targets).squaredNorm() / static_cast<double>(batch.targets.size());
}

Gradients backward(const Model& model, const Batch& batch) {
  const auto n = batch.targets.size();
  if (n == 0) throw MlffError(MlffError::Kind::TooFewRows, "empty batch");
  const auto acts = run_forward(model, batch.inputs);
  const Eigen::RowVectorXd residual = acts.post.back().row(0) - batch.targets;
  if (!residual.allFinite()) throw MlffError(MlffError::Kind::NonFiniteActivation, "non-finite forward pass");

  const std::size_t L = model.layers.size();
  Gradients g;
  g.weights.resize(L);
  g.bias.resize(L);
  g.loss = residual.squaredNorm() / static_cast<double>(n);

  Eigen::MatrixXd delta = (2.0 / static_cast<double>(n)) * residual;
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta * acts.post[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd upstream = model.layers[l].weights.transpose() * delta;
    delta = upstream.cwiseProduct((acts.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return g;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, long t,
               const AdamConfig& c) {
  if (params.size() != grads.size())
    throw MlffError(MlffError::Kind::ShapeMismatch, "parameter and gradient sizes differ");
  if (t < 1) throw MlffError(MlffError::Kind::ShapeMismatch, "adam step index must be >= 1");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw MlffError(MlffError::Kind::ShapeMismatch, "moment and parameter sizes differ");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

SplitResult split(const Dataset& data, double ratio, std::uint64_t seed) {
  const auto n = data.rows();
  if (n < 5) throw MlffError(MlffError::Kind::TooFewRows, "need at least 5 rows to split, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  shuffle_indices(idx, rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  const std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<long>(n_train));
  const std::vector<std::size_t> val_idx(idx.begin() + static_cast<long>(n_train), idx.end());
  return {take_rows(data, train_idx), take_rows(data, val_idx)};
}

TrainReport train(Model& model, const Dataset& data, const TrainOptions& opt) {
  if (opt.epochs < 1) throw MlffError(MlffError::Kind::ShapeMismatch, "epochs must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  auto [train_set, val_set] = split(data, opt.train_ratio, opt.seed);
  model.scalers = fit_scalers(train_set);
  const Batch full_train = make_batch(model, train_set);
  const Batch full_val = make_batch(model, val_set);

  const std::size_t n = train_set.rows();
  const std::size_t batch_size = opt.batch_size == 0 ? n : std::min(opt.batch_size, n);
  std::vector<AdamMoments> w_moments(model.layers.size()), b_moments(model.layers.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed ^ 0x9E3779B97F4A7C15ull);

  TrainReport report;
  report.train_rows = n;
  report.validation_rows = val_set.rows();
  long step = 0;
  for (long epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (batch_size < n) shuffle_indices(order, rng);
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      const auto count = static_cast<Eigen::Index>(std::min(batch_size, n - begin));
      Batch mb;
      if (batch_size == n) {
        mb = full_train;
      } else {
        mb.inputs.resize(static_cast<Eigen::Index>(kFeatureCount), count);
        mb.targets.resize(count);
        for (Eigen::Index k = 0; k < count; ++k) {
          const auto src = static_cast<Eigen::Index>(order[begin + static_cast<std::size_t>(k)]);
          mb.inputs.col(k) = full_train.inputs.col(src);
          mb.targets(k) = full_train.targets(src);
        }
      }
      const auto g = backward(model, mb);
      ++step;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        adam_step({layer.weights.data(), static_cast<std::size_t>(layer.weights.size())},
                  {g.weights[l].data(), static_cast<std::size_t>(g.weights[l].size())}, w_moments[l], step, opt.adam);
        adam_step({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())},
                  {g.bias[l].data(), static_cast<std::size_t>(g.bias[l].size())}, b_moments[l], step, opt.adam);
      }
    }
    const double tl = loss(model, full_train);
    const double vl = full_val.targets.size() ? loss(model, full_val) : 0.0;
    if (!std::isfinite(tl) || !std::isfinite(vl))
      throw MlffError(MlffError::Kind::Diverged, "loss diverged at epoch " + std::to_string(epoch),
                      static_cast<std::size_t>(epoch));
    report.train_loss.push_back(tl);
    report.validation_loss.push_back(vl);
    report.epochs_run = epoch;
  }
  report.train_metrics = compute_metrics(train_set.targets, predict(model, train_set.features));
  if (val_set.rows() >= 2)
    report.validation_metrics = compute_metrics(val_set.targets, predict(model, val_set.features));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<double> predict_minute_ahead(const Model& model, const std::vector<WeatherRecord>& grid) {
  if (grid.size() != kMinuteAheadSteps)
    throw MlffError(MlffError::Kind::GridShapeError,
                    "minute-ahead grid has " + std::to_string(grid.size()) + " records, want " +
                        std::to_string(kMinuteAheadSteps),
                    grid.size());
  const auto day = start_of_day(grid.front().timestamp);
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i].timestamp != day + kMinuteAheadStep * static_cast<long>(i))
      throw MlffError(MlffError::Kind::GridShapeError,
                      "minute-ahead record " + std::to_string(i) + " is not on the 5-minute grid from 00:00:00",
                      grid.size());
  std::vector<FeatureRow> rows;
  rows.reserve(grid.size());
  for (const auto& r : grid) rows.push_back(features_of(r));
  return predict(model, rows);
}

std::string serialize(const Model& model) {
  require_fitted(model);
  std::ostringstream out;
  out << "gridtrade-mlff 1\n";
  out << "seed " << model.seed << '\n';
  out << "layers " << model.layer_sizes.size();
  for (auto s : model.layer_sizes) out << ' ' << s;
  out << '\n';
  out << "feature_min ";
  write_values(out, model.scalers.features.min.data(), static_cast<Eigen::Index>(kFeatureCount));
  out << "feature_max ";
  write_values(out, model.scalers.features.max.data(), static_cast<Eigen::Index>(kFeatureCount));
  out << "target_min ";
  write_values(out, model.scalers.target.min.data(), 1);
  out << "target_max ";
  write_values(out, model.scalers.target.max.data(), 1);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    out << "layer " << l << ' ' << layer.weights.rows() << ' ' << layer.weights.cols() << '\n';
    // Row-major weights.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weights;
    out << "weights ";
    write_values(out, rm.data(), rm.size());
    out << "bias ";
    write_values(out, layer.bias.data(), layer.bias.size());
  }
  return out.str();
}

Model deserialize(const std::string& text) {
  std::istringstream in(text);
  const auto fail = [](const std::string& why) { return MlffError(MlffError::Kind::BadModelFile, "model file: " + why); };
  const auto expect = [&](const char* key) {
    std::string word;
    if (!(in >> word) || word != key) throw fail(std::string("expected '") + key + "'");
  };
  const auto read_doubles = [&](std::size_t n) {
    std::vector<double> v(n);
    std::string token;
    for (auto& x : v) {
      if (!(in >> token)) throw fail("truncated values");
      char* end = nullptr;
      x = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) throw fail("bad number '" + token + "'");
    }
    return v;
  };
  expect("gridtrade-mlff");
  int version = 0;
  if (!(in >> version) || version != 1) throw fail("unsupported version");
  Model m;
  expect("seed");
  if (!(in >> m.seed)) throw fail("seed");
  expect("layers");
  std::size_t count = 0;
  if (!(in >> count) || count < 2 || count > 64) throw fail("layer count");
  m.layer_sizes.resize(count);
  for (auto& s : m.layer_sizes)
    if (!(in >> s) || s == 0 || s > 1 << 16) throw fail("layer size");
  if (m.layer_sizes.front() != kFeatureCount || m.layer_sizes.back() != 1) throw fail("layer shape");
  expect("feature_min");
  m.scalers.features.min = read_doubles(kFeatureCount);
  expect("feature_max");
  m.scalers.features.max = read_doubles(kFeatureCount);
  expect("target_min");
  m.scalers.target.min = read_doubles(1);
  expect("target_max");
  m.scalers.target.max = read_doubles(1);
  for (std::size_t l = 0; l + 1 < count; ++l) {
    expect("layer");
    std::size_t idx = 0, rows = 0, cols = 0;
    if (!(in >> idx >> rows >> cols) || idx != l || rows != m.layer_sizes[l + 1] || cols != m.layer_sizes[l])
      throw fail("layer header " + std::to_string(l));
    expect("weights");
    const auto w = read_doubles(rows * cols);
    expect("bias");
    const auto b = read_doubles(rows);
    Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j)
        layer.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w[i * cols + j];
      layer.bias(static_cast<Eigen::Index>(i)) = b[i];
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IoError", "cannot write " + path.string());
  out << serialize(model);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MlffError(MlffError::Kind::BadModelFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace gridtrade::mlff

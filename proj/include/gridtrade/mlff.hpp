#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gridtrade/energy_data.hpp"
#include "gridtrade/error.hpp"
#include "gridtrade/metrics.hpp"

namespace gridtrade::mlff {

class MlffError : public Error {
 public:
  enum class Kind {
    UnfittedScaler,
    ConstantColumn,
    TooFewRows,
    NonFiniteActivation,
    ShapeMismatch,
    Diverged,
    GridShapeError,
    BadModelFile,
  };

  MlffError(Kind kind, const std::string& message, std::size_t detail = 0);

  Kind kind() const noexcept { return kind_; }
  /// Column index for ConstantColumn, epoch for Diverged, record count for
  /// GridShapeError.
  std::size_t detail() const noexcept { return detail_; }

 private:
  Kind kind_;
  std::size_t detail_;
};

inline constexpr double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Per-column min-max to [0, 1].
struct MinMaxScaler {
  std::vector<double> min;
  std::vector<double> max;

  bool fitted() const noexcept { return !min.empty(); }
  double transform(std::size_t column, double value) const;
  double inverse(std::size_t column, double scaled) const;
};

struct Scalers {
  MinMaxScaler features;  // kFeatureCount columns
  MinMaxScaler target;    // 1 column
};

/// Fits on the rows given (the training split). A constant feature column
/// throws ConstantColumn(index); a constant target throws
/// ConstantColumn(kFeatureCount).
Scalers fit_scalers(const Dataset& train);

/// weights: out x in; bias: out.
struct Layer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

inline const std::vector<std::size_t> kDefaultLayerSizes{kFeatureCount, 256, 128, 64, 1};

/// ReLU hidden layers, linear output layer.
struct Model {
  std::vector<std::size_t> layer_sizes;
  std::vector<Layer> layers;
  Scalers scalers;
  std::uint64_t seed = 0;

  /// He-style uniform fan-in initialisation, zero biases.
  static Model create(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed);

  std::size_t parameter_count() const;
};

/// Scaled inputs, one sample per column (in x n) -> raw outputs (1 x n).
Eigen::RowVectorXd forward_scaled(const Model& model, const Eigen::MatrixXd& inputs);

/// Physical-unit prediction for one record, clamped at zero.
double forward(const Model& model, const FeatureRow& features);
std::vector<double> predict(const Model& model, const std::vector<FeatureRow>& rows);

/// Scaled training batch: inputs in x n, targets 1 x n.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::RowVectorXd targets;
};

Batch make_batch(const Model& model, const Dataset& data);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  double loss = 0.0;
};

/// Mean squared error over the batch (scaled space).
double loss(const Model& model, const Batch& batch);

/// Exact gradient of loss(); ReLU'(0) = 0.
Gradients backward(const Model& model, const Batch& batch);

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update for step t >= 1. Moments are sized on
/// first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, long t,
               const AdamConfig& config);

struct SplitResult {
  Dataset train;
  Dataset validation;
};

/// Seeded shuffle; train gets ceil(ratio * n) rows.
SplitResult split(const Dataset& data, double ratio, std::uint64_t seed);

struct TrainOptions {
  long epochs = 800;
  std::size_t batch_size = 0;  // 0 = full batch
  double train_ratio = 0.8;
  std::uint64_t seed = 7;
  AdamConfig adam;
};

struct TrainReport {
  long epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  MetricsReport validation_metrics;
  MetricsReport train_metrics;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  double wall_seconds = 0.0;
};

/// Splits, fits scalers on the training rows, runs full-pass epochs of Adam
/// on shuffled mini-batches. Throws Diverged(epoch) on a non-finite loss.
TrainReport train(Model& model, const Dataset& data, const TrainOptions& options);

/// 286 records at 5-minute spacing from 00:00:00; one prediction each.
std::vector<double> predict_minute_ahead(const Model& model, const std::vector<WeatherRecord>& grid);

std::string serialize(const Model& model);
Model deserialize(const std::string& text);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace gridtrade::mlff

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nfr/network.hpp"
#include "nfr/optimizer.hpp"
#include "nfr/regularizers.hpp"
#include "nfr/repopulation.hpp"

namespace nfr {

/// When feature repopulation runs: after each listed epoch, or every
/// `every` epochs up to `until`, then every `then_every` epochs after it.
struct DfrSchedule {
  std::vector<std::size_t> epochs;
  std::size_t every = 0;
  std::size_t until = 0;
  std::size_t then_every = 0;

  bool fires_after(std::size_t epoch) const;
  bool empty() const { return epochs.empty() && every == 0 && then_every == 0; }
};

struct DataConfig {
  std::size_t n_train = 10000;
  std::size_t n_test = 2000;
  double lo = -6.283185307179586;
  double hi = 6.283185307179586;
  /// Append a constant 1 to the scalar input (input_dim 2).
  bool constant_input = true;
  /// Optional x,y CSV files replacing the generated sets.
  std::string train_csv;
  std::string test_csv;
  /// Held-out points for the variance estimate.
  std::size_t variance_batch = 512;
};

struct Seeds {
  std::uint64_t init = 1;
  std::uint64_t data = 2;
  std::uint64_t resample = 3;
};

struct TrainConfig {
  std::size_t depth = 3;
  std::size_t base_width = 128;
  /// Overrides the base_width * 2^(L - l) rule when non-empty.
  std::vector<std::size_t> widths;
  Activation activation = Activation::Tanh;
  LossKind loss = LossKind::Squared;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  RegularizerSpec regularizer = RegularizerSpec::preset("L12", 3, 1e-4);
  DfrSchedule dfr;
  ProxConfig prox;
  Seeds seeds;
  DataConfig data;
  double init_gain = 1.0;
  /// Extra init factor on layer-1 weights of the constant coordinate; it
  /// spreads the initial ridge offsets over the data range.
  double init_const_gain = 1.0;
  /// Writes measured seconds into the metrics file; off by default so that
  /// metrics files are reproducible byte for byte.
  bool record_wall_clock = false;

  /// m^(1..L) after applying the width rule.
  std::vector<std::size_t> resolved_widths() const;
  void validate() const;
};

/// Parses the JSON config schema documented in the README.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  double reg_value = 0.0;
  double variance = 0.0;
  double seconds = 0.0;
  bool repopulated = false;
};

inline constexpr const char* kMetricsHeader = "epoch,train_rmse,test_rmse,reg_value,variance,seconds";

void write_metrics_csv(const std::vector<MetricsRecord>& metrics, const std::string& path);

struct TrainResult {
  Network net;
  std::vector<MetricsRecord> metrics;
};

struct TrainHooks {
  /// Called after each epoch's record is complete.
  std::function<void(const MetricsRecord&, const Network&)> on_epoch;
  /// Where the last good network goes if training diverges (empty: nowhere).
  std::string divergence_checkpoint;
};

/// Minibatch optimization of mean loss + regularizer with optional feature
/// repopulation (solve_weights then resample) after scheduled epochs.
TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Root mean squared error of the network on (x, y) pairs.
double rmse(const Network& net, const Matrix& inputs, std::span<const double> targets);

}  // namespace nfr

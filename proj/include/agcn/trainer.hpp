#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "agcn/data.hpp"
#include "agcn/network.hpp"
#include "agcn/optim.hpp"

namespace agcn {

struct MetricsRecord {
  int epoch = 0;
  // nan on the epoch-0 row: no training has happened yet
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = 0.0;
  double val_pixel_error = 0.0;
  double max_step_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
  std::size_t peak_bytes = 0;  // transient peak above the epoch-start baseline
  std::vector<LambdaStats<float>> lambda;  // present only for AGC runs
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::string metrics_csv;
};

/// Injection points for train(). clock returns seconds and defaults to the
/// steady clock; tests inject a counter so identical runs emit identical
/// CSV bytes, wall time included.
struct TrainHooks {
  std::function<double()> clock;
};

/// Fraction of mismatching entries; shapes must agree.
double pixel_error(const IntTensor& pred, const IntTensor& truth);

/// Per-pixel argmax over the channel axis of [n,k,h,w] logits, first
/// maximum winning ties.
IntTensor argmax_channel(const TensorF& logits);

/// One forward/backward/update over one batch; returns the batch loss.
/// Renormalizes conv weight gradients per filter by GEMS activity counts
/// when the config enables it (the bare head has no activity notion and is
/// left alone). Throws on non-finite loss before touching any parameter.
double train_step(Network<float>& net, TensorF images, IntTensor labels,
                  const TensorF& class_weights, const TrainConfig& config,
                  optim::SgdState<float>& opt);

struct ValMetrics {
  double loss = 0.0;
  double pixel_err = 0.0;
};

/// Inference-mode metrics over a whole set, batch losses combined exactly
/// by their valid-pixel counts.
ValMetrics evaluate(Network<float>& net, const std::vector<data::Sample>& set,
                    const TensorF& class_weights, int minibatch);

std::string metrics_csv_header(const std::vector<std::string>& lambda_layers);
std::string metrics_csv_row(const MetricsRecord& r);

/// Runs config.epochs training epochs with per-epoch validation rows,
/// epoch 0 being the untrained baseline. Sample order reshuffles each epoch
/// from the config seed; class weights come from the training set. The
/// caller persists the CSV text and the final checkpoint.
TrainResult train(Network<float>& net, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace agcn

#include "agcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "agcn/ops.hpp"
#include "agcn/tape.hpp"

namespace agcn {

namespace {

constexpr std::int32_t kIgnoreLabel = -1;

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

TensorF class_weights_for(const std::vector<data::Sample>& train_set, int classes) {
  if (train_set.empty()) return TensorF({classes}, 1.0f);
  const TensorD w = data::enet_class_weights(data::class_frequencies(train_set, classes));
  TensorF out({classes});
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(w[i]);
  return out;
}

// Pack set[order[first..first+count)] into batch tensors.
std::pair<TensorF, IntTensor> pack_batch(const std::vector<data::Sample>& set,
                                         const std::vector<int>& order, std::size_t first,
                                         std::size_t count) {
  const data::Sample& head = set[static_cast<std::size_t>(order[first])];
  const std::int64_t c = head.image.extent(0);
  const std::int64_t h = head.image.extent(1);
  const std::int64_t w = head.image.extent(2);
  TensorF images({static_cast<std::int64_t>(count), c, h, w});
  IntTensor labels({static_cast<std::int64_t>(count), h, w});
  for (std::size_t b = 0; b < count; ++b) {
    const data::Sample& s = set[static_cast<std::size_t>(order[first + b])];
    if (s.image.extent(1) != h || s.image.extent(2) != w) {
      throw std::invalid_argument("trainer: mixed image extents in one set");
    }
    std::copy(s.image.data(), s.image.data() + c * h * w,
              images.data() + static_cast<std::int64_t>(b) * c * h * w);
    std::copy(s.labels.data(), s.labels.data() + h * w,
              labels.data() + static_cast<std::int64_t>(b) * h * w);
  }
  return {std::move(images), std::move(labels)};
}

std::int64_t count_valid(const IntTensor& labels) {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < labels.numel(); ++i) n += labels[i] != kIgnoreLabel;
  return n;
}

std::vector<int> identity_order(std::size_t n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

}  // namespace

double pixel_error(const IntTensor& pred, const IntTensor& truth) {
  if (!pred.same_shape(truth)) {
    throw std::invalid_argument("pixel_error: shapes " + pred.shape_str() + " vs " +
                                truth.shape_str());
  }
  std::int64_t wrong = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) wrong += pred[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.numel());
}

IntTensor argmax_channel(const TensorF& logits) {
  if (logits.rank() != 4) {
    throw std::invalid_argument("argmax_channel: expected [n,k,h,w], got " + logits.shape_str());
  }
  const std::int64_t n = logits.extent(0), k = logits.extent(1);
  const std::int64_t map = logits.extent(2) * logits.extent(3);
  IntTensor out({n, logits.extent(2), logits.extent(3)});
  for (std::int64_t s = 0; s < n; ++s) {
    const float* base = logits.data() + s * k * map;
    for (std::int64_t pix = 0; pix < map; ++pix) {
      std::int32_t best = 0;
      float top = base[pix];
      for (std::int64_t j = 1; j < k; ++j) {
        const float v = base[j * map + pix];
        if (v > top) {
          top = v;
          best = static_cast<std::int32_t>(j);
        }
      }
      out[s * map + pix] = best;
    }
  }
  return out;
}

double train_step(Network<float>& net, TensorF images, IntTensor labels,
                  const TensorF& class_weights, const TrainConfig& config,
                  optim::SgdState<float>& opt) {
  Tape<float> tape;
  auto bind = net.forward(tape, std::move(images), true, config.gems_enabled);
  const Val loss = ops::weighted_softmax_xent(tape, bind.logits, labels, class_weights,
                                              kIgnoreLabel);
  const double loss_value = tape.value(loss)[0];
  if (!std::isfinite(loss_value)) {
    throw std::runtime_error("non-finite loss " + fmt_real(loss_value));
  }
  tape.backward(loss);
  for (const auto& [name, v] : bind.trainable) {
    Tensor<float>& grad = tape.grad(v);
    if (config.gems_enabled && name.size() > 2 && name.compare(name.size() - 2, 2, "/W") == 0) {
      const auto it = bind.active.find(name.substr(0, name.size() - 2));
      if (it != bind.active.end()) {
        const auto& [counts, total] = it->second;
        const std::int64_t oc = grad.extent(0);
        const std::int64_t row = grad.numel() / oc;
        for (std::int64_t f = 0; f < oc; ++f) {
          // rebuild the raw per-position sum, then let GEMS renormalize it
          TensorF raw({row});
          for (std::int64_t i = 0; i < row; ++i) {
            raw[i] = grad[f * row + i] * static_cast<float>(total);
          }
          const TensorF fixed =
              optim::gems_normalize(raw, counts[static_cast<std::size_t>(f)], total);
          for (std::int64_t i = 0; i < row; ++i) grad[f * row + i] = fixed[i];
        }
      }
    }
    optim::sgd_momentum_step(net.param(name), grad, name, opt);
  }
  return loss_value;
}

ValMetrics evaluate(Network<float>& net, const std::vector<data::Sample>& set,
                    const TensorF& class_weights, int minibatch) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty sample set");
  if (minibatch < 1) throw std::invalid_argument("evaluate: minibatch must be >= 1");
  const std::vector<int> order = identity_order(set.size());
  double loss_weighted = 0.0;
  std::int64_t valid_total = 0, wrong = 0, pixels = 0;
  for (std::size_t first = 0; first < set.size(); first += static_cast<std::size_t>(minibatch)) {
    const std::size_t count = std::min(static_cast<std::size_t>(minibatch), set.size() - first);
    auto [images, labels] = pack_batch(set, order, first, count);
    Tape<float> tape;
    auto bind = net.forward(tape, std::move(images), false);
    const Val loss =
        ops::weighted_softmax_xent(tape, bind.logits, labels, class_weights, kIgnoreLabel);
    const std::int64_t valid = count_valid(labels);
    loss_weighted += tape.value(loss)[0] * static_cast<double>(valid);
    valid_total += valid;
    const IntTensor pred = argmax_channel(tape.value(bind.logits));
    for (std::int64_t i = 0; i < pred.numel(); ++i) wrong += pred[i] != labels[i];
    pixels += pred.numel();
  }
  ValMetrics m;
  m.loss = loss_weighted / static_cast<double>(valid_total);
  m.pixel_err = static_cast<double>(wrong) / static_cast<double>(pixels);
  return m;
}

std::string metrics_csv_header(const std::vector<std::string>& lambda_layers) {
  std::string h = "epoch,train_loss,val_loss,val_pixel_error,max_step_loss,wall_time_s,peak_bytes";
  for (const std::string& layer : lambda_layers) {
    for (const char* stat : {"min", "mean", "max"}) {
      h += ",lambda_" + layer + "_" + stat;
    }
  }
  h += "\n";
  return h;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.epoch);
  row += "," + fmt_real(r.train_loss);
  row += "," + fmt_real(r.val_loss);
  row += "," + fmt_real(r.val_pixel_error);
  row += "," + fmt_real(r.max_step_loss);
  row += "," + fmt_real(r.wall_time_s);
  row += "," + std::to_string(r.peak_bytes);
  for (const auto& s : r.lambda) {
    row += "," + fmt_real(s.min);
    row += "," + fmt_real(s.mean);
    row += "," + fmt_real(s.max);
  }
  row += "\n";
  return row;
}

TrainResult train(Network<float>& net, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks) {
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
  std::function<double()> clock = hooks.clock;
  if (!clock) {
    clock = [] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
          .count();
    };
  }
  const double t0 = clock();
  const bool agc = net.mode() == NormMode::agc;
  const TensorF weights = class_weights_for(train_set, net.spec().classes);

  std::vector<std::string> lambda_layers;
  if (agc) {
    for (const auto& s : net.lambda_stats()) lambda_layers.push_back(s.layer);
  }

  TrainResult out;
  out.metrics_csv = metrics_csv_header(lambda_layers);
  const auto push_record = [&](MetricsRecord r) {
    out.metrics_csv += metrics_csv_row(r);
    out.records.push_back(std::move(r));
  };

  // peak_bytes records the transient high-water mark above the bytes live
  // when the epoch began, so the column depends only on config and seed,
  // not on unrelated allocations elsewhere in the process.
  std::size_t base_bytes = alloc::current_bytes();
  alloc::reset_peak();
  {
    MetricsRecord r;
    r.epoch = 0;
    const ValMetrics v = evaluate(net, val_set, weights, config.minibatch_size);
    r.val_loss = v.loss;
    r.val_pixel_error = v.pixel_err;
    if (agc) r.lambda = net.lambda_stats();
    r.wall_time_s = clock() - t0;
    r.peak_bytes = alloc::peak_bytes() - base_bytes;
    push_record(std::move(r));
  }

  optim::SgdState<float> opt{static_cast<float>(effective_lr(config)),
                             static_cast<float>(config.momentum),
                             {}};
  const Rng shuffle_root = Rng(config.seed).split(0x65706f6368ULL);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    base_bytes = alloc::current_bytes();
    alloc::reset_peak();
    std::vector<int> order = identity_order(train_set.size());
    Rng erng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order.begin(), order.end());

    double loss_weighted = 0.0;
    std::int64_t valid_total = 0;
    double max_step_loss = -std::numeric_limits<double>::infinity();
    int step = 0;
    for (std::size_t first = 0; first < order.size();
         first += static_cast<std::size_t>(config.minibatch_size), ++step) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(config.minibatch_size), order.size() - first);
      auto [images, labels] = pack_batch(train_set, order, first, count);
      const std::int64_t valid = count_valid(labels);
      double loss;
      try {
        loss = train_step(net, std::move(images), std::move(labels), weights, config, opt);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: " + std::string(e.what()) + " at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
      }
      loss_weighted += loss * static_cast<double>(valid);
      valid_total += valid;
      max_step_loss = std::max(max_step_loss, loss);
    }

    MetricsRecord r;
    r.epoch = epoch;
    if (valid_total > 0) {
      r.train_loss = loss_weighted / static_cast<double>(valid_total);
      r.max_step_loss = max_step_loss;
    }
    const ValMetrics v = evaluate(net, val_set, weights, config.minibatch_size);
    r.val_loss = v.loss;
    r.val_pixel_error = v.pixel_err;
    if (agc) r.lambda = net.lambda_stats();
    r.wall_time_s = clock() - t0;
    r.peak_bytes = alloc::peak_bytes() - base_bytes;
    push_record(std::move(r));
  }
  return out;
}

}  // namespace agcn

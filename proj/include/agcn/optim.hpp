#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "agcn/rng.hpp"
#include "agcn/tensor.hpp"

namespace agcn {

enum class NormMode { agc, bn, none };

NormMode norm_mode_from_name(const std::string& name);
std::string norm_mode_name(NormMode m);

/// Flat key=value training configuration. Every field has a default; unknown
/// keys in a config file are errors. See README for the key list.
struct TrainConfig {
  NormMode norm_mode = NormMode::agc;
  double base_lr = 0.02;
  int minibatch_size = 4;
  double momentum = 0.9;
  bool lr_scale = true;      // effective lr = base_lr * minibatch_size
  bool gems_enabled = false;
  bool identity_init = false;
  std::uint64_t seed = 1;
  int epochs = 30;

  // dataset wiring: load from files when paths are set, else generate
  std::string train_data;
  std::string val_data;
  int data_h = 64;
  int data_w = 64;
  int data_classes = 5;
  int data_train = 512;
  int data_val = 128;
  std::uint64_t data_seed = 7;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);
void validate_config(const TrainConfig& c);
std::string config_to_text(const TrainConfig& c);
void save_config(const TrainConfig& c, const std::string& path);

inline double effective_lr(const TrainConfig& c) {
  return c.lr_scale ? c.base_lr * static_cast<double>(c.minibatch_size) : c.base_lr;
}

namespace optim {

/// He fan-in initialization for conv weights [oc,ic,kh,kw]:
/// N(0, sqrt(2 / (ic*kh*kw))).
template <typename T>
Tensor<T> he_fan_in_init(const std::vector<std::int64_t>& shape, Rng& rng) {
  if (shape.size() != 4) {
    throw std::invalid_argument("he_fan_in_init: weight shape must be rank 4");
  }
  const std::int64_t fan_in = shape[1] * shape[2] * shape[3];
  if (fan_in <= 0) throw std::invalid_argument("he_fan_in_init: zero fan-in");
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> w(shape);
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    w[i] = static_cast<T>(std_dev * rng.normal());
  }
  return w;
}

/// Centre-tap delta kernel: output channel o copies input channel o. Only
/// defined for square-channel odd kernels.
template <typename T>
Tensor<T> identity_delta_init(const std::vector<std::int64_t>& shape) {
  if (shape.size() != 4 || shape[0] != shape[1] || shape[2] % 2 == 0 || shape[3] % 2 == 0) {
    throw std::invalid_argument("identity_delta_init: needs [c,c,odd,odd] weights");
  }
  Tensor<T> w(shape);
  const std::int64_t c = shape[0], kh = shape[2], kw = shape[3];
  for (std::int64_t o = 0; o < c; ++o) {
    w[((o * c + o) * kh + kh / 2) * kw + kw / 2] = T(1);
  }
  return w;
}

/// Momentum SGD exactly as the recursion G = L*g + m*G_prev, param -= G.
/// The learning rate lives inside the recursion, so G literally unrolls to
/// L*(g_i + m*g_{i-1} + m^2*g_{i-2} + ...).
template <typename T>
struct SgdState {
  T learning_rate{};
  T momentum{};
  std::map<std::string, Tensor<T>> velocity;
};

template <typename T>
void sgd_momentum_step(Tensor<T>& param, const Tensor<T>& grad, const std::string& name,
                       SgdState<T>& state) {
  if (!param.same_shape(grad)) {
    throw std::invalid_argument("sgd: gradient shape " + grad.shape_str() +
                                " does not match parameter '" + name + "' " + param.shape_str());
  }
  if (!grad.all_finite()) {
    throw std::runtime_error("sgd: non-finite gradient in parameter '" + name + "'");
  }
  auto [it, fresh] = state.velocity.try_emplace(name, param.shape());
  Tensor<T>& vel = it->second;
  if (!fresh && !vel.same_shape(param)) {
    throw std::invalid_argument("sgd: stale velocity shape for parameter '" + name + "'");
  }
  const T lr = state.learning_rate, m = state.momentum;
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    vel[i] = lr * grad[i] + m * vel[i];
    param[i] -= vel[i];
  }
}

/// GEMS: renormalize a raw per-position gradient sum by the count of active
/// (strictly positive post-ReLU) positions instead of the full count. A
/// fully quiet map contributes nothing at all.
template <typename T>
Tensor<T> gems_normalize(const Tensor<T>& weight_grad_accum, std::int64_t active_count,
                         std::int64_t total_count) {
  if (active_count < 0 || active_count > total_count) {
    throw std::invalid_argument("gems_normalize: active count " + std::to_string(active_count) +
                                " outside [0, " + std::to_string(total_count) + "]");
  }
  Tensor<T> out(weight_grad_accum.shape());
  if (active_count == 0) return out;
  const T inv = T(1) / static_cast<T>(active_count);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = weight_grad_accum[i] * inv;
  return out;
}

/// Scale weights so their mean is exactly 1 (they sum to K).
template <typename T>
Tensor<T> normalize_class_weights(const Tensor<T>& w) {
  if (w.rank() != 1) throw std::invalid_argument("class weights must be rank 1");
  double sum = 0;
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    if (!(w[i] > T(0))) {
      throw std::invalid_argument("class weight " + std::to_string(i) + " is not positive");
    }
    sum += static_cast<double>(w[i]);
  }
  Tensor<T> out(w.shape());
  const double k = static_cast<double>(w.numel());
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(w[i]) * k / sum);
  }
  return out;
}

}  // namespace optim
}  // namespace agcn

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agcn/checkpoint.hpp"
#include "agcn/kernels.hpp"
#include "agcn/ops.hpp"
#include "agcn/optim.hpp"
#include "agcn/rng.hpp"
#include "agcn/tape.hpp"
#include "agcn/tensor.hpp"

namespace agcn {

enum class LayerKind { conv, pool, unpool };

struct LayerDesc {
  LayerKind kind = LayerKind::conv;
  std::string name;      // conv layers: parameter prefix
  int out_channels = 0;  // conv only
  int kernel = 3;        // conv only, square and odd (same padding)
  bool normed = true;    // conv: whether the run's norm mode applies here
  bool relu = true;      // conv: activation after the norm slot
};

/// Ordered layer list. encoder_decoder builds the toy shape: per level
/// conv-norm-relu x2 then pool, mirrored decoder with unpool, and a bare
/// 1x1 conv head mapping to class logits.
struct NetworkSpec {
  int in_channels = 3;
  int classes = 5;
  std::vector<LayerDesc> layers;

  static NetworkSpec encoder_decoder(int in_channels, int classes,
                                     const std::vector<int>& widths) {
    if (widths.empty()) throw std::invalid_argument("network: no encoder levels");
    if (classes < 2) throw std::invalid_argument("network: need at least 2 classes");
    NetworkSpec spec;
    spec.in_channels = in_channels;
    spec.classes = classes;
    const auto conv = [&](const std::string& name, int oc) {
      spec.layers.push_back({LayerKind::conv, name, oc, 3, true, true});
    };
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string lvl = std::to_string(i);
      conv("enc" + lvl + "a", widths[i]);
      conv("enc" + lvl + "b", widths[i]);
      spec.layers.push_back({LayerKind::pool, "pool" + lvl, 0, 0, false, false});
    }
    for (std::size_t i = widths.size(); i-- > 0;) {
      const std::string lvl = std::to_string(i);
      spec.layers.push_back({LayerKind::unpool, "unpool" + lvl, 0, 0, false, false});
      conv("dec" + lvl + "a", widths[i]);
      conv("dec" + lvl + "b", i > 0 ? widths[i - 1] : widths[0]);
    }
    spec.layers.push_back({LayerKind::conv, "head", classes, 1, false, false});
    return spec;
  }

  /// The default four-level net used by the trainer CLI and benchmarks.
  static NetworkSpec toy(int in_channels = 3, int classes = 5) {
    return encoder_decoder(in_channels, classes, {16, 32, 64, 64});
  }

  int pool_depth() const {
    int depth = 0;
    for (const LayerDesc& l : layers) {
      if (l.kind == LayerKind::pool) ++depth;
    }
    return depth;
  }

  void validate(std::int64_t h, std::int64_t w) const {
    if (in_channels < 1) throw std::invalid_argument("network: bad input channel count");
    if (layers.empty()) throw std::invalid_argument("network: empty layer list");
    int open_pools = 0, max_open = 0;
    std::map<std::string, int> seen;
    for (const LayerDesc& l : layers) {
      if (l.name.empty() || ++seen[l.name] > 1) {
        throw std::invalid_argument("network: layer names must be unique and non-empty");
      }
      switch (l.kind) {
        case LayerKind::conv:
          if (l.out_channels < 1) {
            throw std::invalid_argument("network: conv '" + l.name + "' has no output channels");
          }
          if (l.kernel < 1 || l.kernel % 2 == 0) {
            throw std::invalid_argument("network: conv '" + l.name +
                                        "' kernel must be odd for same padding");
          }
          break;
        case LayerKind::pool:
          ++open_pools;
          max_open = std::max(max_open, open_pools);
          break;
        case LayerKind::unpool:
          if (--open_pools < 0) {
            throw std::invalid_argument("network: unpool '" + l.name +
                                        "' has no matching pool before it");
          }
          break;
      }
    }
    if (open_pools != 0) {
      throw std::invalid_argument("network: pools and unpools do not pair up");
    }
    const std::int64_t factor = std::int64_t{1} << max_open;
    if (h % factor != 0 || w % factor != 0) {
      throw std::invalid_argument("network: input " + std::to_string(h) + "x" +
                                  std::to_string(w) + " not divisible by pooling factor " +
                                  std::to_string(factor));
    }
  }
};

template <typename T>
struct LambdaStats {
  std::string layer;
  T min{}, mean{}, max{};
};

/// Parameter store plus the forward recording that binds those parameters
/// onto a tape. Norm mode is fixed at construction; parameter names follow
/// "<layer>/W", "<layer>/lambda", ..., and their order is the checkpoint
/// order.
template <typename T>
class Network {
 public:
  static constexpr T kBnEps = static_cast<T>(1e-5);
  static constexpr T kBnEmaKeep = static_cast<T>(0.9);

  Network(NetworkSpec spec, NormMode mode, bool identity_init, const Rng& rng)
      : spec_(std::move(spec)), mode_(mode) {
    spec_.validate(std::int64_t{1} << spec_.pool_depth(), std::int64_t{1} << spec_.pool_depth());
    int in_ch = spec_.in_channels;
    bool after_pool = false;
    std::uint64_t stream = 0;
    for (const LayerDesc& l : spec_.layers) {
      if (l.kind != LayerKind::conv) {
        after_pool = true;
        continue;
      }
      Block b;
      b.desc = l;
      const std::vector<std::int64_t> wshape = {l.out_channels, in_ch, l.kernel, l.kernel};
      Rng wrng = rng.split(stream++);
      // identity start: centre-tap delta wherever the shape allows it, except
      // directly after a pooling step (and the head), which stay He
      const bool can_delta = in_ch == l.out_channels && l.kernel % 2 == 1;
      if (identity_init && can_delta && !after_pool && l.name != "head") {
        b.W = optim::identity_delta_init<T>(wshape);
      } else {
        b.W = optim::he_fan_in_init<T>(wshape, wrng);
      }
      if (l.normed && mode_ != NormMode::none) {
        const std::vector<std::int64_t> pshape = {l.out_channels};
        if (mode_ == NormMode::agc) {
          b.lambda = Tensor<T>(pshape);
          b.lambda.fill(T(1));
          b.gamma = Tensor<T>(pshape);
          b.gamma.fill(T(1));
          b.beta = Tensor<T>(pshape);
        } else {
          b.scale = Tensor<T>(pshape);
          b.scale.fill(T(1));
          b.shift = Tensor<T>(pshape);
          b.running_mean = Tensor<T>(pshape);
          b.running_var = Tensor<T>(pshape);
          b.running_var.fill(T(1));
        }
      }
      blocks_.push_back(std::move(b));
      in_ch = l.out_channels;
      after_pool = false;
    }
    if (blocks_.empty() || blocks_.back().desc.out_channels != spec_.classes) {
      throw std::invalid_argument("network: final conv must emit class logits");
    }
  }

  struct Binding {
    Val logits{-1};
    // trainable leaves in parameter order; gradients read back after backward
    std::vector<std::pair<std::string, Val>> trainable;
    // per relu'd conv layer: strictly-positive output count per channel and
    // the map x minibatch position total, for GEMS
    std::map<std::string, std::pair<std::vector<std::int64_t>, std::int64_t>> active;
  };

  /// Records one forward pass. images is consumed. training picks BN's batch
  /// stats path and updates running stats; count_active gathers GEMS counts.
  Binding forward(Tape<T>& tape, Tensor<T> images, bool training, bool count_active = false) {
    if (images.rank() != 4 || images.extent(1) != spec_.in_channels) {
      throw std::invalid_argument("network: expected images [n," +
                                  std::to_string(spec_.in_channels) + ",h,w], got " +
                                  images.shape_str());
    }
    spec_.validate(images.extent(2), images.extent(3));

    Binding bind;
    Val cur = tape.leaf(std::move(images));
    std::vector<std::shared_ptr<const IntTensor>> pool_indices;
    std::size_t bi = 0;
    for (const LayerDesc& l : spec_.layers) {
      switch (l.kind) {
        case LayerKind::pool: {
          ops::Pooled<T> p = ops::maxpool2x2(tape, cur);
          pool_indices.push_back(p.indices);
          cur = p.y;
          break;
        }
        case LayerKind::unpool: {
          cur = ops::unpool2x2(tape, cur, pool_indices.back());
          pool_indices.pop_back();
          break;
        }
        case LayerKind::conv: {
          Block& b = blocks_[bi++];
          const Val w = tape.leaf(b.W);
          bind.trainable.emplace_back(l.name + "/W", w);
          cur = ops::conv2d(tape, cur, w, Padding::same);
          if (l.normed && mode_ == NormMode::agc) {
            const Val lam = tape.leaf(b.lambda);
            const Val gam = tape.leaf(b.gamma);
            const Val bet = tape.leaf(b.beta);
            bind.trainable.emplace_back(l.name + "/lambda", lam);
            bind.trainable.emplace_back(l.name + "/gamma", gam);
            bind.trainable.emplace_back(l.name + "/beta", bet);
            cur = ops::agc(tape, cur, lam, gam, bet);
          } else if (l.normed && mode_ == NormMode::bn) {
            const Val sc = tape.leaf(b.scale);
            const Val sh = tape.leaf(b.shift);
            bind.trainable.emplace_back(l.name + "/scale", sc);
            bind.trainable.emplace_back(l.name + "/shift", sh);
            cur = training ? ops::batchnorm_train(tape, cur, sc, sh, b.running_mean,
                                                  b.running_var, kBnEps, kBnEmaKeep)
                           : ops::batchnorm_infer(tape, cur, sc, sh, b.running_mean,
                                                  b.running_var, kBnEps);
          }
          if (l.relu) {
            cur = ops::relu(tape, cur);
            if (count_active) {
              const Tensor<T>& y = tape.value(cur);
              const std::int64_t n = y.extent(0), c = y.extent(1);
              const std::int64_t map = y.extent(2) * y.extent(3);
              std::vector<std::int64_t> counts(static_cast<std::size_t>(c));
              kernels::count_active_per_channel(y.data(), n, c, map, counts.data());
              bind.active.emplace(l.name, std::make_pair(std::move(counts), n * map));
            }
          }
          break;
        }
      }
    }
    bind.logits = cur;
    return bind;
  }

  /// Checkpoint-ordered views of every tensor, running stats included.
  std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (Block& b : blocks_) {
      out.emplace_back(b.desc.name + "/W", &b.W);
      if (!b.desc.normed || mode_ == NormMode::none) continue;
      if (mode_ == NormMode::agc) {
        out.emplace_back(b.desc.name + "/lambda", &b.lambda);
        out.emplace_back(b.desc.name + "/gamma", &b.gamma);
        out.emplace_back(b.desc.name + "/beta", &b.beta);
      } else {
        out.emplace_back(b.desc.name + "/scale", &b.scale);
        out.emplace_back(b.desc.name + "/shift", &b.shift);
        out.emplace_back(b.desc.name + "/running_mean", &b.running_mean);
        out.emplace_back(b.desc.name + "/running_var", &b.running_var);
      }
    }
    return out;
  }

  Tensor<T>& param(const std::string& name) {
    for (auto& [pname, t] : named_params()) {
      if (pname == name) return *t;
    }
    throw std::invalid_argument("network: no parameter named '" + name + "'");
  }

  checkpoint::NamedTensors snapshot() {
    checkpoint::NamedTensors out;
    for (auto& [name, t] : named_params()) {
      TensorF f(t->shape());
      for (std::int64_t i = 0; i < t->numel(); ++i) f[i] = static_cast<float>((*t)[i]);
      out.emplace_back(name, std::move(f));
    }
    return out;
  }

  void load_snapshot(const checkpoint::NamedTensors& tensors) {
    auto params = named_params();
    if (tensors.size() != params.size()) {
      throw std::invalid_argument("checkpoint: expected " + std::to_string(params.size()) +
                                  " tensors, got " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, src] = tensors[i];
      auto& [want, dst] = params[i];
      if (name != want) {
        throw std::invalid_argument("checkpoint: tensor '" + name + "' where '" + want +
                                    "' was expected");
      }
      if (!(src.shape() == dst->shape())) {
        throw std::invalid_argument("checkpoint: shape mismatch for '" + name + "'");
      }
      for (std::int64_t j = 0; j < src.numel(); ++j) (*dst)[j] = static_cast<T>(src[j]);
    }
  }

  /// Per-AGC-layer lambda summary, input to output.
  std::vector<LambdaStats<T>> lambda_stats() const {
    if (mode_ != NormMode::agc) {
      throw std::logic_error("lambda_stats: network has no AGC layers (mode " +
                             norm_mode_name(mode_) + ")");
    }
    std::vector<LambdaStats<T>> out;
    for (const Block& b : blocks_) {
      if (!b.desc.normed) continue;
      LambdaStats<T> s;
      s.layer = b.desc.name;
      s.min = b.lambda[0];
      s.max = b.lambda[0];
      double sum = 0;
      for (std::int64_t i = 0; i < b.lambda.numel(); ++i) {
        s.min = std::min(s.min, b.lambda[i]);
        s.max = std::max(s.max, b.lambda[i]);
        sum += static_cast<double>(b.lambda[i]);
      }
      s.mean = static_cast<T>(sum / static_cast<double>(b.lambda.numel()));
      out.push_back(std::move(s));
    }
    return out;
  }

  const NetworkSpec& spec() const { return spec_; }
  NormMode mode() const { return mode_; }

  /// Conv layer names whose output passes through a ReLU, in order; the set
  /// GEMS renormalizes.
  std::vector<std::string> relu_conv_names() const {
    std::vector<std::string> out;
    for (const Block& b : blocks_) {
      if (b.desc.relu) out.push_back(b.desc.name);
    }
    return out;
  }

 private:
  struct Block {
    LayerDesc desc;
    Tensor<T> W;
    Tensor<T> lambda, gamma, beta;                         // agc
    Tensor<T> scale, shift, running_mean, running_var;     // bn
  };

  NetworkSpec spec_;
  NormMode mode_;
  std::vector<Block> blocks_;
};

}  // namespace agcn

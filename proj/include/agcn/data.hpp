#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "agcn/rng.hpp"
#include "agcn/tensor.hpp"

namespace agcn::data {

/// One labeled image: RGB in [0,1], every pixel carrying a class id < K.
struct Sample {
  TensorF image;     // [3,H,W]
  IntTensor labels;  // [H,W]
};

// The toy encoder/decoder pools four times, so extents must divide by 16.
inline constexpr int kPoolDivisor = 16;

struct DatasetSpec {
  int h = 64;
  int w = 64;
  int classes = 5;  // background + rectangle, disc, triangle, ring
  int n_train = 512;
  int n_val = 128;
  std::uint64_t seed = 7;
};

enum class ShapeKind { rectangle, disc, triangle, ring };

struct ShapeDesc {
  ShapeKind kind = ShapeKind::rectangle;
  std::int32_t class_id = 1;
  double cx = 0, cy = 0;   // centre, pixel units
  double sx = 0, sy = 0;   // half extents
  float color[3] = {0, 0, 0};
};

/// 0/1 occupancy mask of one shape on an h x w grid. Pure; the unit tests
/// pin shape geometry against this.
IntTensor rasterize(const ShapeDesc& desc, std::int64_t h, std::int64_t w);

/// Paint shapes over a textured background in order (later shapes win),
/// then apply the per-image brightness offset, ramp and pixel noise that
/// make normalization matter. rng drives only background/noise, not shapes.
Sample compose(const DatasetSpec& spec, const std::vector<ShapeDesc>& shapes, Rng& rng);

/// Random shape of the given kind for an h x w canvas.
ShapeDesc random_shape(ShapeKind kind, Rng& rng, std::int64_t h, std::int64_t w);

/// Deterministic (train, val) split for the spec. Same spec, same bits.
std::pair<std::vector<Sample>, std::vector<Sample>> generate(const DatasetSpec& spec);

/// Per-class pixel fraction over the whole set, summing to 1.
TensorD class_frequencies(const std::vector<Sample>& set, int classes);

/// ENET-style weights 1/ln(c + freq), renormalized to mean 1.
TensorD enet_class_weights(const TensorD& freqs, double c = 1.02);

void save_dataset(const std::string& path, const std::vector<Sample>& set, int classes);
std::pair<std::vector<Sample>, int> load_dataset(const std::string& path);

}  // namespace agcn::data

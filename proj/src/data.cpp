#include "agcn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "agcn/optim.hpp"

namespace agcn::data {

namespace {

bool inside(const ShapeDesc& d, double x, double y) {
  const double dx = x - d.cx, dy = y - d.cy;
  switch (d.kind) {
    case ShapeKind::rectangle:
      return std::abs(dx) <= d.sx && std::abs(dy) <= d.sy;
    case ShapeKind::disc:
      return (dx * dx) / (d.sx * d.sx) + (dy * dy) / (d.sy * d.sy) <= 1.0;
    case ShapeKind::triangle: {
      // isoceles, apex up: allowed half-width grows linearly from apex to base
      if (dy < -d.sy || dy > d.sy) return false;
      const double half = d.sx * (dy + d.sy) / (2.0 * d.sy);
      return std::abs(dx) <= half;
    }
    case ShapeKind::ring: {
      const double q = (dx * dx + dy * dy) / (d.sx * d.sx);
      return q <= 1.0 && q >= 0.55 * 0.55;
    }
  }
  return false;
}

constexpr std::array<std::array<float, 3>, 4> kShapeColor = {{
    {0.70f, 0.30f, 0.30f},  // rectangle
    {0.30f, 0.65f, 0.35f},  // disc
    {0.30f, 0.35f, 0.70f},  // triangle
    {0.70f, 0.65f, 0.30f},  // ring
}};

template <typename T>
void write_raw(std::ofstream& out, const T* p, std::size_t count) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* p, std::size_t count) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw std::runtime_error("dataset file truncated");
}

}  // namespace

IntTensor rasterize(const ShapeDesc& desc, std::int64_t h, std::int64_t w) {
  IntTensor mask({h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (inside(desc, static_cast<double>(x), static_cast<double>(y))) {
        mask.at({y, x}) = 1;
      }
    }
  }
  return mask;
}

ShapeDesc random_shape(ShapeKind kind, Rng& rng, std::int64_t h, std::int64_t w) {
  ShapeDesc d;
  d.kind = kind;
  d.class_id = static_cast<std::int32_t>(kind) + 1;
  const double m = static_cast<double>(std::min(h, w));
  d.cx = rng.uniform(0.18, 0.82) * static_cast<double>(w);
  d.cy = rng.uniform(0.18, 0.82) * static_cast<double>(h);
  d.sx = rng.uniform(0.10, 0.24) * m;
  d.sy = kind == ShapeKind::rectangle || kind == ShapeKind::disc ? rng.uniform(0.10, 0.24) * m
                                                                 : d.sx;
  const auto& base = kShapeColor[static_cast<std::size_t>(kind)];
  for (int ch = 0; ch < 3; ++ch) {
    d.color[ch] = base[static_cast<std::size_t>(ch)] +
                  static_cast<float>(rng.uniform(-0.06, 0.06));
  }
  return d;
}

Sample compose(const DatasetSpec& spec, const std::vector<ShapeDesc>& shapes, Rng& rng) {
  const std::int64_t h = spec.h, w = spec.w;
  Sample s{TensorF({3, h, w}), IntTensor({h, w})};

  float bg[3];
  for (int ch = 0; ch < 3; ++ch) {
    bg[ch] = 0.45f + static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  // one brightness story per image: offset plus a gentle diagonal ramp;
  // unnormalized nets have to absorb this shift the hard way
  const float offset = static_cast<float>(rng.uniform(-0.20, 0.20));
  const float ramp_x = static_cast<float>(rng.uniform(-0.12, 0.12));
  const float ramp_y = static_cast<float>(rng.uniform(-0.12, 0.12));

  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) s.image.at({ch, y, x}) = bg[ch];
    }
  }
  for (const ShapeDesc& d : shapes) {
    if (d.class_id < 0 || d.class_id >= spec.classes) {
      throw std::invalid_argument("compose: shape class id out of range");
    }
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        if (!inside(d, static_cast<double>(x), static_cast<double>(y))) continue;
        s.labels.at({y, x}) = d.class_id;
        for (int ch = 0; ch < 3; ++ch) s.image.at({ch, y, x}) = d.color[ch];
      }
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const float shade = offset +
                          ramp_x * (static_cast<float>(x) / static_cast<float>(w) - 0.5f) +
                          ramp_y * (static_cast<float>(y) / static_cast<float>(h) - 0.5f);
      for (int ch = 0; ch < 3; ++ch) {
        float v = s.image.at({ch, y, x}) + shade +
                  static_cast<float>(rng.uniform(-0.05, 0.05));
        s.image.at({ch, y, x}) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return s;
}

std::pair<std::vector<Sample>, std::vector<Sample>> generate(const DatasetSpec& spec) {
  if (spec.h % kPoolDivisor != 0 || spec.w % kPoolDivisor != 0) {
    throw std::invalid_argument("dataset extents must divide by " +
                                std::to_string(kPoolDivisor) + ", got " +
                                std::to_string(spec.h) + "x" + std::to_string(spec.w));
  }
  if (spec.classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
  if (spec.n_train < 0 || spec.n_val < 0) throw std::invalid_argument("negative set size");

  const Rng root(spec.seed);
  const int shape_kinds = std::min(4, spec.classes - 1);
  const auto make = [&](std::uint64_t stream) {
    Rng rng = root.split(stream);
    std::vector<int> kinds(static_cast<std::size_t>(shape_kinds));
    for (int i = 0; i < shape_kinds; ++i) kinds[static_cast<std::size_t>(i)] = i;
    rng.shuffle(kinds.begin(), kinds.end());
    const int count = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                              std::max(1, shape_kinds - 1))));
    std::vector<ShapeDesc> shapes;
    for (int i = 0; i < std::min(count, shape_kinds); ++i) {
      shapes.push_back(random_shape(static_cast<ShapeKind>(kinds[static_cast<std::size_t>(i)]),
                                    rng, spec.h, spec.w));
    }
    return compose(spec, shapes, rng);
  };

  std::vector<Sample> train, val;
  train.reserve(static_cast<std::size_t>(spec.n_train));
  val.reserve(static_cast<std::size_t>(spec.n_val));
  for (int i = 0; i < spec.n_train; ++i) train.push_back(make(static_cast<std::uint64_t>(i)));
  for (int i = 0; i < spec.n_val; ++i) {
    val.push_back(make((std::uint64_t{1} << 32) + static_cast<std::uint64_t>(i)));
  }
  return {std::move(train), std::move(val)};
}

TensorD class_frequencies(const std::vector<Sample>& set, int classes) {
  if (set.empty()) throw std::invalid_argument("class_frequencies: empty set");
  TensorD freq({classes});
  double total = 0;
  for (const Sample& s : set) {
    for (std::int64_t i = 0; i < s.labels.numel(); ++i) {
      const std::int32_t lab = s.labels[i];
      if (lab < 0 || lab >= classes) {
        throw std::invalid_argument("class_frequencies: label " + std::to_string(lab) +
                                    " out of range");
      }
      freq[lab] += 1.0;
      total += 1.0;
    }
  }
  for (std::int64_t k = 0; k < freq.numel(); ++k) freq[k] /= total;
  return freq;
}

TensorD enet_class_weights(const TensorD& freqs, double c) {
  TensorD w(freqs.shape());
  for (std::int64_t k = 0; k < w.numel(); ++k) {
    w[k] = 1.0 / std::log(c + freqs[k]);
  }
  return optim::normalize_class_weights(w);
}

void save_dataset(const std::string& path, const std::vector<Sample>& set, int classes) {
  if (classes < 2 || classes > 255) {
    throw std::invalid_argument("save_dataset: classes must fit in a byte");
  }
  if (set.empty()) throw std::invalid_argument("save_dataset: empty set");
  const std::int64_t h = set[0].image.extent(1), w = set[0].image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot write '" + path + "'");
  const std::uint32_t header[4] = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w),
                                   static_cast<std::uint32_t>(classes),
                                   static_cast<std::uint32_t>(set.size())};
  write_raw(out, header, 4);
  for (const Sample& s : set) {
    if (s.image.extent(1) != h || s.image.extent(2) != w) {
      throw std::invalid_argument("save_dataset: inconsistent extents");
    }
    write_raw(out, s.image.data(), static_cast<std::size_t>(s.image.numel()));
  }
  for (const Sample& s : set) {
    std::vector<std::uint8_t> packed(static_cast<std::size_t>(s.labels.numel()));
    for (std::int64_t i = 0; i < s.labels.numel(); ++i) {
      const std::int32_t lab = s.labels[i];
      if (lab < 0 || lab >= classes) {
        throw std::invalid_argument("save_dataset: label out of range");
      }
      packed[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(lab);
    }
    write_raw(out, packed.data(), packed.size());
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for '" + path + "'");
}

std::pair<std::vector<Sample>, int> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open '" + path + "'");
  std::uint32_t header[4];
  read_raw(in, header, 4);
  const std::int64_t h = header[0], w = header[1];
  const int classes = static_cast<int>(header[2]);
  const std::int64_t count = header[3];
  if (h < 1 || w < 1 || classes < 2 || count < 0) {
    throw std::runtime_error("load_dataset: corrupt header in '" + path + "'");
  }
  std::vector<Sample> set(static_cast<std::size_t>(count));
  for (auto& s : set) {
    s.image = TensorF({3, h, w});
    read_raw(in, s.image.data(), static_cast<std::size_t>(s.image.numel()));
  }
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(h * w));
  for (auto& s : set) {
    read_raw(in, packed.data(), packed.size());
    s.labels = IntTensor({h, w});
    for (std::int64_t i = 0; i < s.labels.numel(); ++i) {
      const std::uint8_t lab = packed[static_cast<std::size_t>(i)];
      if (lab >= classes) throw std::runtime_error("load_dataset: label out of range");
      s.labels[i] = lab;
    }
  }
  return {std::move(set), classes};
}

}  // namespace agcn::data

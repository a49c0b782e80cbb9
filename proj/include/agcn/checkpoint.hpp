#pragma once

#include <string>
#include <utility>
#include <vector>

#include "agcn/tensor.hpp"

namespace agcn::checkpoint {

/// Ordered named tensors; order is part of the byte format, so a fixed
/// parameter order gives byte-identical files for identical values.
using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

/// Little-endian binary: "AGCN", u32 version (1), u32 count, then per tensor
/// u16 name length, name bytes, u8 rank, u32 extents, raw real32 payload.
/// save followed by load reproduces every tensor bit for bit.
void save(const std::string& path, const NamedTensors& tensors);
NamedTensors load(const std::string& path);

}  // namespace agcn::checkpoint

#pragma once

// Flat tensor container:
//
//   OCLW1
//   <tensor count>
//   <name> <rank> <dim_0> ... <dim_{rank-1}> <payload byte offset>
//   ...
//   END
//   <little-endian float64 payload>
//
// Offsets count from the first payload byte.

#include "oclbench/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oclb {

struct WeightEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> weights_encode(const NamedTensors& tensors);
// Header only; checks every tensor lies inside the payload.
std::vector<WeightEntry> weights_header(std::span<const std::uint8_t> bytes);
NamedTensors weights_decode(std::span<const std::uint8_t> bytes);

NamedTensors weights_read(const std::filesystem::path& path);
void weights_write(const std::filesystem::path& path, const NamedTensors& tensors);

// name,shape,offset table of the file at `path`.
std::string inspect_weights(const std::filesystem::path& path);

} // namespace oclb

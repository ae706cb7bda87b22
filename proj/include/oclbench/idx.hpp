#pragma once

// IDX container (the MNIST distribution format): two zero bytes, a type code,
// the number of dimensions, that many big-endian u32 extents, then the payload.
// Only unsigned-byte payloads (type 0x08) are accepted.

#include "oclbench/stream.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace oclb {

struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;
};

IdxArray idx_parse(std::span<const std::uint8_t> bytes);
IdxArray idx_read(const std::filesystem::path& path);
std::vector<std::uint8_t> idx_encode(const IdxArray& array);

// Images [n x ...] and labels [n]; pixels scaled by 1/255. classes is
// max(label) + 1.
Dataset idx_dataset(const IdxArray& images, const IdxArray& labels);
Dataset idx_load(const std::filesystem::path& images, const std::filesystem::path& labels);

} // namespace oclb

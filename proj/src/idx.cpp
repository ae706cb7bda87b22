#include "oclbench/idx.hpp"

#include "oclbench/error.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace oclb {

namespace {
constexpr std::uint8_t kUnsignedByte = 0x08;
}

IdxArray idx_parse(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError("IDX header truncated", bytes.size());
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic", 0);
    if (bytes[2] != kUnsignedByte)
        throw FormatError("unsupported IDX element type " + std::to_string(bytes[2]), 2);
    const std::size_t rank = bytes[3];
    if (rank == 0) throw FormatError("IDX array has zero dimensions", 3);

    IdxArray out;
    std::size_t offset = 4;
    std::size_t expected = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        if (offset + 4 > bytes.size()) throw FormatError("IDX dimension list truncated", offset);
        const std::uint32_t extent = (std::uint32_t{bytes[offset]} << 24) |
                                     (std::uint32_t{bytes[offset + 1]} << 16) |
                                     (std::uint32_t{bytes[offset + 2]} << 8) |
                                     std::uint32_t{bytes[offset + 3]};
        out.dims.push_back(extent);
        expected *= extent;
        offset += 4;
    }
    const std::size_t have = bytes.size() - offset;
    if (have != expected)
        throw FormatError("IDX payload holds " + std::to_string(have) +
                              " bytes but dimensions need " + std::to_string(expected),
                          offset + std::min(have, expected));
    out.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return out;
}

IdxArray idx_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open IDX file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return idx_parse(bytes);
}

std::vector<std::uint8_t> idx_encode(const IdxArray& array) {
    std::vector<std::uint8_t> out{0, 0, kUnsignedByte, static_cast<std::uint8_t>(array.dims.size())};
    for (std::uint32_t d : array.dims) {
        out.push_back(static_cast<std::uint8_t>(d >> 24));
        out.push_back(static_cast<std::uint8_t>(d >> 16));
        out.push_back(static_cast<std::uint8_t>(d >> 8));
        out.push_back(static_cast<std::uint8_t>(d));
    }
    out.insert(out.end(), array.payload.begin(), array.payload.end());
    return out;
}

Dataset idx_dataset(const IdxArray& images, const IdxArray& labels) {
    if (labels.dims.size() != 1)
        throw ConfigError("IDX labels must be one-dimensional");
    const std::size_t n = images.dims.at(0);
    if (labels.dims[0] != n)
        throw ConfigError("IDX image count " + std::to_string(n) + " differs from label count " +
                          std::to_string(labels.dims[0]));
    Dataset d;
    d.feature_dim = 1;
    for (std::size_t k = 1; k < images.dims.size(); ++k) d.feature_dim *= images.dims[k];
    d.features.reserve(images.payload.size());
    for (std::uint8_t px : images.payload) d.features.push_back(static_cast<double>(px) / 255.0);
    int max_label = -1;
    for (std::uint8_t y : labels.payload) {
        d.labels.push_back(y);
        max_label = std::max(max_label, static_cast<int>(y));
    }
    d.classes = static_cast<std::size_t>(max_label + 1);
    return d;
}

Dataset idx_load(const std::filesystem::path& images, const std::filesystem::path& labels) {
    return idx_dataset(idx_read(images), idx_read(labels));
}

} // namespace oclb

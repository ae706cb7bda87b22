#include "oclbench/weightfile.hpp"

#include "oclbench/error.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace oclb {

namespace {

constexpr std::string_view kMagic = "OCLW1";

static_assert(std::endian::native == std::endian::little,
              "weight payloads are little-endian float64");

struct LineReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    // Returns the next '\n'-terminated line and its starting offset.
    std::pair<std::string, std::size_t> next() {
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        if (pos == bytes.size()) throw FormatError("weight header truncated", start);
        std::string line(reinterpret_cast<const char*>(bytes.data() + start), pos - start);
        ++pos;
        return {std::move(line), start};
    }
};

std::vector<std::string> split_words(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::size_t parse_count(const std::string& word, std::size_t offset) {
    std::size_t v = 0;
    const auto* end = word.data() + word.size();
    const auto [p, ec] = std::from_chars(word.data(), end, v);
    if (ec != std::errc() || p != end)
        throw FormatError("expected a non-negative integer, got '" + word + "'", offset);
    return v;
}

struct Parsed {
    std::vector<WeightEntry> entries;
    std::size_t payload_start = 0;
};

Parsed parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() ||
        std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw FormatError("bad weight-file magic (expected OCLW1)", 0);
    LineReader r{bytes};
    if (auto [magic, at] = r.next(); magic != kMagic) throw FormatError("bad weight-file magic", at);

    auto [count_line, count_at] = r.next();
    const std::size_t count = parse_count(count_line, count_at);
    Parsed out;
    for (std::size_t i = 0; i < count; ++i) {
        auto [line, at] = r.next();
        const auto words = split_words(line);
        if (words.size() < 3) throw FormatError("malformed tensor entry '" + line + "'", at);
        WeightEntry e;
        e.name = words[0];
        const std::size_t rank = parse_count(words[1], at);
        if (words.size() != rank + 3)
            throw FormatError("tensor '" + e.name + "' declares rank " + std::to_string(rank) +
                                  " but lists " + std::to_string(words.size() - 3) + " dims",
                              at);
        for (std::size_t d = 0; d < rank; ++d) e.shape.push_back(parse_count(words[2 + d], at));
        e.offset = parse_count(words.back(), at);
        out.entries.push_back(std::move(e));
    }
    if (auto [end, at] = r.next(); end != "END") throw FormatError("expected END, got '" + end + "'", at);
    out.payload_start = r.pos;

    const std::size_t payload = bytes.size() - out.payload_start;
    for (const auto& e : out.entries) {
        const std::size_t need = shape_size(e.shape) * sizeof(double);
        if (e.offset > payload || need > payload - e.offset)
            throw FormatError("tensor '" + e.name + "' extends past the end of the payload",
                              out.payload_start + e.offset);
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open weight file " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

std::vector<std::uint8_t> weights_encode(const NamedTensors& tensors) {
    std::ostringstream head;
    head << kMagic << '\n' << tensors.size() << '\n';
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
            throw std::invalid_argument("tensor name '" + name + "' must be a single word");
        head << name << ' ' << t.rank();
        for (std::size_t d : t.shape()) head << ' ' << d;
        head << ' ' << offset << '\n';
        offset += t.size() * sizeof(double);
    }
    head << "END\n";
    const std::string h = head.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : tensors) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
        out.insert(out.end(), p, p + t.size() * sizeof(double));
    }
    return out;
}

std::vector<WeightEntry> weights_header(std::span<const std::uint8_t> bytes) {
    return parse_header(bytes).entries;
}

NamedTensors weights_decode(std::span<const std::uint8_t> bytes) {
    const Parsed p = parse_header(bytes);
    NamedTensors out;
    for (const auto& e : p.entries) {
        std::vector<double> data(shape_size(e.shape));
        std::memcpy(data.data(), bytes.data() + p.payload_start + e.offset,
                    data.size() * sizeof(double));
        try {
            out.emplace_back(e.name, Tensor(e.shape, std::move(data)));
        } catch (const std::domain_error&) {
            throw FormatError("tensor '" + e.name + "' holds non-finite values",
                              p.payload_start + e.offset);
        }
    }
    return out;
}

NamedTensors weights_read(const std::filesystem::path& path) { return weights_decode(read_bytes(path)); }

void weights_write(const std::filesystem::path& path, const NamedTensors& tensors) {
    const auto bytes = weights_encode(tensors);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write weight file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string inspect_weights(const std::filesystem::path& path) {
    const auto entries = weights_header(read_bytes(path));
    std::ostringstream os;
    os << "name,shape,offset\n";
    for (const auto& e : entries) os << e.name << ',' << shape_string(e.shape) << ',' << e.offset << '\n';
    return os.str();
}

} // namespace oclb

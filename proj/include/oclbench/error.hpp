#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oclb {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition (non-scalar loss, empty recorder, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Label outside [0, C).
class LabelError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Malformed binary container. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

} // namespace oclb

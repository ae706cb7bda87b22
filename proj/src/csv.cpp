#include "oclbench/csv.hpp"

#include <charconv>
#include <stdexcept>

namespace oclb {

std::string format_real(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    if (res.ec != std::errc{}) throw std::runtime_error("format_real: conversion failed");
    return std::string(buf, res.ptr);
}

} // namespace oclb

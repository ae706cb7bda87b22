#pragma once

#include <string>

namespace oclb {

// Shortest decimal that round-trips to the same double (std::to_chars).
std::string format_real(double value);

} // namespace oclb

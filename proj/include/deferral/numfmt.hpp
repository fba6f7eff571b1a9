#pragma once

// Locale-independent number formatting shared by config serialization and reports.

#include <charconv>
#include <cstdint>
#include <string>
#include <system_error>

namespace deferral {

// Shortest representation that round-trips to the same double.
inline std::string format_full(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc{}) return "nan";
    return std::string(buf, end);
}

inline std::string format_fixed(double value, int decimals) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, decimals);
    if (ec != std::errc{}) return "nan";
    std::string out(buf, end);
    // Avoid "-0.0" when a tiny negative rounds to zero.
    if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) out.erase(0, 1);
    return out;
}

}  // namespace deferral

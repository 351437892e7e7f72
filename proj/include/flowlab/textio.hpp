#pragma once

#include <cstdio>
#include <string>

namespace flowlab {

/// Shortest round-trippable decimal form of a double; every artifact file
/// uses this so rewrites are byte-stable.
inline std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace flowlab
